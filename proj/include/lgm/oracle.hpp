#pragma once

#include "lgm/model.hpp"
#include "lgm/sparse.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lgm::oracle {

/// Closed-form posterior of beta ~ N(0, prior_prec^-1), y | beta ~ N(X beta, 1/noise_prec).
struct ConjugateResult {
    Vector mean;
    Matrix covariance;
    double log_evidence = 0.0;
};

ConjugateResult conjugate_gaussian(const Matrix& X, const Vector& y, const Matrix& prior_prec, double noise_prec);
ConjugateResult conjugate_gaussian(const Matrix& X, const Vector& y, const Vector& prior_prec_diag,
                                   double noise_prec);

/// Brute-force posterior on a tensor grid over (x, theta); at most three dimensions in total.
struct DenseGridResult {
    std::vector<std::string> labels;  // latent labels, then free hyperparameters (internal)
    std::vector<Vector> grid;         // abscissae per dimension
    std::vector<Vector> density;      // normalized marginal density per dimension
    Vector mean;
    Vector sd;
};

DenseGridResult dense_grid_posterior(const Model& model, int points = 200, double half_width_sd = 8.0);

struct McmcOptions {
    /// Iterations discarded (and used for proposal adaptation); default n_iter / 10.
    int burn_in = -1;
    /// Stored-chain thinning; default keeps about 10^4 rows.
    int thin = -1;
    int batches = 50;
};

/// Componentwise adaptive random-walk Metropolis over (x, theta) on the same unnormalized
/// posterior the engine approximates. Linear constraints are respected by moving along
/// projected coordinate directions.
struct McmcResult {
    std::vector<std::string> labels;  // latent, then free hyperparameters (internal)
    Vector mean;
    Vector sd;
    /// Batch-means Monte Carlo standard errors.
    Vector mcse;
    Vector acceptance;
    /// Thinned post-burn-in chain, one row per stored iteration.
    Matrix chain;
    double seconds = 0.0;
};

McmcResult metropolis_lgm(const Model& model, int n_iter, std::uint64_t seed, const McmcOptions& options = {});

/// Chain dump with a header row of labels.
std::string format_chain_csv(const McmcResult& result);

}  // namespace lgm::oracle
