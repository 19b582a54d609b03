#pragma once

#include "lgm/marginals.hpp"
#include "lgm/model.hpp"
#include "lgm/sparse.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lgm {

struct EngineOptions {
    double dz = 0.75;
    double diff_logdens = 3.0;
    int threads = 1;
    /// Newton steps are multiplied by this before step halving.
    double newton_step = 1.0;
    double curvature_floor = 1e-8;
    double jitter_scale = 1.0;
    double grad_step = 0.005;
    double hess_step = 0.01;
    bool start_at_prior_median = false;
    int max_newton = 50;
    int max_bfgs = 100;
    /// Points per latent/fitted marginal grid.
    int marginal_points = 75;
    /// Shift each per-theta Gaussian from the conditional mode towards the conditional mean
    /// with the third-order Laplace term; no effect on gaussian likelihoods.
    bool mean_correction = true;

    /// The conservative settings used for the automatic retry.
    EngineOptions safe_variant() const;
};

/// Gaussian approximation of x | theta, y at the conditional mode.
struct GaussianApprox {
    Vector theta;
    Vector x_mode;
    Vector eta;
    /// Factor of P = Q + A^T diag(h) A.
    CholFactor factor;
    ConstraintSystem constraints;
    /// Constrained marginal variances of x.
    Vector diag_var;
    double loglik = 0.0;
    /// -1/2 x^T Q x at the mode.
    double prior_quadratic = 0.0;
    /// 1/2 log|Q| + 1/2 log|C Q^-1 C^T|.
    double half_logdet_Q = 0.0;
    /// 1/2 log|P| + 1/2 log|C P^-1 C^T|.
    double half_logdet_P = 0.0;
    double log_prior_theta = 0.0;
    double log_post = 0.0;
    int iterations = 0;
};

struct ModeResult {
    Vector theta;
    /// Conditional mode of x at theta; warm start for later evaluations.
    Vector x_mode;
    /// Negative Hessian of the log-posterior, projected to SPD.
    Matrix H;
    double log_post = 0.0;
    int iterations = 0;
    int evaluations = 0;
};

struct GridPoint {
    Vector theta;
    Vector z;
    double log_post = 0.0;
    double weight = 0.0;
};

struct ThetaGrid {
    Vector mode;
    Matrix H;
    /// Eigen-decomposition of H = V diag(lambda) V^T.
    Matrix V;
    Vector lambda;
    double dz = 0.75;
    std::vector<GridPoint> points;

    /// theta(z) = mode + V diag(lambda^-1/2) z
    Vector theta_at(const Vector& z) const;
};

struct SummaryRow {
    std::string name;
    double mean = 0, sd = 0, q025 = 0, q50 = 0, q975 = 0, mode = 0, kld = 0;
};

struct RandomSummary {
    std::string component;
    std::vector<SummaryRow> rows;
    std::vector<Marginal> marginals;
};

struct Diagnostics {
    double mlik = 0.0;
    std::optional<double> dic, p_dic, mean_deviance, deviance_of_mean;
    std::optional<double> waic, p_waic;
    /// Per observation; NaN for missing responses.
    std::vector<double> cpo;
    std::vector<bool> cpo_failure;
};

/// Factor and mean of one grid point, kept for joint sampling.
struct GridConfig {
    Vector theta;
    double weight = 0.0;
    Vector x_mean;
    CholFactor factor;
};

struct FitResult {
    std::vector<SummaryRow> fixed;
    std::vector<Marginal> fixed_marginals;
    std::vector<RandomSummary> random;
    std::vector<SummaryRow> hyperpar;
    std::vector<Marginal> hyperpar_marginals;  // natural scale
    std::vector<Marginal> hyperpar_marginals_internal;
    std::vector<SummaryRow> fitted;
    std::vector<Marginal> fitted_marginals;
    Diagnostics diagnostics;
    ModeResult mode;
    ThetaGrid grid;
    std::vector<GridConfig> configs;
    bool config_stored = false;
    bool used_safe_mode = false;
    std::vector<std::string> theta_labels;
    std::vector<Transform> theta_transforms;
    LatentLayout layout;
    Matrix constraints;
    double seconds = 0.0;
};

/// The nested Laplace pipeline for one model.
class Engine {
public:
    Engine(const Model& model, EngineOptions options = {});

    const Model& model() const { return model_; }
    const EngineOptions& options() const { return opts_; }

    /// Newton iteration for the conditional mode of x; `x_start` warm-starts it.
    /// Marginal variances are skipped when `variances` is false.
    GaussianApprox gaussian_approximation(const Vector& theta, const Vector* x_start = nullptr,
                                          bool variances = true) const;
    double log_posterior_theta(const Vector& theta) const;

    ModeResult find_mode() const;
    ThetaGrid build_grid(const ModeResult& mode) const;
    /// Runs the whole pipeline.
    FitResult run() const;

private:
    struct Evaluation {
        double log_post;
        Vector x_mode;
    };
    /// log-posterior, or -inf when the point cannot be evaluated.
    Evaluation evaluate(const Vector& theta, const Vector* x_start) const;
    std::vector<Evaluation> evaluate_all(const std::vector<Vector>& thetas, const Vector* x_start) const;
    Matrix hessian(const Vector& theta, double log_post, const Vector& x_start) const;

    const Model& model_;
    EngineOptions opts_;
};

struct FitOptions {
    int threads = 1;
    /// Overrides the model's "safe" flag when set.
    std::optional<bool> safe;
};

/// Fits `spec` to `data`; on a numerical failure retries once with conservative settings
/// (when safe), then throws FitFailed.
FitResult fit(const ModelSpec& spec, const DataTable& data, const FitOptions& options = {});
FitResult fit(const Model& model, const EngineOptions& options, bool safe = true);

/// Latent element label (e.g. "idarea[3]") by global index.
std::string latent_label(const LatentLayout& layout, int index);

/// Nodes and weights of the n-point Gauss-Hermite rule for a standard normal.
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace lgm
