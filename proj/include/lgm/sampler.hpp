#pragma once

#include "lgm/engine.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lgm {

/// One joint draw: free hyperparameters on the internal scale and the latent field.
struct JointDraw {
    int config = 0;
    Vector theta;
    Vector x;
};

/// Joint draws from the grid mixture. Draw i uses Rng(seed, i), so the result does not
/// depend on `threads`. Throws ConfigNotStored unless the fit kept its configurations.
std::vector<JointDraw> posterior_sample(int n, const FitResult& fit, std::uint64_t seed, int threads = 1);

/// Hyperparameter draws (rows) on the internal or natural scale. A grid point is chosen by
/// weight, then moved within its cell by uniform-width Gaussian noise in z (sd dz/sqrt(12),
/// or 1 for a single-point grid). `perturb = false` returns the grid points themselves.
Matrix hyperpar_sample(int n, const FitResult& fit, bool intern, std::uint64_t seed, bool perturb = true);

/// Labeled view of a draw handed to selector functions.
struct DrawView {
    const JointDraw& draw;
    const FitResult& fit;

    /// Block of the latent field by component id, "beta"/"x" for the fixed effects, or a
    /// fixed-effect name such as "(Intercept)".
    Vector latent(const std::string& name) const;
    /// Natural-scale hyperparameter by label.
    double hyper(const std::string& label) const;
};

/// Selected latent block per draw (rows = draws).
Matrix posterior_sample_eval(const std::string& selector, const std::vector<JointDraw>& samples,
                             const FitResult& fit);
/// Arbitrary function per draw, one output row per draw.
std::vector<std::vector<double>> posterior_sample_eval(
    const std::function<std::vector<double>(const DrawView&)>& f, const std::vector<JointDraw>& samples,
    const FitResult& fit);

}  // namespace lgm
