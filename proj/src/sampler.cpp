#include "lgm/sampler.hpp"

#include "lgm/errors.hpp"
#include "lgm/rng.hpp"
#include "parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace lgm {

namespace {

/// Index k with probability weights[k], from one uniform.
int pick(const std::vector<double>& cumulative, double u) {
    const double target = u * cumulative.back();
    for (std::size_t k = 0; k < cumulative.size(); ++k)
        if (target < cumulative[k]) return static_cast<int>(k);
    return static_cast<int>(cumulative.size()) - 1;
}

}  // namespace

std::vector<JointDraw> posterior_sample(int n, const FitResult& fit, std::uint64_t seed, int threads) {
    if (!fit.config_stored || fit.configs.empty()) throw ConfigNotStored();
    const auto& cfg = fit.configs;
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& c : cfg) cum.push_back(acc += c.weight);
    std::vector<ConstraintSystem> cs(cfg.size());
    if (fit.constraints.rows() > 0)
        for (std::size_t k = 0; k < cfg.size(); ++k) cs[k] = ConstraintSystem(cfg[k].factor, fit.constraints);
    const Vector e = Vector::Zero(fit.constraints.rows());

    std::vector<JointDraw> out(static_cast<std::size_t>(std::max(n, 0)));
    detail::parallel_for(n, threads, [&](int i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        const int k = pick(cum, rng.uniform());
        JointDraw d;
        d.config = k;
        d.theta = cfg[k].theta;
        d.x = sample_canonical(cfg[k].factor, cfg[k].x_mean, rng);
        if (!cs[k].empty()) d.x = cs[k].correct(d.x, e);
        out[i] = std::move(d);
    });
    return out;
}

Matrix hyperpar_sample(int n, const FitResult& fit, bool intern, std::uint64_t seed, bool perturb) {
    const auto& g = fit.grid;
    const int p = static_cast<int>(g.mode.size());
    Matrix out(std::max(n, 0), p);
    if (p == 0) return out;
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& pt : g.points) cum.push_back(acc += pt.weight);
    const double noise = g.points.size() == 1 ? 1.0 : g.dz / std::sqrt(12.0);
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        const int k = pick(cum, rng.uniform());
        Vector z = g.points[k].z;
        if (perturb)
            for (int j = 0; j < p; ++j) z(j) += noise * rng.normal();
        const Vector th = perturb ? g.theta_at(z) : g.points[k].theta;
        for (int j = 0; j < p; ++j) out(i, j) = intern ? th(j) : from_internal(fit.theta_transforms[j], th(j));
    }
    return out;
}

Vector DrawView::latent(const std::string& name) const {
    const auto [offset, length] = fit.layout.range(name);
    if (offset < 0) throw std::invalid_argument("unknown latent block '" + name + "'");
    return draw.x.segment(offset, length);
}

double DrawView::hyper(const std::string& label) const {
    for (std::size_t j = 0; j < fit.theta_labels.size(); ++j)
        if (fit.theta_labels[j] == label) return from_internal(fit.theta_transforms[j], draw.theta(j));
    throw std::invalid_argument("unknown hyperparameter '" + label + "'");
}

Matrix posterior_sample_eval(const std::string& selector, const std::vector<JointDraw>& samples,
                             const FitResult& fit) {
    const auto [offset, length] = fit.layout.range(selector);
    if (offset < 0) throw std::invalid_argument("unknown latent block '" + selector + "'");
    Matrix out(static_cast<int>(samples.size()), length);
    for (std::size_t i = 0; i < samples.size(); ++i) out.row(static_cast<int>(i)) = samples[i].x.segment(offset, length);
    return out;
}

std::vector<std::vector<double>> posterior_sample_eval(
    const std::function<std::vector<double>(const DrawView&)>& f, const std::vector<JointDraw>& samples,
    const FitResult& fit) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const auto& d : samples) out.push_back(f(DrawView{d, fit}));
    return out;
}

}  // namespace lgm
