#include "lgm/engine.hpp"

#include "lgm/errors.hpp"
#include "parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace lgm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v) {
    double mx = kNegInf;
    for (double a : v) mx = std::max(mx, a);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double a : v) s += std::exp(a - mx);
    return mx + std::log(s);
}

double normal_pdf(double x, double mu, double sd) {
    const double z = (x - mu) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

double normal_logpdf(double x, double mu, double sd) {
    const double z = (x - mu) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Mixture of Gaussians with weights w.
struct Mixture {
    const std::vector<double>* w;
    std::vector<double> mu, sd;

    double pdf(double x) const {
        double s = 0.0;
        for (std::size_t k = 0; k < mu.size(); ++k) s += (*w)[k] * normal_pdf(x, mu[k], sd[k]);
        return s;
    }
    double mean() const {
        double s = 0.0;
        for (std::size_t k = 0; k < mu.size(); ++k) s += (*w)[k] * mu[k];
        return s;
    }
    double variance(double m) const {
        double s = 0.0;
        for (std::size_t k = 0; k < mu.size(); ++k) s += (*w)[k] * (sd[k] * sd[k] + (mu[k] - m) * (mu[k] - m));
        return std::max(0.0, s);
    }
};

bool is_numerical_failure(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const NotPositiveDefinite&) {
        return true;
    } catch (const SingularConstraint&) {
        return true;
    } catch (const NonConvergence&) {
        return true;
    } catch (const std::domain_error&) {
        return true;
    } catch (...) {
        return false;
    }
}

}  // namespace

void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials
    Matrix J = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    nodes.resize(static_cast<std::size_t>(n));
    weights.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        nodes[k] = es.eigenvalues()(k);
        const double v = es.eigenvectors()(0, k);
        weights[k] = v * v;
    }
    // exact symmetry
    for (int k = 0; k < n / 2; ++k) {
        const double a = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -a;
        nodes[n - 1 - k] = a;
        const double w = 0.5 * (weights[k] + weights[n - 1 - k]);
        weights[k] = weights[n - 1 - k] = w;
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
}

EngineOptions EngineOptions::safe_variant() const {
    EngineOptions o = *this;
    o.newton_step = 0.5 * newton_step;
    o.curvature_floor = std::max(curvature_floor, 1e-4);
    o.jitter_scale = 10.0 * jitter_scale;
    o.start_at_prior_median = true;
    o.grad_step = 0.5 * grad_step;
    o.hess_step = 0.5 * hess_step;
    return o;
}

Vector ThetaGrid::theta_at(const Vector& z) const {
    if (z.size() == 0) return mode;
    return mode + V * (lambda.cwiseSqrt().cwiseInverse().asDiagonal() * z);
}

std::string latent_label(const LatentLayout& layout, int index) {
    if (index >= layout.beta_offset && index < layout.beta_offset + layout.beta_length)
        return layout.beta_names[index - layout.beta_offset];
    for (const auto& b : layout.blocks)
        if (index >= b.offset && index < b.offset + b.length)
            return b.name + "[" + std::to_string(index - b.offset + 1) + "]";
    return "x[" + std::to_string(index + 1) + "]";
}

Engine::Engine(const Model& model, EngineOptions options) : model_(model), opts_(options) {}

// ---------------------------------------------------------------------------
// Gaussian approximation

GaussianApprox Engine::gaussian_approximation(const Vector& theta, const Vector* x_start, bool variances) const {
    const Model& m = model_;
    GaussianApprox ga;
    ga.theta = theta;
    const SparseSym Q = m.precision(theta, opts_.jitter_scale);
    const SpMat& A = m.A();
    const Matrix& C = m.constraints();
    const int k = static_cast<int>(C.rows());
    const Vector e = Vector::Zero(k);
    const double t2 = m.likelihood_theta(theta);
    const int n = m.n_obs();
    const FamilyKind fam = m.family();

    Vector x = x_start ? *x_start : Vector::Zero(m.n_latent());
    Vector eta = A * x;
    auto objective = [&](const Vector& xv, const Vector& ev) { return m.loglik(ev, theta) - 0.5 * Q.quadratic_form(xv); };
    double f = objective(x, eta);
    Vector g = Vector::Zero(n), h = Vector::Zero(n);
    auto derivs = [&](const Vector& ev) {
        for (int i : m.observed()) {
            const auto d = loglik_derivs(fam, m.y()(i), ev(i), t2, m.aux()[i], opts_.curvature_floor);
            g(i) = d.g;
            h(i) = d.h;
        }
    };

    CholFactor F;
    ConstraintSystem cs;
    bool converged = false, factor_at_mode = false;
    int it = 0;
    for (it = 1; it <= opts_.max_newton; ++it) {
        derivs(eta);
        F = factorize(Q.plus_weighted_gram(A, h));
        const Vector b = A.transpose() * (g + h.cwiseProduct(eta));
        Vector xn = F.solve(b);
        if (k > 0) {
            cs = ConstraintSystem(F, C);
            xn = cs.correct(xn, e);
        }
        if (constant_curvature(fam) && opts_.newton_step == 1.0) {
            // quadratic objective: the full step lands on the mode
            x = xn;
            eta = A * x;
            converged = factor_at_mode = true;
            break;
        }
        const Vector step = xn - x;
        double alpha = opts_.newton_step;
        Vector xt = x + alpha * step;
        Vector et = A * xt;
        double ft = objective(xt, et);
        for (int halving = 0; halving < 40 && !(ft >= f - 1e-10 * (1.0 + std::abs(f))); ++halving) {
            alpha *= 0.5;
            xt = x + alpha * step;
            et = A * xt;
            ft = objective(xt, et);
        }
        if (!std::isfinite(ft)) break;
        const double moved = (alpha * step).cwiseAbs().maxCoeff();
        x = std::move(xt);
        eta = std::move(et);
        f = ft;
        if (moved < 1e-6 * (1.0 + x.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NonConvergence("gaussian approximation", std::min(it, opts_.max_newton));
    if (!factor_at_mode) {
        derivs(eta);
        F = factorize(Q.plus_weighted_gram(A, h));
        if (k > 0) cs = ConstraintSystem(F, C);
    }

    ga.iterations = it;
    ga.x_mode = std::move(x);
    ga.eta = std::move(eta);
    ga.loglik = m.loglik(ga.eta, theta);
    ga.prior_quadratic = -0.5 * Q.quadratic_form(ga.x_mode);
    const CholFactor FQ = factorize(Q);
    ga.half_logdet_Q = 0.5 * FQ.logdet();
    ga.half_logdet_P = 0.5 * F.logdet();
    if (k > 0) {
        ga.half_logdet_Q += 0.5 * ConstraintSystem(FQ, C).logdet_S();
        ga.half_logdet_P += 0.5 * cs.logdet_S();
    }
    ga.log_prior_theta = m.log_prior_theta(theta);
    ga.log_post = ga.log_prior_theta + ga.loglik + ga.prior_quadratic + ga.half_logdet_Q - ga.half_logdet_P;
    if (variances) {
        ga.diag_var = partial_inverse(F).diagonal();
        if (k > 0) ga.diag_var -= cs.variance_reduction();
        ga.diag_var = ga.diag_var.cwiseMax(0.0);
    }
    ga.factor = std::move(F);
    ga.constraints = std::move(cs);
    return ga;
}

double Engine::log_posterior_theta(const Vector& theta) const {
    return gaussian_approximation(theta, nullptr, false).log_post;
}

Engine::Evaluation Engine::evaluate(const Vector& theta, const Vector* x_start) const {
    try {
        auto ga = gaussian_approximation(theta, x_start, false);
        if (!std::isfinite(ga.log_post)) return {kNegInf, {}};
        return {ga.log_post, std::move(ga.x_mode)};
    } catch (const NotPositiveDefinite&) {
    } catch (const SingularConstraint&) {
    } catch (const NonConvergence&) {
    } catch (const std::domain_error&) {
    }
    return {kNegInf, {}};
}

std::vector<Engine::Evaluation> Engine::evaluate_all(const std::vector<Vector>& thetas, const Vector* x_start) const {
    std::vector<Evaluation> out(thetas.size());
    detail::parallel_for(static_cast<int>(thetas.size()), opts_.threads,
                         [&](int i) { out[i] = evaluate(thetas[i], x_start); });
    return out;
}

// ---------------------------------------------------------------------------
// mode search

ModeResult Engine::find_mode() const {
    const int p = model_.n_theta();
    ModeResult r;
    Vector theta = opts_.start_at_prior_median ? model_.prior_median_theta() : model_.initial_theta();
    const auto start = gaussian_approximation(theta, nullptr, false);
    if (!std::isfinite(start.log_post)) throw NonConvergence("mode search", 0);
    Vector x = start.x_mode;
    double f = -start.log_post;
    r.evaluations = 1;
    if (p == 0) {
        r.theta = theta;
        r.x_mode = x;
        r.H = Matrix(0, 0);
        r.log_post = -f;
        return r;
    }
    const double hg = opts_.grad_step;
    auto gradient = [&](const Vector& th, const Vector& xs, double f0) {
        std::vector<Vector> pts;
        for (int i = 0; i < p; ++i) {
            Vector a = th, b = th;
            a(i) += hg;
            b(i) -= hg;
            pts.push_back(a);
            pts.push_back(b);
        }
        const auto ev = evaluate_all(pts, &xs);
        r.evaluations += 2 * p;
        Vector g(p);
        for (int i = 0; i < p; ++i) {
            const double fp = -ev[2 * i].log_post, fm = -ev[2 * i + 1].log_post;
            if (std::isfinite(fp) && std::isfinite(fm))
                g(i) = (fp - fm) / (2 * hg);
            else if (std::isfinite(fp))
                g(i) = (fp - f0) / hg;
            else if (std::isfinite(fm))
                g(i) = (f0 - fm) / hg;
            else
                g(i) = 0.0;
        }
        return g;
    };

    Vector g = gradient(theta, x, f);
    Matrix Binv = Matrix::Identity(p, p);
    bool fresh = true;
    double df = 0.0;
    int iter = 0;
    for (; iter < opts_.max_bfgs; ++iter) {
        if (g.cwiseAbs().maxCoeff() < 1e-3 && std::abs(df) < 1e-4) break;
        Vector d = -Binv * g;
        if (g.dot(d) >= 0) {
            Binv.setIdentity();
            d = -g;
        }
        const double dmax = d.cwiseAbs().maxCoeff();
        if (dmax > 2.0) d *= 2.0 / dmax;
        double alpha = 1.0;
        Evaluation trial{kNegInf, {}};
        Vector theta_t;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            theta_t = theta + alpha * d;
            trial = evaluate(theta_t, &x);
            ++r.evaluations;
            const double ft = -trial.log_post;
            if (std::isfinite(ft) && ft <= f + 1e-4 * alpha * g.dot(d)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (!fresh) {
                Binv.setIdentity();
                fresh = true;
                continue;
            }
            // no descent along the gradient: at the mode up to finite-difference noise
            if (g.cwiseAbs().maxCoeff() < 5e-2) break;
            throw NonConvergence("mode search", iter);
        }
        const Vector s = theta_t - theta;
        const double ft = -trial.log_post;
        const Vector gt = gradient(theta_t, trial.x_mode, ft);
        const Vector y = gt - g;
        const double sy = s.dot(y);
        if (sy > 1e-10) {
            if (fresh) Binv *= sy / y.squaredNorm();
            const double rho = 1.0 / sy;
            const Matrix I = Matrix::Identity(p, p);
            Binv = (I - rho * s * y.transpose()) * Binv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
            fresh = false;
        }
        df = f - ft;
        theta = theta_t;
        f = ft;
        x = trial.x_mode;
        g = gt;
    }
    if (iter >= opts_.max_bfgs) throw NonConvergence("mode search", iter);
    r.iterations = iter;
    r.theta = theta;
    r.x_mode = x;
    r.log_post = -f;
    r.H = hessian(theta, -f, x);
    return r;
}

Matrix Engine::hessian(const Vector& theta, double log_post, const Vector& x_start) const {
    const int p = static_cast<int>(theta.size());
    const double h = opts_.hess_step;
    std::vector<Vector> pts;
    std::vector<std::pair<int, int>> where;
    for (int i = 0; i < p; ++i) {
        for (double s : {h, -h}) {
            Vector t = theta;
            t(i) += s;
            pts.push_back(t);
        }
        for (int j = 0; j < i; ++j)
            for (double si : {h, -h})
                for (double sj : {h, -h}) {
                    Vector t = theta;
                    t(i) += si;
                    t(j) += sj;
                    pts.push_back(t);
                }
    }
    const auto ev = evaluate_all(pts, &x_start);
    Matrix H(p, p);
    std::size_t c = 0;
    const double f0 = -log_post;
    for (int i = 0; i < p; ++i) {
        const double fp = -ev[c++].log_post, fm = -ev[c++].log_post;
        H(i, i) = (fp - 2 * f0 + fm) / (h * h);
        for (int j = 0; j < i; ++j) {
            const double fpp = -ev[c++].log_post, fpm = -ev[c++].log_post;
            const double fmp = -ev[c++].log_post, fmm = -ev[c++].log_post;
            H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4 * h * h);
        }
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            if (!std::isfinite(H(i, j))) H(i, j) = i == j ? 1.0 : 0.0;
    const Matrix Hs = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(Hs);
    const Vector lam = es.eigenvalues().cwiseMax(1e-6);
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// grid

ThetaGrid Engine::build_grid(const ModeResult& mode) const {
    ThetaGrid grid;
    grid.mode = mode.theta;
    grid.H = mode.H;
    grid.dz = opts_.dz;
    const int p = static_cast<int>(mode.theta.size());
    const Evaluation centre = evaluate(mode.theta, &mode.x_mode);
    if (!std::isfinite(centre.log_post)) throw NonConvergence("grid construction", 0);
    grid.points.push_back({mode.theta, Vector::Zero(p), centre.log_post, 1.0});
    if (p == 0) return grid;

    Eigen::SelfAdjointEigenSolver<Matrix> es(mode.H);
    grid.V = es.eigenvectors();
    grid.lambda = es.eigenvalues().cwiseMax(1e-6);
    const double lp0 = centre.log_post;
    const double cutoff = opts_.diff_logdens;
    const int max_steps = static_cast<int>(std::ceil(std::sqrt(2.0 * cutoff) / opts_.dz)) + 6;

    // axis exploration, one task per (axis, direction)
    std::vector<std::vector<GridPoint>> axis(2 * static_cast<std::size_t>(p));
    detail::parallel_for(2 * p, opts_.threads, [&](int task) {
        const int i = task / 2;
        const double sign = task % 2 == 0 ? 1.0 : -1.0;
        for (int k = 1; k <= max_steps; ++k) {
            Vector z = Vector::Zero(p);
            z(i) = sign * k * opts_.dz;
            const Vector th = grid.theta_at(z);
            const auto ev = evaluate(th, &mode.x_mode);
            if (!(lp0 - ev.log_post < cutoff)) break;
            axis[task].push_back({th, z, ev.log_post, 0.0});
        }
    });
    std::vector<int> kmin(p, 0), kmax(p, 0);
    for (int i = 0; i < p; ++i) {
        kmax[i] = static_cast<int>(axis[2 * i].size());
        kmin[i] = -static_cast<int>(axis[2 * i + 1].size());
        for (int side = 0; side < 2; ++side)
            for (auto& pt : axis[2 * i + side]) grid.points.push_back(pt);
    }

    if (p == 2) {
        std::vector<Vector> zs;
        for (int a = kmin[0]; a <= kmax[0]; ++a)
            for (int b = kmin[1]; b <= kmax[1]; ++b)
                if (a != 0 && b != 0) {
                    Vector z(2);
                    z << a * opts_.dz, b * opts_.dz;
                    zs.push_back(z);
                }
        std::vector<Vector> ths;
        for (const auto& z : zs) ths.push_back(grid.theta_at(z));
        const auto ev = evaluate_all(ths, &mode.x_mode);
        for (std::size_t k = 0; k < zs.size(); ++k)
            if (lp0 - ev[k].log_post < cutoff) grid.points.push_back({ths[k], zs[k], ev[k].log_post, 0.0});
    }

    double mx = kNegInf;
    for (const auto& pt : grid.points) mx = std::max(mx, pt.log_post);
    double total = 0.0;
    for (auto& pt : grid.points) total += pt.weight = std::exp(pt.log_post - mx);
    for (auto& pt : grid.points) pt.weight /= total;
    return grid;
}

// ---------------------------------------------------------------------------
// full pipeline

namespace {

struct PointResult {
    GaussianApprox ga;
    Vector x_mean;
    Vector eta_mean;
    Vector eta_var;
};

SummaryRow summarize_mixture(const std::string& name, const Mixture& mix, int points, double modal_mu,
                             double modal_sd, const std::vector<double>& gh_x, const std::vector<double>& gh_w,
                             Marginal& marginal) {
    SummaryRow row;
    row.name = name;
    row.mean = mix.mean();
    row.sd = std::sqrt(mix.variance(row.mean));
    const double span_sd = std::max(row.sd, 1e-10 * (1.0 + std::abs(row.mean)));
    std::vector<double> xs(static_cast<std::size_t>(points)), ds(static_cast<std::size_t>(points));
    Mixture safe = mix;
    for (auto& s : safe.sd) s = std::max(s, 1e-10 * (1.0 + std::abs(row.mean)));
    for (int q = 0; q < points; ++q) {
        xs[q] = row.mean - 6.0 * span_sd + 12.0 * span_sd * q / (points - 1);
        ds[q] = safe.pdf(xs[q]);
    }
    marginal = Marginal::normalized(std::move(xs), std::move(ds));
    row.q025 = marginal.quantile(0.025);
    row.q50 = marginal.quantile(0.5);
    row.q975 = marginal.quantile(0.975);
    row.mode = mmarginal(marginal);
    // KL(modal Gaussian || mixture)
    double kld = 0.0;
    if (mix.mu.size() > 1 && modal_sd > 0) {
        for (std::size_t q = 0; q < gh_x.size(); ++q) {
            const double v = modal_mu + modal_sd * gh_x[q];
            kld += gh_w[q] * (normal_logpdf(v, modal_mu, modal_sd) - std::log(std::max(safe.pdf(v), 1e-300)));
        }
        kld = std::max(0.0, kld);
    }
    row.kld = kld;
    return row;
}

}  // namespace

FitResult Engine::run() const {
    const Model& m = model_;
    FitResult res;
    res.layout = m.layout();
    res.constraints = m.constraints();
    res.theta_labels = m.theta_labels();
    for (int h : m.free_hyper()) res.theta_transforms.push_back(m.hyper()[h].transform());

    res.mode = find_mode();
    res.grid = build_grid(res.mode);
    const auto& pts = res.grid.points;
    const int K = static_cast<int>(pts.size());
    const int N = m.n_latent(), n = m.n_obs();
    std::vector<double> w(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) w[k] = pts[k].weight;

    // row-wise copy of A for the fitted-value quadratic forms
    const Eigen::SparseMatrix<double, Eigen::RowMajor, int> Ar = m.A();
    std::vector<PointResult> pr(static_cast<std::size_t>(K));
    detail::parallel_for(K, opts_.threads, [&](int k) {
        auto& out = pr[k];
        out.ga = gaussian_approximation(pts[k].theta, &res.mode.x_mode, true);
        const PartialInverse S = partial_inverse(out.ga.factor);
        const bool constrained = !out.ga.constraints.empty();
        out.eta_mean = out.ga.eta;
        out.eta_var.resize(n);
        for (int i = 0; i < n; ++i) {
            std::vector<std::pair<int, double>> row;
            for (decltype(Ar)::InnerIterator it(Ar, i); it; ++it)
                if (it.value() != 0.0) row.emplace_back(it.col(), it.value());
            double v = 0.0;
            bool on_pattern = true;
            for (const auto& [j, a] : row)
                for (const auto& [l, b] : row) {
                    if (!S.contains(j, l)) {
                        on_pattern = false;
                        break;
                    }
                    v += a * b * S(j, l);
                }
            if (!on_pattern) {
                Vector a = Vector::Zero(N);
                for (const auto& [j, val] : row) a(j) = val;
                v = a.dot(out.ga.factor.solve(a));
            }
            if (constrained) v -= out.ga.constraints.variance_reduction(row);
            out.eta_var(i) = std::max(0.0, v);
        }
        out.x_mean = out.ga.x_mode;
        if (opts_.mean_correction && !constant_curvature(m.family())) {
            // E[x] - mode ~ 1/2 Sigma A^T (l''' * Var(eta))
            const double t2 = m.likelihood_theta(pts[k].theta);
            Vector c = Vector::Zero(n);
            for (int i : m.observed())
                c(i) = 0.5 * loglik_third(m.family(), m.y()(i), out.ga.eta(i), t2, m.aux()[i]) * out.eta_var(i);
            Vector shift = out.ga.factor.solve(Vector(m.A().transpose() * c));
            if (constrained) shift = out.ga.constraints.correct(shift, Vector::Zero(out.ga.constraints.rows()));
            out.x_mean += shift;
            out.eta_mean += m.A() * shift;
        }
    });
    // the modal point is the first grid point
    const GaussianApprox& modal = pr[0].ga;

    std::vector<double> gh_x, gh_w;
    gauss_hermite(21, gh_x, gh_w);
    const int npts = opts_.marginal_points;

    // latent marginals
    std::vector<SummaryRow> latent_rows(static_cast<std::size_t>(N));
    std::vector<Marginal> latent_marg(static_cast<std::size_t>(N));
    detail::parallel_for(N, opts_.threads, [&](int j) {
        Mixture mix{&w, {}, {}};
        for (int k = 0; k < K; ++k) {
            mix.mu.push_back(pr[k].x_mean(j));
            mix.sd.push_back(std::sqrt(pr[k].ga.diag_var(j)));
        }
        latent_rows[j] = summarize_mixture(latent_label(m.layout(), j), mix, npts, pr[0].x_mean(j),
                                           std::sqrt(modal.diag_var(j)), gh_x, gh_w, latent_marg[j]);
    });
    const auto& lay = m.layout();
    for (int j = 0; j < lay.beta_length; ++j) {
        res.fixed.push_back(latent_rows[lay.beta_offset + j]);
        res.fixed_marginals.push_back(latent_marg[lay.beta_offset + j]);
    }
    for (const auto& b : lay.blocks) {
        RandomSummary rs;
        rs.component = b.name;
        for (int j = 0; j < b.length; ++j) {
            SummaryRow row = latent_rows[b.offset + j];
            row.name = std::to_string(j + 1);
            rs.rows.push_back(row);
            rs.marginals.push_back(latent_marg[b.offset + j]);
        }
        res.random.push_back(std::move(rs));
    }

    // fitted values on the linear-predictor scale
    res.fitted.resize(static_cast<std::size_t>(n));
    res.fitted_marginals.resize(static_cast<std::size_t>(n));
    detail::parallel_for(n, opts_.threads, [&](int i) {
        Mixture mix{&w, {}, {}};
        for (int k = 0; k < K; ++k) {
            mix.mu.push_back(pr[k].eta_mean(i));
            mix.sd.push_back(std::sqrt(pr[k].eta_var(i)));
        }
        res.fitted[i] = summarize_mixture("fitted[" + std::to_string(i + 1) + "]", mix, npts, pr[0].eta_mean(i),
                                          std::sqrt(pr[0].eta_var(i)), gh_x, gh_w, res.fitted_marginals[i]);
    });

    // hyperparameter marginals along the conditional-mode line of each coordinate
    const int p = m.n_theta();
    if (p > 0) {
        const Matrix Sigma = res.grid.H.inverse();
        const double lp0 = pts[0].log_post;
        const double stop_drop = opts_.diff_logdens + 3.0;
        const int max_steps = 14;
        std::vector<std::vector<std::pair<double, double>>> lines(2 * static_cast<std::size_t>(p));
        detail::parallel_for(2 * p, opts_.threads, [&](int task) {
            const int j = task / 2;
            const double sign = task % 2 == 0 ? 1.0 : -1.0;
            const double sdj = std::sqrt(Sigma(j, j));
            const Vector u = Sigma.col(j) / sdj;
            for (int k = 1; k <= max_steps; ++k) {
                const double s = sign * k * opts_.dz;
                const auto ev = evaluate(res.grid.mode + s * u, &res.mode.x_mode);
                if (!std::isfinite(ev.log_post)) break;
                lines[task].emplace_back(s, ev.log_post - lp0);
                if (lp0 - ev.log_post > stop_drop) break;
            }
        });
        // Laplace volume term: -1/2 log det of the curvature in the other coordinates,
        // re-estimated at every line point
        std::vector<std::vector<std::pair<double, double>>> volume(static_cast<std::size_t>(p));
        if (p >= 2) {
            struct Probe {
                int j;
                double s;
                Vector theta;
                double f0;
            };
            std::vector<Probe> probes;
            for (int j = 0; j < p; ++j) {
                const double sdj = std::sqrt(Sigma(j, j));
                const Vector u = Sigma.col(j) / sdj;
                probes.push_back({j, 0.0, res.grid.mode, lp0});
                for (int side = 0; side < 2; ++side)
                    for (auto& [sv, fv] : lines[2 * j + side]) probes.push_back({j, sv, res.grid.mode + sv * u, lp0 + fv});
            }
            std::vector<Vector> at;
            for (const auto& pr_ : probes) {
                for (int a = 0; a < p; ++a) {
                    if (a == pr_.j) continue;
                    const double da = 0.5 / std::sqrt(res.grid.H(a, a));
                    for (double sa : {da, -da}) {
                        Vector t = pr_.theta;
                        t(a) += sa;
                        at.push_back(t);
                    }
                    for (int b = 0; b < a; ++b) {
                        if (b == pr_.j) continue;
                        const double db = 0.5 / std::sqrt(res.grid.H(b, b));
                        for (double sa : {da, -da})
                            for (double sb : {db, -db}) {
                                Vector t = pr_.theta;
                                t(a) += sa;
                                t(b) += sb;
                                at.push_back(t);
                            }
                    }
                }
            }
            const auto ev = evaluate_all(at, &res.mode.x_mode);
            std::size_t c = 0;
            for (const auto& pr_ : probes) {
                std::vector<int> others;
                for (int a = 0; a < p; ++a)
                    if (a != pr_.j) others.push_back(a);
                const int q = static_cast<int>(others.size());
                Matrix Hc(q, q);
                bool ok = true;
                for (int ia = 0; ia < q; ++ia) {
                    const int a = others[ia];
                    const double da = 0.5 / std::sqrt(res.grid.H(a, a));
                    const double fp = ev[c++].log_post, fm = ev[c++].log_post;
                    Hc(ia, ia) = -(fp - 2.0 * pr_.f0 + fm) / (da * da);
                    ok = ok && std::isfinite(fp) && std::isfinite(fm);
                    for (int ib = 0; ib < ia; ++ib) {
                        const int b = others[ib];
                        const double db = 0.5 / std::sqrt(res.grid.H(b, b));
                        const double fpp = ev[c++].log_post, fpm = ev[c++].log_post;
                        const double fmp = ev[c++].log_post, fmm = ev[c++].log_post;
                        Hc(ia, ib) = Hc(ib, ia) = -(fpp - fpm - fmp + fmm) / (4.0 * da * db);
                        ok = ok && std::isfinite(fpp + fpm + fmp + fmm);
                    }
                }
                if (!ok) continue;
                Eigen::SelfAdjointEigenSolver<Matrix> es(Hc);
                const double logdet = es.eigenvalues().cwiseMax(1e-6).array().log().sum();
                volume[pr_.j].emplace_back(pr_.s, -0.5 * logdet);
            }
            for (auto& v : volume) std::sort(v.begin(), v.end());
        }
        // volume term at s, from the nearest probed point (constant beyond the probes)
        auto volume_at = [&](int j, double sv) {
            const auto& v = volume[j];
            if (v.empty()) return 0.0;
            if (sv <= v.front().first) return v.front().second;
            if (sv >= v.back().first) return v.back().second;
            for (std::size_t k = 1; k < v.size(); ++k)
                if (sv <= v[k].first) {
                    const double t = (sv - v[k - 1].first) / (v[k].first - v[k - 1].first);
                    return (1 - t) * v[k - 1].second + t * v[k].second;
                }
            return v.back().second;
        };

        for (int j = 0; j < p; ++j) {
            const double sdj = std::sqrt(Sigma(j, j));
            std::vector<std::pair<double, double>> line = {{0.0, 0.0}};
            for (auto& v : lines[2 * j]) line.push_back(v);
            for (auto& v : lines[2 * j + 1]) line.push_back(v);
            std::sort(line.begin(), line.end());
            const double v0 = volume_at(j, 0.0);
            for (auto& [sv, fv] : line) fv += volume_at(j, sv) - v0;
            std::vector<double> s, f;
            if (line.size() >= 3) {
                for (auto& [a, b] : line) {
                    s.push_back(a);
                    f.push_back(b);
                }
            } else {
                for (int k = -8; k <= 8; ++k) {
                    s.push_back(k * 0.75);
                    f.push_back(-0.5 * (k * 0.75) * (k * 0.75));
                }
            }
            // tails: continue the last segment (or its concave quadratic) until the drop exceeds 14
            auto extend = [&](bool right) {
                for (int guard = 0; guard < 60; ++guard) {
                    const std::size_t nn = s.size();
                    const double fmax = *std::max_element(f.begin(), f.end());
                    const double f_end = right ? f[nn - 1] : f[0];
                    if (fmax - f_end > 14.0 || std::abs(right ? s[nn - 1] : s[0]) > 30.0) break;
                    const double s1 = right ? s[nn - 1] : s[0], s2 = right ? s[nn - 2] : s[1];
                    const double f1 = right ? f[nn - 1] : f[0], f2 = right ? f[nn - 2] : f[1];
                    double slope = (f1 - f2) / std::abs(s1 - s2);  // change per unit moved outward
                    slope = std::min(slope, -0.5);
                    const double step = 0.75;
                    const double snew = right ? s1 + step : s1 - step;
                    const double fnew = f1 + slope * step;
                    if (right) {
                        s.push_back(snew);
                        f.push_back(fnew);
                    } else {
                        s.insert(s.begin(), snew);
                        f.insert(f.begin(), fnew);
                    }
                }
            };
            extend(true);
            extend(false);
            const Pchip logd(s, f);
            std::vector<double> t(static_cast<std::size_t>(npts)), di(static_cast<std::size_t>(npts));
            std::vector<double> xn(static_cast<std::size_t>(npts)), dn(static_cast<std::size_t>(npts));
            const Transform tr = res.theta_transforms[j];
            const double theta_j = res.grid.mode(j);
            for (int q = 0; q < npts; ++q) {
                const double sq = s.front() + (s.back() - s.front()) * q / (npts - 1);
                t[q] = theta_j + sq * sdj;
                const double ld = logd(sq);
                di[q] = std::exp(ld) / sdj;
                xn[q] = from_internal(tr, t[q]);
                dn[q] = std::exp(ld - log_jacobian(tr, t[q])) / sdj;
            }
            Marginal internal = Marginal::normalized(t, di);
            // natural scale: drop points that collapse numerically (e.g. exp underflow)
            std::vector<double> xk, dk;
            for (int q = 0; q < npts; ++q) {
                if (!std::isfinite(xn[q]) || !std::isfinite(dn[q])) continue;
                if (!xk.empty() && !(xn[q] > xk.back())) continue;
                xk.push_back(xn[q]);
                dk.push_back(dn[q]);
            }
            Marginal natural = xk.size() >= 5 ? Marginal::normalized(xk, dk) : internal;
            SummaryRow row;
            row.name = res.theta_labels[j];
            auto g = [tr](double v) { return from_internal(tr, v); };
            row.mean = emarginal(g, internal);
            const double mu = row.mean;
            row.sd = std::sqrt(std::max(0.0, emarginal([&](double v) { return (g(v) - mu) * (g(v) - mu); }, internal)));
            row.q025 = g(internal.quantile(0.025));
            row.q50 = g(internal.quantile(0.5));
            row.q975 = g(internal.quantile(0.975));
            row.mode = mmarginal(natural);
            double kld = 0.0;
            for (std::size_t q = 0; q < gh_x.size(); ++q) {
                const double v = theta_j + sdj * gh_x[q];
                kld += gh_w[q] * (normal_logpdf(v, theta_j, sdj) - std::log(std::max(internal.pdf(v), 1e-300)));
            }
            row.kld = std::max(0.0, kld);
            res.hyperpar.push_back(row);
            res.hyperpar_marginals.push_back(std::move(natural));
            res.hyperpar_marginals_internal.push_back(std::move(internal));
        }
    }

    // marginal likelihood: grid sum times the z-space volume element
    {
        std::vector<double> lps;
        for (const auto& pt : pts) lps.push_back(pt.log_post);
        double log_vol = 0.0;
        if (p > 0) {
            log_vol = p * std::log(opts_.dz);
            for (int i = 0; i < p; ++i) log_vol -= 0.5 * std::log(res.grid.lambda(i));
        }
        res.diagnostics.mlik = log_sum_exp(lps) + log_vol;
    }

    // observation-level criteria by Gauss-Hermite against each mixture component
    {
        const auto& cf = m.spec().control.compute;
        const bool want = cf.dic || cf.waic || cf.cpo;
        auto& dg = res.diagnostics;
        dg.cpo.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
        dg.cpo_failure.assign(static_cast<std::size_t>(n), false);
        if (want) {
            const FamilyKind fam = m.family();
            const double t2_mode = m.likelihood_theta(res.grid.mode);
            double mean_dev = 0.0, dev_mean = 0.0, lppd = 0.0, pw = 0.0;
            std::vector<double> t2(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) t2[k] = m.likelihood_theta(pts[k].theta);
            for (int i : m.observed()) {
                const double yi = m.y()(i);
                const auto& ai = m.aux()[i];
                double e_ll = 0.0, e_ll2 = 0.0, eta_bar = 0.0;
                std::vector<double> log_terms, neg_terms;
                for (int k = 0; k < K; ++k) {
                    const double mu = pr[k].eta_mean(i), sd = std::sqrt(pr[k].eta_var(i));
                    eta_bar += w[k] * mu;
                    for (std::size_t q = 0; q < gh_x.size(); ++q) {
                        const double ll = loglik(fam, yi, mu + sd * gh_x[q], t2[k], ai);
                        const double wt = w[k] * gh_w[q];
                        e_ll += wt * ll;
                        e_ll2 += wt * ll * ll;
                        if (wt > 0) {
                            log_terms.push_back(std::log(wt) + ll);
                            neg_terms.push_back(std::log(wt) - ll);
                        }
                    }
                }
                mean_dev += -2.0 * e_ll;
                dev_mean += -2.0 * loglik(fam, yi, eta_bar, t2_mode, ai);
                lppd += log_sum_exp(log_terms);
                pw += std::max(0.0, e_ll2 - e_ll * e_ll);
                const double log_cpo = -log_sum_exp(neg_terms);
                const double cpo = std::exp(log_cpo);
                dg.cpo[i] = cpo;
                dg.cpo_failure[i] = !std::isfinite(log_cpo) || !(cpo > 0.0) || !std::isfinite(cpo);
            }
            if (cf.dic) {
                dg.mean_deviance = mean_dev;
                dg.deviance_of_mean = dev_mean;
                dg.p_dic = mean_dev - dev_mean;
                dg.dic = 2.0 * mean_dev - dev_mean;
            }
            if (cf.waic) {
                dg.p_waic = pw;
                dg.waic = -2.0 * (lppd - pw);
            }
        }
    }

    if (m.spec().control.compute.config) {
        res.config_stored = true;
        for (int k = 0; k < K; ++k)
            res.configs.push_back({pts[k].theta, w[k], pr[k].x_mean, pr[k].ga.factor});
    }
    return res;
}

// ---------------------------------------------------------------------------

FitResult fit(const Model& model, const EngineOptions& options, bool safe) {
    const auto t0 = std::chrono::steady_clock::now();
    auto attempt = [&](const EngineOptions& o) { return Engine(model, o).run(); };
    FitResult res;
    try {
        res = attempt(options);
    } catch (...) {
        const auto err = std::current_exception();
        if (!is_numerical_failure(err)) throw;
        std::string stage = "fit", detail;
        try {
            std::rethrow_exception(err);
        } catch (const NonConvergence& e) {
            stage = e.stage();
            detail = e.what();
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (!safe) throw FitFailed(stage, detail);
        try {
            res = attempt(options.safe_variant());
            res.used_safe_mode = true;
        } catch (const NonConvergence& e) {
            throw FitFailed(e.stage(), std::string(e.what()) + " (after safe-mode retry; first attempt: " + detail + ")");
        } catch (const NotPositiveDefinite& e) {
            throw FitFailed("factorization", std::string(e.what()) + " (after safe-mode retry)");
        } catch (const SingularConstraint& e) {
            throw FitFailed("constraints", std::string(e.what()) + " (after safe-mode retry)");
        } catch (const std::domain_error& e) {
            throw FitFailed("hyperparameters", std::string(e.what()) + " (after safe-mode retry)");
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

FitResult fit(const ModelSpec& spec, const DataTable& data, const FitOptions& options) {
    const Model model(spec, data);
    EngineOptions o;
    o.dz = spec.control.dz;
    o.diff_logdens = spec.control.diff_logdens;
    o.threads = options.threads;
    return fit(model, o, options.safe.value_or(spec.safe));
}

}  // namespace lgm
