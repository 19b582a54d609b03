#include "lgm/oracle.hpp"

#include "lgm/engine.hpp"
#include "lgm/rng.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace lgm::oracle {

ConjugateResult conjugate_gaussian(const Matrix& X, const Vector& y, const Matrix& prior_prec, double noise_prec) {
    const int n = static_cast<int>(X.rows());
    const Matrix P = prior_prec + noise_prec * X.transpose() * X;
    const Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) throw std::domain_error("posterior precision is not positive definite");
    ConjugateResult r;
    const Vector b = noise_prec * X.transpose() * y;
    r.mean = llt.solve(b);
    r.covariance = llt.solve(Matrix::Identity(P.rows(), P.cols()));
    // y ~ N(0, X prior^-1 X^T + I / noise_prec), written through the posterior precision
    const Eigen::LLT<Matrix> prior_llt(prior_prec);
    double logdet_prior = 0.0, logdet_post = 0.0;
    for (int i = 0; i < P.rows(); ++i) {
        logdet_prior += 2.0 * std::log(prior_llt.matrixL()(i, i));
        logdet_post += 2.0 * std::log(llt.matrixL()(i, i));
    }
    r.log_evidence = -0.5 * n * std::log(2.0 * std::numbers::pi) + 0.5 * n * std::log(noise_prec) +
                     0.5 * logdet_prior - 0.5 * logdet_post - 0.5 * (noise_prec * y.squaredNorm() - b.dot(r.mean));
    return r;
}

ConjugateResult conjugate_gaussian(const Matrix& X, const Vector& y, const Vector& prior_prec_diag,
                                   double noise_prec) {
    return conjugate_gaussian(X, y, Matrix(prior_prec_diag.asDiagonal()), noise_prec);
}

namespace {

/// Unnormalized joint log posterior of (x, theta) with the engine's own building blocks.
class JointTarget {
public:
    explicit JointTarget(const Model& m) : m_(m) {}

    /// 1/2 log|Q| + 1/2 log|C Q^-1 C^T| + log p(theta), and Q itself.
    double theta_terms(const Vector& theta, SparseSym& Q) const {
        Q = m_.precision(theta);
        const CholFactor F = factorize(Q);
        double v = 0.5 * F.logdet();
        if (m_.constraints().rows() > 0) v += 0.5 * ConstraintSystem(F, m_.constraints()).logdet_S();
        return v + m_.log_prior_theta(theta);
    }

    double operator()(const Vector& x, const Vector& theta) const {
        SparseSym Q;
        double v;
        try {
            v = theta_terms(theta, Q);
        } catch (const std::exception&) {
            return -std::numeric_limits<double>::infinity();
        }
        const Vector eta = m_.A() * x;
        return v + m_.loglik(eta, theta) - 0.5 * Q.quadratic_form(x);
    }

private:
    const Model& m_;
};

std::vector<std::string> joint_labels(const Model& m) {
    std::vector<std::string> labels;
    for (int j = 0; j < m.n_latent(); ++j) labels.push_back(latent_label(m.layout(), j));
    for (const auto& l : m.theta_labels()) labels.push_back(l);
    return labels;
}

}  // namespace

DenseGridResult dense_grid_posterior(const Model& model, int points, double half_width_sd) {
    const int N = model.n_latent(), p = model.n_theta(), d = N + p;
    if (d < 1 || d > 3) throw std::invalid_argument("dense grid posterior supports 1 to 3 dimensions");
    if (model.constraints().rows() > 0) throw std::invalid_argument("dense grid posterior does not handle constraints");
    const JointTarget target(model);
    auto f = [&](const Vector& v) { return target(v.head(N), v.tail(p)); };

    // locate the mode with a damped Newton iteration on finite differences
    Vector v(d);
    v.head(N).setZero();
    v.tail(p) = model.initial_theta();
    const double h = 1e-4;
    Matrix H(d, d);
    auto derivs = [&](const Vector& at, Vector& g) {
        const double f0 = f(at);
        g.resize(d);
        for (int i = 0; i < d; ++i) {
            Vector a = at, b = at;
            a(i) += h;
            b(i) -= h;
            const double fa = f(a), fb = f(b);
            g(i) = (fa - fb) / (2 * h);
            H(i, i) = -(fa - 2 * f0 + fb) / (h * h);
            for (int j = 0; j < i; ++j) {
                Vector pp = at, pm = at, mp = at, mm = at;
                pp(i) += h, pp(j) += h;
                pm(i) += h, pm(j) -= h;
                mp(i) -= h, mp(j) += h;
                mm(i) -= h, mm(j) -= h;
                H(i, j) = H(j, i) = -(f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
            }
        }
        return f0;
    };
    Vector g;
    for (int it = 0; it < 200; ++it) {
        const double f0 = derivs(v, g);
        Eigen::SelfAdjointEigenSolver<Matrix> es(H);
        const Vector lam = es.eigenvalues().cwiseMax(1e-3);
        Vector step = es.eigenvectors() * (lam.cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * g));
        double t = 1.0;
        while (t > 1e-8 && !(f(v + t * step) >= f0)) t *= 0.5;
        v += t * step;
        if ((t * step).cwiseAbs().maxCoeff() < 1e-9) break;
    }
    derivs(v, g);
    const Matrix cov = H.inverse();

    DenseGridResult r;
    r.labels = joint_labels(model);
    std::vector<double> lo(d), width(d);
    for (int i = 0; i < d; ++i) {
        const double sd = std::sqrt(std::max(cov(i, i), 1e-16));
        lo[i] = v(i) - half_width_sd * sd;
        width[i] = 2.0 * half_width_sd * sd / points;
        Vector gi(points);
        for (int k = 0; k < points; ++k) gi(k) = lo[i] + (k + 0.5) * width[i];
        r.grid.push_back(gi);
        r.density.push_back(Vector::Zero(points));
    }

    // tensor midpoint rule; theta terms are cached per theta node
    long total = 1;
    for (int i = 0; i < d; ++i) total *= points;
    std::vector<double> logv(static_cast<std::size_t>(total));
    long p_total = 1;
    for (int i = 0; i < p; ++i) p_total *= points;
    std::vector<double> theta_part(static_cast<std::size_t>(p_total));
    std::vector<SparseSym> Qs(static_cast<std::size_t>(p_total));
    for (long t = 0; t < p_total; ++t) {
        Vector theta(p);
        long rem = t;
        for (int i = p - 1; i >= 0; --i) {
            theta(i) = r.grid[N + i](rem % points);
            rem /= points;
        }
        try {
            theta_part[t] = target.theta_terms(theta, Qs[t]);
        } catch (const std::exception&) {
            theta_part[t] = -std::numeric_limits<double>::infinity();
        }
    }
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<int> idx(d);
    for (long c = 0; c < total; ++c) {
        long rem = c;
        for (int i = d - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(rem % points);
            rem /= points;
        }
        Vector x(N), theta(p);
        for (int i = 0; i < N; ++i) x(i) = r.grid[i](idx[i]);
        long t = 0;
        for (int i = 0; i < p; ++i) {
            theta(i) = r.grid[N + i](idx[N + i]);
            t = t * points + idx[N + i];
        }
        double lv = theta_part[t];
        if (std::isfinite(lv)) lv += model.loglik(model.A() * x, theta) - 0.5 * Qs[t].quadratic_form(x);
        logv[c] = lv;
        mx = std::max(mx, lv);
    }
    double mass = 0.0;
    for (long c = 0; c < total; ++c) {
        const double w = std::exp(logv[c] - mx);
        mass += w;
        long rem = c;
        for (int i = d - 1; i >= 0; --i) {
            r.density[i](rem % points) += w;
            rem /= points;
        }
    }
    r.mean.resize(d);
    r.sd.resize(d);
    for (int i = 0; i < d; ++i) {
        r.density[i] /= mass * width[i];
        const double m1 = (r.grid[i].array() * r.density[i].array()).sum() * width[i];
        const double m2 = (r.grid[i].array().square() * r.density[i].array()).sum() * width[i];
        r.mean(i) = m1;
        r.sd(i) = std::sqrt(std::max(0.0, m2 - m1 * m1));
    }
    return r;
}

McmcResult metropolis_lgm(const Model& model, int n_iter, std::uint64_t seed, const McmcOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    const int N = model.n_latent(), p = model.n_theta(), n = model.n_obs(), d = N + p;
    const int burn = options.burn_in >= 0 ? options.burn_in : n_iter / 10;
    const int thin = options.thin > 0 ? options.thin : std::max(1, (n_iter - burn) / 10000);
    const FamilyKind fam = model.family();
    const JointTarget target(model);
    const Matrix& C = model.constraints();
    Rng rng(seed);

    // move directions: coordinate axes, projected onto {C x = 0} when constrained
    struct Direction {
        std::vector<std::pair<int, double>> x;    // nonzeros of the direction
        std::vector<std::pair<int, double>> eta;  // nonzeros of A times it
    };
    std::vector<Direction> dirs(static_cast<std::size_t>(N));
    {
        Matrix proj;
        if (C.rows() > 0) proj = C.transpose() * (C * C.transpose()).ldlt().solve(C);
        const SpMat& A = model.A();
        for (int j = 0; j < N; ++j) {
            Vector e = Vector::Zero(N);
            e(j) = 1.0;
            if (C.rows() > 0) e -= proj.col(j);
            for (int i = 0; i < N; ++i)
                if (std::abs(e(i)) > 1e-14) dirs[j].x.emplace_back(i, e(i));
            const Vector ae = A * e;
            for (int i = 0; i < n; ++i)
                if (ae(i) != 0.0) dirs[j].eta.emplace_back(i, ae(i));
        }
    }

    Vector x = Vector::Zero(N);
    Vector theta = model.initial_theta();
    SparseSym Q;
    double theta_terms = target.theta_terms(theta, Q);
    SpMat Qfull = Q.full();
    Vector Qx = Qfull * x;
    Vector eta = model.A() * x;
    double t2 = model.likelihood_theta(theta);
    Vector ll = Vector::Zero(n);
    const auto& obs = model.observed();
    std::vector<char> is_obs(static_cast<std::size_t>(n), 0);
    for (int i : obs) is_obs[i] = 1;
    for (int i : obs) ll(i) = loglik(fam, model.y()(i), eta(i), t2, model.aux()[i]);

    Vector step = Vector::Constant(d, 0.5);
    Vector dense_dir = Vector::Zero(N);
    std::vector<double> proposed;
    std::vector<long> accepted(static_cast<std::size_t>(d), 0), tried(static_cast<std::size_t>(d), 0);
    std::vector<long> batch_acc(static_cast<std::size_t>(d), 0);
    const int adapt_every = 50;

    const int kept = n_iter - burn;
    const int batch_len = std::max(1, kept / options.batches);
    const int n_batches = std::max(1, kept / batch_len);
    Matrix batch_sum = Matrix::Zero(n_batches, d);
    Vector sum = Vector::Zero(d), sumsq = Vector::Zero(d);
    std::vector<Vector> stored;
    Vector state(d);

    for (int it = 0; it < n_iter; ++it) {
        // latent coordinates
        for (int j = 0; j < N; ++j) {
            const double delta = step(j) * rng.normal();
            const auto& dir = dirs[j];
            double dq = 0.0, dqq = 0.0;
            for (const auto& [i, a] : dir.x) dense_dir(i) = a;
            for (const auto& [i, a] : dir.x) {
                dq += Qx(i) * a;
                for (SpMat::InnerIterator q(Qfull, i); q; ++q) dqq += a * q.value() * dense_dir(q.row());
            }
            for (const auto& [i, a] : dir.x) dense_dir(i) = 0.0;
            double dll = 0.0;
            proposed.resize(dir.eta.size());
            for (std::size_t q = 0; q < dir.eta.size(); ++q) {
                const auto [i, a] = dir.eta[q];
                if (!is_obs[i]) continue;
                proposed[q] = loglik(fam, model.y()(i), eta(i) + delta * a, t2, model.aux()[i]);
                dll += proposed[q] - ll(i);
            }
            const double log_ratio = dll - delta * dq - 0.5 * delta * delta * dqq;
            ++tried[j];
            if (std::log(rng.uniform()) < log_ratio) {
                ++accepted[j];
                ++batch_acc[j];
                for (const auto& [i, a] : dir.x) {
                    x(i) += delta * a;
                    for (SpMat::InnerIterator q(Qfull, i); q; ++q) Qx(q.row()) += delta * a * q.value();
                }
                for (std::size_t q = 0; q < dir.eta.size(); ++q) {
                    const auto [i, a] = dir.eta[q];
                    eta(i) += delta * a;
                    if (is_obs[i]) ll(i) = proposed[q];
                }
            }
        }
        // hyperparameters
        for (int j = 0; j < p; ++j) {
            Vector th = theta;
            th(j) += step(N + j) * rng.normal();
            SparseSym Qn;
            double tn;
            try {
                tn = target.theta_terms(th, Qn);
            } catch (const std::exception&) {
                tn = -std::numeric_limits<double>::infinity();
            }
            ++tried[N + j];
            if (!std::isfinite(tn)) continue;
            const double t2n = model.likelihood_theta(th);
            Vector lln = ll;
            if (t2n != t2)
                for (int i : obs) lln(i) = loglik(fam, model.y()(i), eta(i), t2n, model.aux()[i]);
            const double log_ratio = tn - theta_terms - 0.5 * Qn.quadratic_form(x) + 0.5 * x.dot(Qx) +
                                     (lln.sum() - ll.sum());
            if (std::log(rng.uniform()) < log_ratio) {
                ++accepted[N + j];
                ++batch_acc[N + j];
                theta = th;
                theta_terms = tn;
                Q = std::move(Qn);
                Qfull = Q.full();
                Qx = Qfull * x;
                t2 = t2n;
                ll = std::move(lln);
            }
        }
        if (it < burn && (it + 1) % adapt_every == 0) {
            const double amount = std::min(0.05, 1.0 / std::sqrt((it + 1.0) / adapt_every));
            for (int j = 0; j < d; ++j) {
                const double rate = static_cast<double>(batch_acc[j]) / adapt_every;
                step(j) *= std::exp(rate > 0.44 ? amount : -amount);
                batch_acc[j] = 0;
            }
        }
        if (it >= burn) {
            state << x, theta;
            const int k = it - burn;
            sum += state;
            sumsq += state.cwiseProduct(state);
            if (k / batch_len < n_batches) batch_sum.row(k / batch_len) += state.transpose();
            if (k % thin == 0) stored.push_back(state);
        }
    }

    McmcResult r;
    r.labels = joint_labels(model);
    const double m = std::max(1, kept);
    r.mean = sum / m;
    r.sd = (sumsq / m - r.mean.cwiseProduct(r.mean)).cwiseMax(0.0).cwiseSqrt();
    r.mcse.resize(d);
    for (int j = 0; j < d; ++j) {
        double s2 = 0.0;
        const double mu = batch_sum.col(j).sum() / (static_cast<double>(n_batches) * batch_len);
        for (int b = 0; b < n_batches; ++b) {
            const double bm = batch_sum(b, j) / batch_len;
            s2 += (bm - mu) * (bm - mu);
        }
        s2 /= std::max(1, n_batches - 1);
        r.mcse(j) = std::sqrt(s2 / n_batches);
    }
    r.acceptance.resize(d);
    for (int j = 0; j < d; ++j) r.acceptance(j) = tried[j] ? static_cast<double>(accepted[j]) / tried[j] : 0.0;
    r.chain.resize(static_cast<int>(stored.size()), d);
    for (std::size_t i = 0; i < stored.size(); ++i) r.chain.row(static_cast<int>(i)) = stored[i].transpose();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::string format_chain_csv(const McmcResult& result) {
    std::string out;
    for (std::size_t j = 0; j < result.labels.size(); ++j) {
        if (j) out += ',';
        out += '"' + result.labels[j] + '"';
    }
    out += '\n';
    char buf[32];
    for (int i = 0; i < result.chain.rows(); ++i) {
        for (int j = 0; j < result.chain.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.12g", result.chain(i, j));
            if (j) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace lgm::oracle
