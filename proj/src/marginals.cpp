#include "lgm/marginals.hpp"

#include "lgm/errors.hpp"
#include "lgm/rng.hpp"
#include "lgm/spec_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lgm {

namespace {

constexpr int kRefine = 4;

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t k = 1; k < x.size(); ++k) s += 0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
    return s;
}

/// Grid with kRefine sub-steps per cell, and the density at each point.
void refined_grid(const Marginal& m, std::vector<double>& t, std::vector<double>& f) {
    const auto& x = m.x();
    t.clear();
    f.clear();
    for (std::size_t k = 0; k + 1 < x.size(); ++k)
        for (int r = 0; r < kRefine; ++r) t.push_back(x[k] + (x[k + 1] - x[k]) * r / kRefine);
    t.push_back(x.back());
    for (double v : t) f.push_back(m.pdf(v));
}

}  // namespace

Marginal::Marginal(std::vector<double> x, std::vector<double> density) {
    if (x.size() != density.size()) throw std::invalid_argument("Marginal: x and density differ in length");
    if (x.size() < 5) throw std::invalid_argument("Marginal: need at least 5 grid points");
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (!std::isfinite(x[k])) throw std::invalid_argument("Marginal: non-finite abscissa");
        if (k > 0 && !(x[k] > x[k - 1])) throw std::invalid_argument("Marginal: abscissae not strictly increasing");
        if (!std::isfinite(density[k]) || density[k] < 0.0)
            throw std::invalid_argument("Marginal: densities must be finite and nonnegative");
    }
    const double mass = trapezoid(x, density);
    if (!(mass >= 0.99 && mass <= 1.01))
        throw std::invalid_argument("Marginal: trapezoid mass " + std::to_string(mass) + " outside [0.99, 1.01]");
    interp_ = Pchip(std::move(x), std::move(density));
    const auto& xs = interp_.x();
    cum_.assign(xs.size(), 0.0);
    for (std::size_t k = 0; k + 1 < xs.size(); ++k)
        cum_[k + 1] = cum_[k] + std::max(0.0, interp_.integrate_cell(static_cast<int>(k), xs[k + 1]));
}

Marginal Marginal::normalized(std::vector<double> x, std::vector<double> density) {
    const double mass = trapezoid(x, density);
    if (!(mass > 0.0) || !std::isfinite(mass)) throw std::invalid_argument("Marginal: zero or non-finite mass");
    for (double& d : density) d /= mass;
    return Marginal(std::move(x), std::move(density));
}

double Marginal::pdf(double t) const {
    if (empty() || t < lower() || t > upper()) return 0.0;
    return std::max(0.0, interp_(t));
}

double Marginal::cdf(double t) const {
    if (t <= lower()) return 0.0;
    if (t >= upper()) return 1.0;
    const int k = interp_.cell(t);
    const double v = cum_[k] + std::max(0.0, interp_.integrate_cell(k, t));
    return std::clamp(v / cum_.back(), 0.0, 1.0);
}

double Marginal::quantile(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("quantile: p must lie in [0, 1]");
    const auto& xs = x();
    const double target = p * cum_.back();
    if (p <= 0.0) {
        // smallest x with positive mass to its left is the first node
        return xs.front();
    }
    // first node whose cumulative mass reaches the target
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), target);
    std::size_t k = static_cast<std::size_t>(it - cum_.begin());
    if (k == 0) return xs.front();
    if (k >= xs.size()) return xs.back();
    const int cell = static_cast<int>(k - 1);
    double lo = xs[cell], hi = xs[k];
    const double base = cum_[cell];
    for (int iter = 0; iter < 100 && hi - lo > 1e-15 * (1.0 + std::abs(hi)); ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (base + interp_.integrate_cell(cell, mid) >= target)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

double dmarginal(double x, const Marginal& m) { return m.pdf(x); }
double pmarginal(double x, const Marginal& m) { return m.cdf(x); }
double qmarginal(double p, const Marginal& m) { return m.quantile(p); }

Marginal tmarginal(const std::function<double(double)>& g, const Marginal& m, const std::function<double(double)>& dg) {
    const auto& x = m.x();
    const std::size_t n = x.size();
    std::vector<double> y(n), d(n);
    for (std::size_t k = 0; k < n; ++k) {
        y[k] = g(x[k]);
        double deriv;
        if (dg) {
            deriv = dg(x[k]);
        } else {
            const double h = 1e-6 * (1.0 + std::abs(x[k]));
            deriv = (g(x[k] + h) - g(x[k] - h)) / (2.0 * h);
        }
        if (!std::isfinite(y[k]) || !std::isfinite(deriv) || deriv == 0.0)
            throw std::invalid_argument("tmarginal: transformation not finite/strictly monotone on the grid");
        d[k] = m.density()[k] / std::abs(deriv);
    }
    const bool increasing = y[1] > y[0];
    for (std::size_t k = 1; k < n; ++k)
        if ((y[k] > y[k - 1]) != increasing || y[k] == y[k - 1])
            throw std::invalid_argument("tmarginal: transformation is not strictly monotone on the grid");
    if (!increasing) {
        std::reverse(y.begin(), y.end());
        std::reverse(d.begin(), d.end());
    }
    return Marginal::normalized(std::move(y), std::move(d));
}

double emarginal(const std::function<double(double)>& g, const Marginal& m) {
    std::vector<double> t, f;
    refined_grid(m, t, f);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k) {
        const double h = 0.5 * (t[k] - t[k - 1]);
        num += h * (g(t[k]) * f[k] + g(t[k - 1]) * f[k - 1]);
        den += h * (f[k] + f[k - 1]);
    }
    return num / den;
}

std::pair<double, double> hpdmarginal(double level, const Marginal& m) {
    if (!(level > 0.0 && level <= 1.0)) throw std::domain_error("hpdmarginal: level must lie in (0, 1]");
    if (level >= 1.0) return {m.lower(), m.upper()};
    std::vector<double> t, f;
    refined_grid(m, t, f);
    const double fmax = *std::max_element(f.begin(), f.end());
    const int n = static_cast<int>(t.size());

    // Region {pdf >= k} as the span between the outermost crossings.
    auto crossing = [&](int a, int b, double k) {
        // pdf(t[a]) and pdf(t[b]) straddle k; bisection on the interpolant
        double lo = t[a], hi = t[b];
        const bool rising = f[a] < f[b];
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((m.pdf(mid) >= k) == rising)
                hi = mid;
            else
                lo = mid;
        }
        return 0.5 * (lo + hi);
    };
    auto region = [&](double k) {
        int first = 0, last = n - 1;
        while (first < n && f[first] < k) ++first;
        while (last >= 0 && f[last] < k) --last;
        const double lo = first == 0 ? t[0] : crossing(first - 1, first, k);
        const double hi = last == n - 1 ? t[n - 1] : crossing(last + 1, last, k);
        return std::make_pair(lo, hi);
    };
    double klo = 0.0, khi = fmax;
    std::pair<double, double> best = {m.lower(), m.upper()};
    for (int it = 0; it < 200; ++it) {
        const double k = 0.5 * (klo + khi);
        const auto r = region(k);
        const double mass = m.cdf(r.second) - m.cdf(r.first);
        best = r;
        if (std::abs(mass - level) < 1e-6) break;
        if (mass > level)
            klo = k;
        else
            khi = k;
    }
    // a dip below the threshold inside the span means more than one interval
    const double k = 0.5 * (klo + khi);
    double gap_mass = 0.0;
    for (int i = 1; i < n; ++i) {
        if (t[i] <= best.first || t[i - 1] >= best.second) continue;
        const double a = 0.5 * (f[i] + f[i - 1]);
        if (f[i] < k && f[i - 1] < k) gap_mass += (t[i] - t[i - 1]) * (k - a);
    }
    if (gap_mass > 1e-4)
        throw MultimodalMarginal("hpdmarginal: highest-density region is not a single interval");
    return best;
}

MarginalSummary zmarginal(const Marginal& m) {
    MarginalSummary s;
    s.mean = emarginal([](double v) { return v; }, m);
    const double mu = s.mean;
    s.sd = std::sqrt(std::max(0.0, emarginal([mu](double v) { return (v - mu) * (v - mu); }, m)));
    s.median = m.quantile(0.5);
    s.q025 = m.quantile(0.025);
    s.q975 = m.quantile(0.975);
    return s;
}

double mmarginal(const Marginal& m) {
    std::vector<double> t, f;
    refined_grid(m, t, f);
    return t[static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin())];
}

std::vector<double> rmarginal(int n, const Marginal& m, std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("rmarginal: negative sample size");
    Rng rng(seed);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = m.quantile(rng.uniform());
    return out;
}

std::string format_marginal_csv(const Marginal& m) {
    std::string out = "x,density\n";
    char buf[64];
    for (std::size_t k = 0; k < m.x().size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g\n", m.x()[k], m.density()[k]);
        out += buf;
    }
    return out;
}

Marginal parse_marginal_csv(const std::string& text, const std::string& source) {
    const DataTable t = parse_table(text, "", source);
    if (t.columns().size() != 2) throw ValidationError(source, "expected two columns (x, density)");
    const auto& c0 = t.columns()[0];
    const auto& c1 = t.columns()[1];
    if (!c0.numeric || !c1.numeric) throw ValidationError(source, "marginal columns must be numeric");
    try {
        return Marginal(c0.values, c1.values);
    } catch (const std::invalid_argument& e) {
        throw ValidationError(source, e.what());
    }
}

Marginal read_marginal_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError(path, "cannot open marginal file");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_marginal_csv(ss.str(), path);
}

}  // namespace lgm
