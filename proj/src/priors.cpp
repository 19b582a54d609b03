#include "lgm/priors.hpp"

#include "lgm/errors.hpp"
#include "lgm/pchip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lgm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log cosh(x/2), stable for large |x|
double log_cosh_half(double x) {
    const double a = std::abs(x);
    return 0.5 * a + std::log1p(std::exp(-a)) - std::numbers::ln2;
}

template <typename F>
double bisect_increasing(F f, double target, double lo, double hi) {
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-14 * std::max(1.0, std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("", msg);
}

}  // namespace

const char* prior_name(PriorKind kind) {
    switch (kind) {
        case PriorKind::pc_prec: return "pc.prec";
        case PriorKind::pc_cor1: return "pc.cor1";
        case PriorKind::pc_cor0: return "pc.cor0";
        case PriorKind::pc: return "pc";
        case PriorKind::loggamma: return "loggamma";
        case PriorKind::gaussian: return "gaussian";
        case PriorKind::flat: return "flat";
        case PriorKind::table: return "table";
    }
    return "?";
}

PriorKind parse_prior_name(const std::string& name, const std::string& key_path) {
    if (name == "pc.prec") return PriorKind::pc_prec;
    if (name == "pc.cor1") return PriorKind::pc_cor1;
    if (name == "pc.cor0") return PriorKind::pc_cor0;
    if (name == "pc") return PriorKind::pc;
    if (name == "loggamma") return PriorKind::loggamma;
    if (name == "gaussian" || name == "normal") return PriorKind::gaussian;
    if (name == "flat") return PriorKind::flat;
    if (name == "table" || name.rfind("table:", 0) == 0) return PriorKind::table;
    if (name == "pc.dof" || name == "betacorrelation")
        throw ValidationError(key_path, "prior '" + name + "' is not implemented");
    throw ValidationError(key_path, "unknown prior '" + name + "'");
}

const char* transform_name(Transform t) {
    switch (t) {
        case Transform::log_precision: return "log_precision";
        case Transform::fisher_correlation: return "fisher_correlation";
        case Transform::logit: return "logit";
        case Transform::log: return "log";
        case Transform::identity: return "identity";
    }
    return "?";
}

double to_internal(Transform t, double value) {
    switch (t) {
        case Transform::log_precision:
        case Transform::log:
            if (!(value > 0.0)) throw std::domain_error("to_internal: value must be positive");
            return std::log(value);
        case Transform::fisher_correlation:
            if (!(value > -1.0 && value < 1.0)) throw std::domain_error("to_internal: |rho| must be < 1");
            return std::log1p(value) - std::log1p(-value);
        case Transform::logit:
            if (!(value > 0.0 && value < 1.0)) throw std::domain_error("to_internal: value must be in (0,1)");
            return std::log(value) - std::log1p(-value);
        case Transform::identity:
            return value;
    }
    return value;
}

double from_internal(Transform t, double theta) {
    switch (t) {
        case Transform::log_precision:
        case Transform::log:
            return std::exp(theta);
        case Transform::fisher_correlation:
            return std::tanh(0.5 * theta);
        case Transform::logit:
            return theta >= 0 ? 1.0 / (1.0 + std::exp(-theta)) : std::exp(theta) / (1.0 + std::exp(theta));
        case Transform::identity:
            return theta;
    }
    return theta;
}

double log_jacobian(Transform t, double theta) {
    switch (t) {
        case Transform::log_precision:
        case Transform::log:
            return theta;
        case Transform::fisher_correlation:
            // d rho / d theta = (1 - rho^2) / 2
            return -2.0 * log_cosh_half(theta) - std::numbers::ln2;
        case Transform::logit:
            return -softplus(-theta) - softplus(theta);
        case Transform::identity:
            return 0.0;
    }
    return 0.0;
}

double pc_prec_rate(double U, double alpha) {
    require(U > 0.0 && alpha > 0.0 && alpha < 1.0, "pc.prec requires U > 0 and alpha in (0,1)");
    return -std::log(alpha) / U;
}

double pc_cor0_rate(double U, double alpha) {
    require(U > 0.0 && U < 1.0 && alpha > 0.0 && alpha < 1.0,
            "pc.cor0 requires U in (0,1) and alpha in (0,1)");
    return -std::log(alpha) / std::sqrt(-std::log1p(-U * U));
}

double pc_cor1_rate(double U, double alpha) {
    require(U > -1.0 && U < 1.0 && alpha > 0.0 && alpha < 1.0,
            "pc.cor1 requires U in (-1,1) and alpha in (0,1)");
    const double du = std::sqrt(1.0 - U);
    require(alpha > std::sqrt((1.0 - U) / 2.0), "pc.cor1 requires alpha > sqrt((1 - U) / 2)");
    // P(rho > U) = (1 - exp(-lambda d(U))) / (1 - exp(-lambda sqrt 2)), increasing in lambda
    auto prob = [&](double log_lambda) {
        const double lambda = std::exp(log_lambda);
        return -std::expm1(-lambda * du) / -std::expm1(-lambda * std::numbers::sqrt2);
    };
    return std::exp(bisect_increasing(prob, alpha, -30.0, 30.0));
}

HyperPrior::HyperPrior(PriorSpec spec, Transform transform, std::vector<double> mixing_eigenvalues)
    : spec_(std::move(spec)), transform_(transform), eigen_(std::move(mixing_eigenvalues)) {
    const auto& p = spec_.params;
    auto need_params = [&](std::size_t n) {
        require(p.size() == n, std::string("prior '") + prior_name(spec_.kind) + "' expects " +
                                   std::to_string(n) + " parameters");
    };
    switch (spec_.kind) {
        case PriorKind::pc_prec:
            need_params(2);
            require(transform_ == Transform::log_precision || transform_ == Transform::log,
                    "pc.prec applies only to a precision");
            rate_ = pc_prec_rate(p[0], p[1]);
            break;
        case PriorKind::pc_cor0:
            need_params(2);
            require(transform_ == Transform::fisher_correlation, "pc.cor0 applies only to a correlation");
            rate_ = pc_cor0_rate(p[0], p[1]);
            break;
        case PriorKind::pc_cor1:
            need_params(2);
            require(transform_ == Transform::fisher_correlation, "pc.cor1 applies only to a correlation");
            rate_ = pc_cor1_rate(p[0], p[1]);
            break;
        case PriorKind::pc: {
            need_params(2);
            require(transform_ == Transform::logit, "pc applies only to a mixing weight in (0,1)");
            require(!eigen_.empty(), "pc prior is only available for the bym2 mixing parameter");
            require(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0,
                    "pc requires U in (0,1) and alpha in (0,1)");
            const double d1 = mixing_distance(1.0), du = mixing_distance(p[0]);
            // P(phi < U) = (1 - exp(-lambda d(U))) / (1 - exp(-lambda d(1)))
            auto prob = [&](double log_lambda) {
                const double lambda = std::exp(log_lambda);
                return -std::expm1(-lambda * du) / -std::expm1(-lambda * d1);
            };
            // P(phi < U) cannot fall below d(U)/d(1); such statements get the flattest
            // admissible rate instead of an error.
            if (p[1] <= du / d1 + 1e-9)
                rate_ = 1e-6;
            else
                rate_ = std::exp(bisect_increasing(prob, p[1], -14.0, 30.0));
            mixing_norm_ = std::log(-std::expm1(-rate_ * d1));
            break;
        }
        case PriorKind::loggamma:
            need_params(2);
            require(p[0] > 0.0 && p[1] > 0.0, "loggamma requires a > 0 and b > 0");
            require(transform_ == Transform::log_precision || transform_ == Transform::log,
                    "loggamma applies only to a log-scale hyperparameter");
            break;
        case PriorKind::gaussian:
            need_params(2);
            require(p[1] > 0.0, "gaussian prior requires precision > 0");
            break;
        case PriorKind::flat:
            require(p.empty(), "flat prior takes no parameters");
            break;
        case PriorKind::table: {
            const auto& x = spec_.table_x;
            const auto& y = spec_.table_logd;
            require(x.size() == y.size() && x.size() >= 5, "table prior needs >= 5 (theta, log-density) pairs");
            for (std::size_t k = 1; k < x.size(); ++k)
                require(x[k] > x[k - 1], "table prior abscissae must be strictly increasing");
            table_slopes_ = pchip_slopes(x, y);
            const double ymax = *std::max_element(y.begin(), y.end());
            double mass = 0.0;
            for (std::size_t k = 1; k < x.size(); ++k)
                mass += 0.5 * (x[k] - x[k - 1]) * (std::exp(y[k] - ymax) + std::exp(y[k - 1] - ymax));
            table_norm_ = ymax + std::log(mass);
            break;
        }
    }
}

double HyperPrior::mixing_distance(double phi) const {
    double kld = 0.0;
    for (double g : eigen_) {
        const double a = g - 1.0;
        kld += phi * a - std::log1p(phi * a);
    }
    return std::sqrt(std::max(0.0, kld));  // sqrt(2 * KLD) with KLD = kld / 2
}

double HyperPrior::mixing_distance_derivative(double phi) const {
    double sum_sq = 0.0, dk = 0.0;
    for (double g : eigen_) {
        const double a = g - 1.0;
        sum_sq += a * a;
        dk += phi * a * a / (1.0 + phi * a);
    }
    // d = sqrt(kld); d' = kld' / (2 d); kld ~ phi^2 sum_sq / 2 near zero
    if (phi < 1e-6) return std::sqrt(sum_sq / 2.0);
    return dk / (2.0 * mixing_distance(phi));
}

double HyperPrior::log_density(double theta) const {
    const auto& p = spec_.params;
    switch (spec_.kind) {
        case PriorKind::pc_prec: {
            // sigma = exp(-theta/2) ~ Exp(rate); |d sigma / d theta| = sigma / 2
            return std::log(rate_ / 2.0) - rate_ * std::exp(-0.5 * theta) - 0.5 * theta;
        }
        case PriorKind::pc_cor0: {
            // pi(rho) = rate/2 exp(-rate d) |d'(rho)|, d = sqrt(-log(1 - rho^2))
            const double rho = std::tanh(0.5 * theta);
            const double d = std::sqrt(2.0 * log_cosh_half(theta));
            const double ratio = std::abs(rho) < 1e-8 ? 1.0 : std::abs(rho) / d;  // |rho| / d
            return std::log(rate_ / 4.0) - rate_ * d + std::log(ratio);
        }
        case PriorKind::pc_cor1: {
            // pi(rho) = rate exp(-rate d) / (2 d (1 - exp(-rate sqrt 2))), d = sqrt(1 - rho)
            const double log_one_minus_rho = std::numbers::ln2 - softplus(theta);
            const double d = std::exp(0.5 * log_one_minus_rho);
            const double norm = std::log(-std::expm1(-rate_ * std::numbers::sqrt2));
            return std::log(rate_) - rate_ * d - std::log(2.0) - 0.5 * log_one_minus_rho - norm +
                   log_jacobian(Transform::fisher_correlation, theta);
        }
        case PriorKind::pc: {
            const double phi = from_internal(Transform::logit, theta);
            const double d = mixing_distance(phi);
            return std::log(rate_) - rate_ * d + std::log(mixing_distance_derivative(phi)) - mixing_norm_ +
                   log_jacobian(Transform::logit, theta);
        }
        case PriorKind::loggamma:
            return p[0] * std::log(p[1]) - std::lgamma(p[0]) + p[0] * theta - p[1] * std::exp(theta);
        case PriorKind::gaussian: {
            const double z = theta - p[0];
            return 0.5 * std::log(p[1] / (2.0 * std::numbers::pi)) - 0.5 * p[1] * z * z;
        }
        case PriorKind::flat:
            return 0.0;
        case PriorKind::table: {
            const auto& x = spec_.table_x;
            if (theta < x.front() || theta > x.back()) return kNegInf;
            const auto it = std::upper_bound(x.begin(), x.end(), theta);
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - x.begin()) - 1, x.size() - 2);
            const double h = x[k + 1] - x[k];
            const double s = (theta - x[k]) / h;
            const double s2 = s * s, s3 = s2 * s;
            const auto& y = spec_.table_logd;
            const double v = (2 * s3 - 3 * s2 + 1) * y[k] + (s3 - 2 * s2 + s) * h * table_slopes_[k] +
                             (-2 * s3 + 3 * s2) * y[k + 1] + (s3 - s2) * h * table_slopes_[k + 1];
            return v - table_norm_;
        }
    }
    return 0.0;
}

double HyperPrior::internal_median() const {
    switch (spec_.kind) {
        case PriorKind::flat:
            return spec_.initial.value_or(0.0);
        case PriorKind::gaussian:
            return spec_.params[0];
        default:
            break;
    }
    double lo = -30.0, hi = 30.0;
    if (spec_.kind == PriorKind::table) {
        lo = spec_.table_x.front();
        hi = spec_.table_x.back();
    }
    const int n = 6001;
    const double h = (hi - lo) / (n - 1);
    std::vector<double> cdf(n, 0.0);
    double prev = std::exp(log_density(lo));
    for (int k = 1; k < n; ++k) {
        const double cur = std::exp(log_density(lo + k * h));
        cdf[k] = cdf[k - 1] + 0.5 * h * (prev + cur);
        prev = cur;
    }
    const double half = 0.5 * cdf.back();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), half);
    const int k = std::max(1, static_cast<int>(it - cdf.begin()));
    const double frac = (half - cdf[k - 1]) / std::max(cdf[k] - cdf[k - 1], 1e-300);
    return lo + (k - 1 + frac) * h;
}

double log_prior_internal(const PriorSpec& spec, Transform transform, double theta) {
    return HyperPrior(spec, transform).log_density(theta);
}

}  // namespace lgm
