#include "lgm/families.hpp"

#include "lgm/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lgm {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
bool is_count(double y) { return y >= 0.0 && std::floor(y) == y; }

}  // namespace

const char* family_name(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::gaussian: return "gaussian";
        case FamilyKind::poisson: return "poisson";
        case FamilyKind::binomial: return "binomial";
        case FamilyKind::nbinomial: return "nbinomial";
        case FamilyKind::gamma: return "gamma";
        case FamilyKind::beta: return "beta";
    }
    return "?";
}

FamilyKind parse_family_name(const std::string& name, const std::string& key_path) {
    for (auto k : {FamilyKind::gaussian, FamilyKind::poisson, FamilyKind::binomial, FamilyKind::nbinomial,
                   FamilyKind::gamma, FamilyKind::beta})
        if (name == family_name(k)) return k;
    if (name == "normal") return FamilyKind::gaussian;
    throw ValidationError(key_path, "unknown family '" + name + "'");
}

const char* link_name(Link link) {
    switch (link) {
        case Link::identity: return "identity";
        case Link::log: return "log";
        case Link::logit: return "logit";
    }
    return "?";
}

Link default_link(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::gaussian: return Link::identity;
        case FamilyKind::poisson:
        case FamilyKind::nbinomial:
        case FamilyKind::gamma: return Link::log;
        case FamilyKind::binomial:
        case FamilyKind::beta: return Link::logit;
    }
    return Link::identity;
}

int family_hyper_count(FamilyKind kind) {
    return kind == FamilyKind::poisson || kind == FamilyKind::binomial ? 0 : 1;
}

std::string family_hyper_label(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::gaussian: return "Precision for the Gaussian observations";
        case FamilyKind::nbinomial: return "size for the nbinomial observations (1/overdispersion)";
        case FamilyKind::gamma: return "Precision parameter for the Gamma observations";
        case FamilyKind::beta: return "precision parameter for the beta observations";
        default: return "";
    }
}

bool constant_curvature(FamilyKind kind) { return kind == FamilyKind::gaussian; }

double link(Link link, double mu) {
    switch (link) {
        case Link::identity: return mu;
        case Link::log:
            if (!(mu > 0.0)) throw std::domain_error("log link needs mu > 0");
            return std::log(mu);
        case Link::logit:
            if (!(mu > 0.0 && mu < 1.0)) throw std::domain_error("logit link needs mu in (0,1)");
            return std::log(mu) - std::log1p(-mu);
    }
    return mu;
}

double inv_link(Link link, double eta) {
    switch (link) {
        case Link::identity: return eta;
        case Link::log: return std::exp(eta);
        case Link::logit: return logistic(eta);
    }
    return eta;
}

void check_support(FamilyKind kind, double y, const ObservationAux& aux) {
    auto fail = [&](const std::string& what) {
        throw ValidationError("", std::string(family_name(kind)) + " response " + std::to_string(y) + ": " + what);
    };
    if (!std::isfinite(y)) fail("not finite");
    switch (kind) {
        case FamilyKind::gaussian: break;
        case FamilyKind::poisson:
        case FamilyKind::nbinomial:
            if (!is_count(y)) fail("must be a nonnegative integer");
            if (!(aux.E > 0.0)) fail("E must be positive");
            break;
        case FamilyKind::binomial:
            if (!(aux.ntrials >= 1.0) || std::floor(aux.ntrials) != aux.ntrials) fail("Ntrials must be a positive integer");
            if (!is_count(y) || y > aux.ntrials) fail("must be an integer in [0, Ntrials]");
            break;
        case FamilyKind::gamma:
            if (!(y > 0.0)) fail("must be positive");
            break;
        case FamilyKind::beta:
            if (!(y > 0.0 && y < 1.0)) fail("must lie in (0, 1)");
            break;
    }
}

double loglik(FamilyKind kind, double y, double eta, double theta2, const ObservationAux& aux) {
    switch (kind) {
        case FamilyKind::gaussian: {
            const double r = y - eta;
            return 0.5 * theta2 - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::exp(theta2) * r * r;
        }
        case FamilyKind::poisson: {
            const double log_mu = std::log(aux.E) + eta;
            return (y > 0 ? y * log_mu : 0.0) - std::exp(log_mu) - std::lgamma(y + 1.0);
        }
        case FamilyKind::binomial: {
            const double n = aux.ntrials;
            return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0) + y * eta -
                   n * softplus(eta);
        }
        case FamilyKind::nbinomial: {
            // log(mu / (phi + mu)) = -softplus(log phi - log mu)
            const double size = std::exp(theta2);
            const double log_mu = std::log(aux.E) + eta;
            const double a = theta2 - log_mu;
            return std::lgamma(y + size) - std::lgamma(size) - std::lgamma(y + 1.0) - size * softplus(-a) -
                   y * softplus(a);
        }
        case FamilyKind::gamma: {
            const double shape = std::exp(theta2);
            return shape * theta2 - shape * eta - std::lgamma(shape) + (shape - 1.0) * std::log(y) -
                   shape * y * std::exp(-eta);
        }
        case FamilyKind::beta: {
            const double phi = std::exp(theta2);
            const double mu = logistic(eta);
            const double a = mu * phi, b = (1.0 - mu) * phi;
            return std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(y) +
                   (b - 1.0) * std::log1p(-y);
        }
    }
    return 0.0;
}

LoglikDerivs loglik_derivs(FamilyKind kind, double y, double eta, double theta2, const ObservationAux& aux,
                           double curvature_floor) {
    double g = 0.0, h = 0.0;
    switch (kind) {
        case FamilyKind::gaussian: {
            const double tau = std::exp(theta2);
            g = tau * (y - eta);
            h = tau;
            break;
        }
        case FamilyKind::poisson: {
            const double mu = aux.E * std::exp(eta);
            g = y - mu;
            h = mu;
            break;
        }
        case FamilyKind::binomial: {
            const double p = logistic(eta);
            g = y - aux.ntrials * p;
            h = aux.ntrials * p * (1.0 - p);
            break;
        }
        case FamilyKind::nbinomial: {
            // q = mu / (phi + mu)
            const double q = logistic(std::log(aux.E) + eta - theta2);
            const double size = std::exp(theta2);
            g = y - (y + size) * q;
            h = (y + size) * q * (1.0 - q);
            break;
        }
        case FamilyKind::gamma: {
            const double shape = std::exp(theta2);
            const double r = y * std::exp(-eta);
            g = shape * (r - 1.0);
            h = shape * r;
            break;
        }
        case FamilyKind::beta: {
            using boost::math::digamma;
            using boost::math::trigamma;
            const double phi = std::exp(theta2);
            const double mu = logistic(eta);
            const double s = mu * (1.0 - mu);
            const double a = mu * phi, b = (1.0 - mu) * phi;
            const double t = std::log(y) - std::log1p(-y) - digamma(a) + digamma(b);
            g = phi * s * t;
            h = -(phi * s * (1.0 - 2.0 * mu) * t - phi * phi * s * s * (trigamma(a) + trigamma(b)));
            break;
        }
    }
    return {g, std::max(h, curvature_floor)};
}

double loglik_third(FamilyKind kind, double y, double eta, double theta2, const ObservationAux& aux) {
    switch (kind) {
        case FamilyKind::gaussian:
            return 0.0;
        case FamilyKind::poisson:
            return -aux.E * std::exp(eta);
        case FamilyKind::binomial: {
            const double p = logistic(eta);
            return -aux.ntrials * p * (1.0 - p) * (1.0 - 2.0 * p);
        }
        case FamilyKind::nbinomial: {
            const double q = logistic(std::log(aux.E) + eta - theta2);
            return -(y + std::exp(theta2)) * q * (1.0 - q) * (1.0 - 2.0 * q);
        }
        case FamilyKind::gamma:
            return std::exp(theta2) * y * std::exp(-eta);
        case FamilyKind::beta: {
            const double d = 1e-4;
            const double lo = -std::numeric_limits<double>::infinity();
            return -(loglik_derivs(kind, y, eta + d, theta2, aux, lo).h -
                     loglik_derivs(kind, y, eta - d, theta2, aux, lo).h) /
                   (2.0 * d);
        }
    }
    return 0.0;
}

}  // namespace lgm
