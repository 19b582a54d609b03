#pragma once

#include <string>

namespace lgm {

enum class FamilyKind { gaussian, poisson, binomial, nbinomial, gamma, beta };
enum class Link { identity, log, logit };

const char* family_name(FamilyKind kind);
FamilyKind parse_family_name(const std::string& name, const std::string& key_path = "");
const char* link_name(Link link);
Link default_link(FamilyKind kind);

/// Number of likelihood hyperparameters (0 or 1): log precision for gaussian,
/// log dispersion for nbinomial/gamma/beta.
int family_hyper_count(FamilyKind kind);
/// Label used in hyperparameter summaries.
std::string family_hyper_label(FamilyKind kind);
/// Curvature in eta does not depend on eta, so one Newton step is exact.
bool constant_curvature(FamilyKind kind);

double link(Link link, double mu);
double inv_link(Link link, double eta);

/// Per-observation auxiliary data. `E` multiplies the poisson mean; `ntrials` is the
/// binomial size.
struct ObservationAux {
    double E = 1.0;
    double ntrials = 1.0;
};

/// Throws ValidationError when y lies outside the family's support.
void check_support(FamilyKind kind, double y, const ObservationAux& aux);

/// Exact log-density of y given the linear predictor. `theta2` is the likelihood
/// hyperparameter on its internal (log) scale and is ignored by poisson/binomial.
double loglik(FamilyKind kind, double y, double eta, double theta2, const ObservationAux& aux = {});

struct LoglikDerivs {
    double g;  ///< d loglik / d eta
    double h;  ///< -d^2 loglik / d eta^2, clamped below
};

/// Third derivative of the log-likelihood in eta.
double loglik_third(FamilyKind kind, double y, double eta, double theta2, const ObservationAux& aux = {});

LoglikDerivs loglik_derivs(FamilyKind kind, double y, double eta, double theta2,
                           const ObservationAux& aux = {}, double curvature_floor = 1e-8);

}  // namespace lgm
