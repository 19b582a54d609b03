#pragma once

#include <optional>
#include <string>
#include <vector>

namespace lgm {

enum class PriorKind { pc_prec, pc_cor1, pc_cor0, pc, loggamma, gaussian, flat, table };

/// Map between a hyperparameter's natural value and its internal (unbounded) scale.
enum class Transform {
    log_precision,       // theta = log(tau)
    fisher_correlation,  // theta = log((1 + rho) / (1 - rho))
    logit,               // theta = log(phi / (1 - phi))
    log,                 // theta = log(value), dispersion-type parameters
    identity,
};

struct PriorSpec {
    PriorKind kind = PriorKind::flat;
    std::vector<double> params;
    /// Tabulated prior: strictly increasing internal-scale abscissae and log-densities.
    std::vector<double> table_x;
    std::vector<double> table_logd;
    /// Starting value on the internal scale.
    std::optional<double> initial;
    /// Hold the hyperparameter at `initial` instead of estimating it.
    bool fixed = false;

    bool operator==(const PriorSpec&) const = default;
};

const char* prior_name(PriorKind kind);
/// Throws ValidationError for unknown names, including the recognised-but-unsupported
/// "pc.dof" and "betacorrelation".
PriorKind parse_prior_name(const std::string& name, const std::string& key_path = "");

const char* transform_name(Transform t);
double to_internal(Transform t, double value);
double from_internal(Transform t, double theta);
/// log |d value / d theta|.
double log_jacobian(Transform t, double theta);

/// Rate of the exponential on sigma with P(sigma > U) = alpha.
double pc_prec_rate(double U, double alpha);
/// Rate for the PC prior on rho with base model rho = 1 and P(rho > U) = alpha.
double pc_cor1_rate(double U, double alpha);
/// Rate for the PC prior on rho with base model rho = 0 and P(|rho| > U) = alpha.
double pc_cor0_rate(double U, double alpha);

/// A prior bound to the transform of its hyperparameter, evaluated on the internal scale
/// (Jacobian included).
class HyperPrior {
public:
    /// `mixing_eigenvalues` are the nonzero eigenvalues of the generalized inverse of the
    /// scaled structure matrix; the "pc" prior on a BYM2 mixing weight requires them.
    HyperPrior(PriorSpec spec, Transform transform, std::vector<double> mixing_eigenvalues = {});

    double log_density(double theta) const;
    const PriorSpec& spec() const { return spec_; }
    Transform transform() const { return transform_; }
    /// Median of the prior on the internal scale (numerical for most kinds).
    double internal_median() const;

private:
    double mixing_distance(double phi) const;
    double mixing_distance_derivative(double phi) const;

    PriorSpec spec_;
    Transform transform_;
    double rate_ = 0.0;
    double table_norm_ = 0.0;
    std::vector<double> table_slopes_;
    std::vector<double> eigen_;
    double mixing_norm_ = 0.0;
};

/// log density of `spec` pushed to the internal scale of `transform`.
double log_prior_internal(const PriorSpec& spec, Transform transform, double theta);

}  // namespace lgm
