#pragma once

#include "lgm/families.hpp"
#include "lgm/gmrf.hpp"
#include "lgm/model_spec.hpp"
#include "lgm/priors.hpp"
#include "lgm/spec_io.hpp"

#include <string>
#include <vector>

namespace lgm {

struct HyperParameter {
    std::string label;
    /// Component id, or empty for the likelihood hyperparameter.
    std::string owner;
    std::string slot;
    HyperPrior prior;
    bool fixed = false;
    /// Starting (or fixed) value on the internal scale.
    double initial = 0.0;

    Transform transform() const { return prior.transform(); }
};

/// A model specification bound to its data: design, precision builders, constraints and
/// hyperpriors. Immutable once built.
///
/// Hyperparameter order: the likelihood hyperparameter (if any) first, then the slots of
/// each component in declaration order. Fixed hyperparameters are excluded from the free
/// vector `theta` that the engine works with.
class Model {
public:
    Model(ModelSpec spec, const DataTable& data);

    const ModelSpec& spec() const { return spec_; }
    const LatentLayout& layout() const { return layout_; }
    const DesignMatrices& design() const { return design_; }
    const SpMat& A() const { return design_.A; }
    int n_obs() const { return static_cast<int>(y_.size()); }
    int n_latent() const { return layout_.n; }
    FamilyKind family() const { return spec_.family; }

    /// Response with NaN for missing entries.
    const Vector& y() const { return y_; }
    const std::vector<ObservationAux>& aux() const { return aux_; }
    const std::vector<int>& observed() const { return observed_; }

    const std::vector<HyperParameter>& hyper() const { return hyper_; }
    /// Indices into hyper() of the free hyperparameters.
    const std::vector<int>& free_hyper() const { return free_; }
    int n_theta() const { return static_cast<int>(free_.size()); }
    std::vector<std::string> theta_labels() const;

    Vector full_theta(const Vector& theta) const;
    Vector initial_theta() const;
    Vector prior_median_theta() const;
    double log_prior_theta(const Vector& theta) const;

    /// Internal likelihood hyperparameter (0 when the family has none).
    double likelihood_theta(const Vector& theta) const;

    const std::vector<ComponentPrecision>& components() const { return components_; }
    /// Q(theta) on the whole latent field, including the fixed-effect prior precisions.
    SparseSym precision(const Vector& theta, double jitter_scale = 1.0) const;
    /// Sum-to-zero rows on the whole field (k x N); right-hand side is zero.
    const Matrix& constraints() const { return C_; }

    /// Sum of observed log-likelihood terms.
    double loglik(const Vector& eta, const Vector& theta) const;

private:
    ModelSpec spec_;
    LatentLayout layout_;
    DesignMatrices design_;
    Vector y_;
    std::vector<ObservationAux> aux_;
    std::vector<int> observed_;
    std::vector<HyperParameter> hyper_;
    std::vector<int> free_;
    int likelihood_index_ = -1;
    std::vector<int> component_hyper_offset_;
    std::vector<ComponentPrecision> components_;
    Vector beta_prec_;
    Matrix C_;
};

}  // namespace lgm
