#include "lgm/model.hpp"

#include "lgm/errors.hpp"

#include <cmath>

namespace lgm {

namespace {

std::string hyper_label(const RandomComponent& c, const std::string& slot) {
    switch (c.model) {
        case LatentKind::ar1:
            return slot == "rho" ? "Rho for " + c.id : "Precision for " + c.id;
        case LatentKind::bym:
            return slot == "theta1" ? "Precision for " + c.id + " (iid component)"
                                    : "Precision for " + c.id + " (spatial component)";
        case LatentKind::bym2:
            return slot == "phi" ? "Phi for " + c.id : "Precision for " + c.id;
        default:
            return "Precision for " + c.id;
    }
}

}  // namespace

Model::Model(ModelSpec spec, const DataTable& data) : spec_(std::move(spec)) {
    auto [layout, design] = build_layout_and_design(spec_, data);
    layout_ = std::move(layout);
    design_ = std::move(design);

    const int n = data.n_rows();
    const auto& resp = data.numeric(spec_.response);
    y_ = Vector::Map(resp.data(), n);
    aux_.assign(static_cast<std::size_t>(n), ObservationAux{});
    auto aux_values = [&](const AuxInput& a) -> const std::vector<double>& {
        return a.column.empty() ? a.values : data.numeric(a.column);
    };
    if (!spec_.E.empty()) {
        const auto& v = aux_values(spec_.E);
        for (int i = 0; i < n; ++i) aux_[i].E = v[i];
    }
    if (!spec_.Ntrials.empty()) {
        const auto& v = aux_values(spec_.Ntrials);
        for (int i = 0; i < n; ++i) aux_[i].ntrials = v[i];
    }
    for (int i = 0; i < n; ++i) {
        if (std::isnan(y_(i))) continue;
        try {
            check_support(spec_.family, y_(i), aux_[i]);
        } catch (const ValidationError& e) {
            throw ValidationError(spec_.response + " row " + std::to_string(i + 1), e.what());
        }
        observed_.push_back(i);
    }

    // likelihood hyperparameter
    if (const std::string slot = family_hyper_slot(spec_.family); !slot.empty()) {
        const PriorSpec& p = spec_.control.family_hyper.at(slot);
        try {
            hyper_.push_back({family_hyper_label(spec_.family), "", slot,
                              HyperPrior(p, family_slot_transform(spec_.family)), p.fixed, p.initial.value_or(0.0)});
        } catch (const ValidationError& e) {
            throw ValidationError("control.family.hyper." + slot, e.what());
        }
        likelihood_index_ = 0;
    }

    // latent components
    for (std::size_t k = 0; k < spec_.random.size(); ++k) {
        const auto& c = spec_.random[k];
        const auto& block = layout_.blocks[k];
        const std::string path = "random[" + std::to_string(k) + "]";
        ComponentPrecision cp;
        try {
            AdjacencyGraph graph;
            if (c.model == LatentKind::bym || c.model == LatentKind::bym2) graph = read_graph(c.graph);
            SparseSym user_q;
            if (c.Q) user_q = to_sparse_sym(*c.Q);
            cp = make_component_precision(c.model, block.m, {c.constr, c.scale_model, c.cyclic},
                                          c.model == LatentKind::bym || c.model == LatentKind::bym2 ? &graph : nullptr,
                                          c.Q ? &user_q : nullptr);
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            throw ValidationError(path, e.what());
        }
        component_hyper_offset_.push_back(static_cast<int>(hyper_.size()));
        for (const auto& slot : hyper_slots(c.model)) {
            const PriorSpec& p = c.hyper.at(slot);
            const Transform tr = slot_transform(c.model, slot);
            std::vector<double> eig;
            if (p.kind == PriorKind::pc) eig = cp.mixing_eigenvalues();
            try {
                hyper_.push_back({hyper_label(c, slot), c.id, slot, HyperPrior(p, tr, std::move(eig)), p.fixed,
                                  p.initial.value_or(0.0)});
            } catch (const ValidationError& e) {
                throw ValidationError(path + ".hyper." + slot, e.what());
            }
        }
        components_.push_back(std::move(cp));
    }
    for (int h = 0; h < static_cast<int>(hyper_.size()); ++h)
        if (!hyper_[h].fixed) free_.push_back(h);

    beta_prec_.resize(layout_.beta_length);
    for (int k = 0; k < layout_.beta_length; ++k)
        beta_prec_(k) = spec_.fixed[k] == "1" ? spec_.control.fixed_prec_intercept : spec_.control.fixed_prec;

    int rows = 0;
    for (const auto& cp : components_) rows += static_cast<int>(cp.constraints.rows());
    C_ = Matrix::Zero(rows, layout_.n);
    int r = 0;
    for (std::size_t k = 0; k < components_.size(); ++k) {
        const auto& cp = components_[k];
        const int nr = static_cast<int>(cp.constraints.rows());
        if (nr == 0) continue;
        C_.block(r, layout_.blocks[k].offset, nr, layout_.blocks[k].length) = cp.constraints;
        r += nr;
    }
}

std::vector<std::string> Model::theta_labels() const {
    std::vector<std::string> out;
    for (int h : free_) out.push_back(hyper_[h].label);
    return out;
}

Vector Model::full_theta(const Vector& theta) const {
    if (theta.size() != n_theta()) throw std::invalid_argument("theta has the wrong length");
    Vector full(static_cast<int>(hyper_.size()));
    for (int h = 0; h < full.size(); ++h) full(h) = hyper_[h].initial;
    for (int k = 0; k < n_theta(); ++k) full(free_[k]) = theta(k);
    return full;
}

Vector Model::initial_theta() const {
    Vector t(n_theta());
    for (int k = 0; k < n_theta(); ++k) t(k) = hyper_[free_[k]].initial;
    return t;
}

Vector Model::prior_median_theta() const {
    Vector t(n_theta());
    for (int k = 0; k < n_theta(); ++k) t(k) = hyper_[free_[k]].prior.internal_median();
    return t;
}

double Model::log_prior_theta(const Vector& theta) const {
    double s = 0.0;
    for (int k = 0; k < n_theta(); ++k) s += hyper_[free_[k]].prior.log_density(theta(k));
    return s;
}

double Model::likelihood_theta(const Vector& theta) const {
    if (likelihood_index_ < 0) return 0.0;
    return full_theta(theta)(likelihood_index_);
}

SparseSym Model::precision(const Vector& theta, double jitter_scale) const {
    const Vector full = full_theta(theta);
    std::vector<SparseSym> blocks;
    blocks.reserve(components_.size() + 1);
    std::vector<Triplet> beta;
    for (int k = 0; k < beta_prec_.size(); ++k) beta.emplace_back(k, k, beta_prec_(k));
    blocks.push_back(SparseSym::from_triplets(static_cast<int>(beta_prec_.size()), beta));
    for (std::size_t k = 0; k < components_.size(); ++k) {
        const auto& cp = components_[k];
        std::vector<double> natural;
        for (int j = 0; j < cp.hyper_count(); ++j) {
            const auto& h = hyper_[component_hyper_offset_[k] + j];
            natural.push_back(from_internal(h.transform(), full(component_hyper_offset_[k] + j)));
        }
        blocks.push_back(cp.assemble(natural, jitter_scale));
    }
    return SparseSym::block_diagonal(blocks);
}

double Model::loglik(const Vector& eta, const Vector& theta) const {
    const double t2 = likelihood_theta(theta);
    double s = 0.0;
    for (int i : observed_) s += lgm::loglik(spec_.family, y_(i), eta(i), t2, aux_[i]);
    return s;
}

}  // namespace lgm
