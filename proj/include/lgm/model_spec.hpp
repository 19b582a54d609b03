#pragma once

#include "lgm/families.hpp"
#include "lgm/gmrf.hpp"
#include "lgm/priors.hpp"

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace lgm {

/// Sparse matrix supplied inline or as a CSV file of 1-based (i, j, x) triplets.
/// Entries are 0-based once loaded.
struct MatrixInput {
    std::string path;
    int nrow = 0;
    int ncol = 0;
    std::vector<std::tuple<int, int, double>> entries;

    bool operator==(const MatrixInput&) const = default;
};

struct RandomComponent {
    std::string id;
    LatentKind model = LatentKind::iid;
    /// Keyed by canonical slot name; every slot of the model is present after parsing.
    std::map<std::string, PriorSpec> hyper;
    bool constr = false;
    bool scale_model = false;
    bool cyclic = false;
    std::string graph;
    std::optional<MatrixInput> Q;
    std::optional<MatrixInput> A_local;
    /// Explicit component size; otherwise taken from the graph, Q, or the largest index.
    std::optional<int> n;

    bool operator==(const RandomComponent&) const = default;
};

struct ComputeFlags {
    bool dic = false;
    bool waic = false;
    bool cpo = false;
    bool config = false;
    bool return_marginals = true;

    bool operator==(const ComputeFlags&) const = default;
};

struct ControlOptions {
    ComputeFlags compute;
    double fixed_prec = 0.001;
    double fixed_prec_intercept = 0.001;
    std::map<std::string, PriorSpec> family_hyper;
    /// Grid step in standardised coordinates and log-density cutoff.
    double dz = 0.75;
    double diff_logdens = 3.0;

    bool operator==(const ControlOptions&) const = default;
};

/// Per-observation vector given either as a column name or inline values.
struct AuxInput {
    std::string column;
    std::vector<double> values;

    bool empty() const { return column.empty() && values.empty(); }
    bool operator==(const AuxInput&) const = default;
};

struct ModelSpec {
    std::string response;
    std::vector<std::string> fixed;
    std::vector<RandomComponent> random;
    FamilyKind family = FamilyKind::gaussian;
    AuxInput E;
    AuxInput Ntrials;
    ControlOptions control;
    bool safe = true;

    bool operator==(const ModelSpec&) const = default;
};

/// Canonical hyperparameter slots of a latent model, in internal theta order.
std::vector<std::string> hyper_slots(LatentKind kind);
/// Likelihood hyperparameter slot ("prec", "size"), empty when the family has none.
std::string family_hyper_slot(FamilyKind kind);
Transform slot_transform(LatentKind kind, const std::string& slot);
Transform family_slot_transform(FamilyKind kind);
PriorSpec default_prior(LatentKind kind, const std::string& slot);
PriorSpec default_family_prior(FamilyKind kind);

}  // namespace lgm
