#pragma once

#include "lgm/sparse.hpp"

#include <span>
#include <string>
#include <vector>

namespace lgm {

/// Undirected graph on nodes 0..n-1 with sorted neighbour lists.
struct AdjacencyGraph {
    int n = 0;
    std::vector<std::vector<int>> neighbors;

    int edge_count() const;
    bool operator==(const AdjacencyGraph&) const = default;
};

/// Parses "n" followed by one line "i k j1 ... jk" per node (1-based).
/// `source` prefixes error messages.
AdjacencyGraph parse_graph(const std::string& text, const std::string& source = "graph");
AdjacencyGraph read_graph(const std::string& path);
std::string format_graph(const AdjacencyGraph& g);

/// Component label per node, labels numbered in order of first appearance.
std::vector<int> connected_components(const AdjacencyGraph& g);

enum class StructureKind { iid, rw1, rw2 };

/// Unit-precision structure matrix: identity, or D^T D for first/second differences.
SparseSym structure_matrix(StructureKind kind, int m, bool cyclic = false);
/// Degree minus adjacency.
SparseSym icar_structure(const AdjacencyGraph& g);

/// Rows spanning the null space of a structure matrix (unnormalised indicator or
/// polynomial vectors).
Matrix structure_null_space(StructureKind kind, int m, bool cyclic);
Matrix icar_null_space(const AdjacencyGraph& g);

/// Geometric mean of the marginal variances of the generalised inverse of `Qs`,
/// conditioning on `null_rows` x = 0. Nodes with vanishing variance are skipped.
double compute_scaling(const SparseSym& Qs, const Matrix& null_rows);
/// The marginal variances used by compute_scaling.
Vector constrained_variances(const SparseSym& Qs, const Matrix& null_rows);

/// Stationary AR(1) precision with marginal variance 1/tau and lag-one correlation rho.
SparseSym ar1_precision(int m, double tau, double rho);

enum class LatentKind { iid, rw1, rw2, ar1, bym, bym2, generic0 };

const char* latent_name(LatentKind kind);

/// Precision builder for one latent component; fixed at spec time, evaluated per theta.
///
/// bym and bym2 blocks hold 2m entries ordered (b, u): b is the combined effect entering
/// the predictor, u the structured part (unit-scaled for bym2).
struct ComponentPrecision {
    LatentKind kind = LatentKind::iid;
    int m = 0;
    bool cyclic = false;
    /// Structure of the intrinsic/structured part, already multiplied by `scaling`.
    SparseSym structure;
    int rank_deficiency = 0;
    double scaling = 1.0;
    /// Added to the diagonal of the intrinsic part, independent of theta.
    double jitter = 0.0;
    /// Linear constraints on the block (rows of length block_size()), right-hand side 0.
    Matrix constraints;

    int block_size() const;
    int hyper_count() const;
    /// Precision of the block for natural-scale hyperparameters
    /// (iid/rw/generic0: tau; ar1: tau, rho; bym: tau_iid, tau_spatial; bym2: tau, phi).
    SparseSym assemble(std::span<const double> natural, double jitter_scale = 1.0) const;
    /// Nonzero eigenvalues of the generalised inverse of the scaled structure (bym2 prior).
    std::vector<double> mixing_eigenvalues() const;
};

struct ComponentOptions {
    bool constr = false;
    bool scale_model = false;
    bool cyclic = false;
};

ComponentPrecision make_component_precision(LatentKind kind, int m, const ComponentOptions& opts,
                                            const AdjacencyGraph* graph = nullptr,
                                            const SparseSym* user_q = nullptr);

}  // namespace lgm
