#include "lgm/gmrf.hpp"

#include "lgm/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lgm {

int AdjacencyGraph::edge_count() const {
    std::size_t total = 0;
    for (const auto& nb : neighbors) total += nb.size();
    return static_cast<int>(total / 2);
}

AdjacencyGraph parse_graph(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto where = [&] { return source + ":" + std::to_string(line_no); };
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            const auto first = line.find_first_not_of(" \t\r");
            if (first != std::string::npos && line[first] != '#') return true;
        }
        return false;
    };
    if (!next_line()) throw ValidationError(source, "empty graph file");
    AdjacencyGraph g;
    {
        std::istringstream hdr(line);
        if (!(hdr >> g.n) || g.n < 1) throw ValidationError(where(), "expected a positive node count");
    }
    g.neighbors.assign(static_cast<std::size_t>(g.n), {});
    std::vector<bool> seen(static_cast<std::size_t>(g.n), false);
    while (next_line()) {
        std::istringstream row(line);
        long node = 0, k = 0;
        if (!(row >> node >> k)) throw ValidationError(where(), "expected 'node count neighbours...'");
        if (node < 1 || node > g.n) throw ValidationError(where(), "node index out of range");
        if (seen[node - 1]) throw ValidationError(where(), "node listed twice");
        seen[node - 1] = true;
        if (k < 0) throw ValidationError(where(), "negative neighbour count");
        auto& nb = g.neighbors[node - 1];
        for (long t = 0; t < k; ++t) {
            long j = 0;
            if (!(row >> j)) throw ValidationError(where(), "fewer neighbours than declared");
            if (j < 1 || j > g.n) throw ValidationError(where(), "neighbour index out of range");
            if (j == node) throw ValidationError(where(), "node lists itself as a neighbour");
            nb.push_back(static_cast<int>(j - 1));
        }
        long extra = 0;
        if (row >> extra) throw ValidationError(where(), "more neighbours than declared");
        std::sort(nb.begin(), nb.end());
        if (std::adjacent_find(nb.begin(), nb.end()) != nb.end())
            throw ValidationError(where(), "duplicate neighbour");
    }
    for (int i = 0; i < g.n; ++i)
        if (!seen[i]) throw ValidationError(source, "node " + std::to_string(i + 1) + " has no line");
    for (int i = 0; i < g.n; ++i)
        for (int j : g.neighbors[i])
            if (!std::binary_search(g.neighbors[j].begin(), g.neighbors[j].end(), i))
                throw ValidationError(source, "asymmetric adjacency: " + std::to_string(i + 1) + " lists " +
                                                  std::to_string(j + 1) + " but not conversely");
    return g;
}

AdjacencyGraph read_graph(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError(path, "cannot open graph file");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_graph(ss.str(), path);
}

std::string format_graph(const AdjacencyGraph& g) {
    std::ostringstream out;
    out << g.n << '\n';
    for (int i = 0; i < g.n; ++i) {
        out << i + 1 << ' ' << g.neighbors[i].size();
        for (int j : g.neighbors[i]) out << ' ' << j + 1;
        out << '\n';
    }
    return out.str();
}

std::vector<int> connected_components(const AdjacencyGraph& g) {
    std::vector<int> label(static_cast<std::size_t>(g.n), -1);
    int next = 0;
    std::vector<int> stack;
    for (int s = 0; s < g.n; ++s) {
        if (label[s] >= 0) continue;
        label[s] = next;
        stack.push_back(s);
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (int w : g.neighbors[v])
                if (label[w] < 0) {
                    label[w] = next;
                    stack.push_back(w);
                }
        }
        ++next;
    }
    return label;
}

SparseSym structure_matrix(StructureKind kind, int m, bool cyclic) {
    if (kind == StructureKind::iid) {
        if (m < 1) throw std::invalid_argument("iid: size must be >= 1");
        return SparseSym::identity(m);
    }
    const int order = kind == StructureKind::rw1 ? 1 : 2;
    const int min_size = order + 1;
    if (m < min_size)
        throw std::invalid_argument(std::string(order == 1 ? "rw1" : "rw2") + ": size must be >= " +
                                    std::to_string(min_size));
    // difference operator rows: (-1, 1) or (1, -2, 1)
    const std::vector<double> stencil = order == 1 ? std::vector<double>{-1.0, 1.0} : std::vector<double>{1.0, -2.0, 1.0};
    const int rows = cyclic ? m : m - order;
    std::vector<Triplet> d;
    for (int r = 0; r < rows; ++r)
        for (int k = 0; k <= order; ++k) d.emplace_back(r, (r + k) % m, stencil[k]);
    SpMat D(rows, m);
    D.setFromTriplets(d.begin(), d.end());
    const SpMat dtd = D.transpose() * D;
    std::vector<Triplet> t;
    for (int k = 0; k < dtd.outerSize(); ++k)
        for (SpMat::InnerIterator it(dtd, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    // from_triplets folds both triangles; keep only one copy of each off-diagonal pair
    std::vector<Triplet> lower;
    for (const auto& e : t)
        if (e.row() >= e.col()) lower.push_back(e);
    return SparseSym::from_triplets(m, lower);
}

SparseSym icar_structure(const AdjacencyGraph& g) {
    std::vector<Triplet> t;
    for (int i = 0; i < g.n; ++i) {
        t.emplace_back(i, i, static_cast<double>(g.neighbors[i].size()));
        for (int j : g.neighbors[i])
            if (j < i) t.emplace_back(i, j, -1.0);
    }
    return SparseSym::from_triplets(g.n, t);
}

Matrix structure_null_space(StructureKind kind, int m, bool cyclic) {
    if (kind == StructureKind::iid) return Matrix(0, m);
    if (kind == StructureKind::rw1 || cyclic) return Matrix::Ones(1, m);
    Matrix n(2, m);
    n.row(0).setOnes();
    for (int i = 0; i < m; ++i) n(1, i) = i - 0.5 * (m - 1);
    return n;
}

Matrix icar_null_space(const AdjacencyGraph& g) {
    const auto label = connected_components(g);
    const int k = label.empty() ? 0 : *std::max_element(label.begin(), label.end()) + 1;
    Matrix n = Matrix::Zero(k, g.n);
    for (int i = 0; i < g.n; ++i) n(label[i], i) = 1.0;
    return n;
}

Vector constrained_variances(const SparseSym& Qs, const Matrix& null_rows) {
    const int m = Qs.size();
    if (null_rows.rows() == 0) {
        const auto f = factorize(Qs);
        return partial_inverse(f).diagonal();
    }
    Matrix N = null_rows;
    for (int r = 0; r < N.rows(); ++r) N.row(r) /= N.row(r).norm();
    const double mean_diag = Qs.diagonal().mean();
    const double c = mean_diag > 0 ? mean_diag : 1.0;
    std::vector<Triplet> t;
    const Matrix ntn = c * N.transpose() * N;
    for (int j = 0; j < m; ++j)
        for (int i = j; i < m; ++i)
            if (ntn(i, j) != 0.0) t.emplace_back(i, j, ntn(i, j));
    const SparseSym augmented = Qs + SparseSym::from_triplets(m, t);
    const auto f = factorize(augmented);
    const Vector var = partial_inverse(f).diagonal();
    return constrain_moments(f, Vector::Zero(m), var, N, Vector::Zero(N.rows())).variance;
}

double compute_scaling(const SparseSym& Qs, const Matrix& null_rows) {
    const Vector var = constrained_variances(Qs, null_rows);
    const double vmax = var.maxCoeff();
    double sum_log = 0.0;
    int count = 0;
    for (int i = 0; i < var.size(); ++i)
        if (var(i) > 1e-10 * vmax) {
            sum_log += std::log(var(i));
            ++count;
        }
    if (count == 0) throw std::invalid_argument("compute_scaling: no positive marginal variance");
    return std::exp(sum_log / count);
}

SparseSym ar1_precision(int m, double tau, double rho) {
    if (!(tau > 0.0) || !(std::abs(rho) < 1.0)) throw std::domain_error("ar1: need tau > 0 and |rho| < 1");
    if (m == 1) return SparseSym::identity(1, tau);
    const double kappa = tau / (1.0 - rho * rho);
    std::vector<Triplet> t;
    for (int i = 0; i < m; ++i) {
        const bool end = i == 0 || i == m - 1;
        t.emplace_back(i, i, kappa * (end ? 1.0 : 1.0 + rho * rho));
        if (i > 0) t.emplace_back(i, i - 1, -rho * kappa);
    }
    return SparseSym::from_triplets(m, t);
}

const char* latent_name(LatentKind kind) {
    switch (kind) {
        case LatentKind::iid: return "iid";
        case LatentKind::rw1: return "rw1";
        case LatentKind::rw2: return "rw2";
        case LatentKind::ar1: return "ar1";
        case LatentKind::bym: return "bym";
        case LatentKind::bym2: return "bym2";
        case LatentKind::generic0: return "generic0";
    }
    return "?";
}

int ComponentPrecision::block_size() const {
    return kind == LatentKind::bym || kind == LatentKind::bym2 ? 2 * m : m;
}

int ComponentPrecision::hyper_count() const {
    return kind == LatentKind::ar1 || kind == LatentKind::bym || kind == LatentKind::bym2 ? 2 : 1;
}

SparseSym ComponentPrecision::assemble(std::span<const double> natural, double jitter_scale) const {
    if (static_cast<int>(natural.size()) != hyper_count())
        throw std::invalid_argument("assemble: wrong number of hyperparameters");
    const double eps = jitter * jitter_scale;
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::domain_error(std::string(what) + " must be positive");
    };
    switch (kind) {
        case LatentKind::iid:
        case LatentKind::rw1:
        case LatentKind::rw2:
        case LatentKind::generic0:
            positive(natural[0], "precision");
            return structure.scaled(natural[0]).with_jitter(eps);
        case LatentKind::ar1:
            return ar1_precision(m, natural[0], natural[1]);
        case LatentKind::bym:
        case LatentKind::bym2: {
            std::vector<Triplet> t;
            double d_bb, d_bu, d_uu, s_coef;
            if (kind == LatentKind::bym) {
                const double tau_v = natural[0], tau_u = natural[1];
                positive(tau_v, "iid precision");
                positive(tau_u, "spatial precision");
                d_bb = tau_v;
                d_bu = -tau_v;
                d_uu = tau_v;
                s_coef = tau_u;
            } else {
                const double tau = natural[0], phi = natural[1];
                positive(tau, "precision");
                if (!(phi > 0.0 && phi < 1.0)) throw std::domain_error("phi must lie in (0, 1)");
                d_bb = tau / (1.0 - phi);
                d_bu = -std::sqrt(tau * phi) / (1.0 - phi);
                d_uu = phi / (1.0 - phi);
                s_coef = 1.0;
            }
            for (int i = 0; i < m; ++i) {
                t.emplace_back(i, i, d_bb);
                t.emplace_back(m + i, i, d_bu);
                t.emplace_back(m + i, m + i, d_uu + eps);
            }
            const SpMat& L = structure.lower();
            for (int k = 0; k < L.outerSize(); ++k)
                for (SpMat::InnerIterator it(L, k); it; ++it)
                    t.emplace_back(m + it.row(), m + it.col(), s_coef * it.value());
            return SparseSym::from_triplets(2 * m, t);
        }
    }
    throw std::logic_error("assemble: unknown kind");
}

std::vector<double> ComponentPrecision::mixing_eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(structure.dense(), Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    std::vector<double> out;
    for (int i = 0; i < ev.size(); ++i)
        if (ev(i) > tol) out.push_back(1.0 / ev(i));
    return out;
}

ComponentPrecision make_component_precision(LatentKind kind, int m, const ComponentOptions& opts,
                                            const AdjacencyGraph* graph, const SparseSym* user_q) {
    ComponentPrecision c;
    c.kind = kind;
    c.m = m;
    c.cyclic = opts.cyclic;
    if (opts.cyclic && kind != LatentKind::rw1 && kind != LatentKind::rw2)
        throw std::invalid_argument("cyclic is only valid for rw1/rw2");
    Matrix null_rows;  // null space of the unscaled structure, over the structured sub-block
    bool scale = opts.scale_model;
    switch (kind) {
        case LatentKind::iid:
        case LatentKind::ar1:
            c.structure = structure_matrix(StructureKind::iid, m);
            null_rows = Matrix(0, m);
            scale = false;
            break;
        case LatentKind::rw1:
        case LatentKind::rw2: {
            const auto sk = kind == LatentKind::rw1 ? StructureKind::rw1 : StructureKind::rw2;
            c.structure = structure_matrix(sk, m, opts.cyclic);
            null_rows = structure_null_space(sk, m, opts.cyclic);
            break;
        }
        case LatentKind::bym:
        case LatentKind::bym2:
            if (!graph) throw std::invalid_argument(std::string(latent_name(kind)) + " requires a graph");
            if (graph->n != m) throw std::invalid_argument("graph size does not match component size");
            c.structure = icar_structure(*graph);
            null_rows = icar_null_space(*graph);
            if (kind == LatentKind::bym2) scale = true;
            break;
        case LatentKind::generic0:
            if (!user_q) throw std::invalid_argument("generic0 requires a precision matrix");
            if (user_q->size() != m) throw std::invalid_argument("generic0 matrix size does not match component");
            c.structure = *user_q;
            null_rows = Matrix(0, m);
            break;
    }
    c.rank_deficiency = static_cast<int>(null_rows.rows());
    if (scale) {
        c.scaling = compute_scaling(c.structure, null_rows);
        c.structure = c.structure.scaled(c.scaling);
    }
    const bool intrinsic = c.rank_deficiency > 0;
    if (intrinsic) c.jitter = 1e-5 * c.structure.diagonal().mean();

    // Constraint rows over the structured sub-block: one sum-to-zero row, or one per
    // connected component for graph models.
    Matrix sub;
    if (intrinsic || opts.constr) {
        if (kind == LatentKind::bym || kind == LatentKind::bym2)
            sub = null_rows;
        else
            sub = Matrix::Ones(1, m);
    }
    const int offset = kind == LatentKind::bym || kind == LatentKind::bym2 ? m : 0;
    c.constraints = Matrix::Zero(sub.rows(), c.block_size());
    if (sub.rows() > 0) c.constraints.middleCols(offset, m) = sub;
    return c;
}

}  // namespace lgm
