#include "lgm/sparse.hpp"

#include "lgm/errors.hpp"
#include "lgm/rng.hpp"

#include <Eigen/OrderingMethods>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lgm {

// ---------------------------------------------------------------------------
// SparseSym

SparseSym SparseSym::from_triplets(int n, const std::vector<Triplet>& entries) {
    if (n < 0) throw std::invalid_argument("SparseSym: negative dimension");
    std::vector<Triplet> lower;
    lower.reserve(entries.size() + static_cast<std::size_t>(n));
    for (const auto& t : entries) {
        int r = t.row(), c = t.col();
        if (r < 0 || c < 0 || r >= n || c >= n)
            throw std::out_of_range("SparseSym: triplet index out of range");
        if (!std::isfinite(t.value())) throw std::invalid_argument("SparseSym: non-finite entry");
        if (r < c) std::swap(r, c);
        lower.emplace_back(r, c, t.value());
    }
    for (int i = 0; i < n; ++i) lower.emplace_back(i, i, 0.0);
    SpMat m(n, n);
    m.setFromTriplets(lower.begin(), lower.end());
    m.makeCompressed();
    return SparseSym(std::move(m));
}

SparseSym SparseSym::identity(int n, double value) {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t.emplace_back(i, i, value);
    return from_triplets(n, t);
}

SparseSym SparseSym::from_dense(const Matrix& dense, double drop_tol) {
    if (dense.rows() != dense.cols()) throw std::invalid_argument("SparseSym: matrix not square");
    const int n = static_cast<int>(dense.rows());
    std::vector<Triplet> t;
    for (int j = 0; j < n; ++j)
        for (int i = j; i < n; ++i)
            if (i == j || std::abs(dense(i, j)) > drop_tol) t.emplace_back(i, j, dense(i, j));
    return from_triplets(n, t);
}

SparseSym SparseSym::block_diagonal(const std::vector<SparseSym>& blocks) {
    int n = 0;
    std::size_t nnz = 0;
    for (const auto& b : blocks) {
        n += b.size();
        nnz += static_cast<std::size_t>(b.lower().nonZeros());
    }
    std::vector<Triplet> t;
    t.reserve(nnz);
    int offset = 0;
    for (const auto& b : blocks) {
        for (int k = 0; k < b.lower().outerSize(); ++k)
            for (SpMat::InnerIterator it(b.lower(), k); it; ++it)
                t.emplace_back(offset + it.row(), offset + it.col(), it.value());
        offset += b.size();
    }
    return from_triplets(n, t);
}

SpMat SparseSym::full() const {
    SpMat upper = lower_.transpose();
    SpMat f = lower_ + upper;
    // the diagonal was counted twice
    for (int k = 0; k < f.outerSize(); ++k)
        for (SpMat::InnerIterator it(f, k); it; ++it)
            if (it.row() == it.col()) it.valueRef() *= 0.5;
    return f;
}

Matrix SparseSym::dense() const { return Matrix(full()); }

Vector SparseSym::diagonal() const {
    Vector d = Vector::Zero(size());
    for (int k = 0; k < lower_.outerSize(); ++k)
        for (SpMat::InnerIterator it(lower_, k); it; ++it)
            if (it.row() == it.col()) d(k) = it.value();
    return d;
}

Vector SparseSym::multiply(const Vector& v) const {
    if (v.size() != size()) throw std::invalid_argument("SparseSym::multiply: dimension mismatch");
    Vector out = Vector::Zero(size());
    for (int k = 0; k < lower_.outerSize(); ++k) {
        for (SpMat::InnerIterator it(lower_, k); it; ++it) {
            const int r = it.row();
            out(r) += it.value() * v(k);
            if (r != k) out(k) += it.value() * v(r);
        }
    }
    return out;
}

double SparseSym::quadratic_form(const Vector& v) const { return v.dot(multiply(v)); }

SparseSym SparseSym::scaled(double factor) const {
    SpMat m = lower_ * factor;
    return SparseSym(std::move(m));
}

SparseSym SparseSym::with_jitter(double jitter) const {
    SpMat m = lower_;
    if (jitter != 0.0)
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it)
                if (it.row() == it.col()) it.valueRef() += jitter;
    return SparseSym(std::move(m));
}

SparseSym SparseSym::operator+(const SparseSym& other) const {
    if (other.size() != size()) throw std::invalid_argument("SparseSym: dimension mismatch in +");
    SpMat m = lower_ + other.lower_;
    m.makeCompressed();
    return SparseSym(std::move(m));
}

SparseSym SparseSym::plus_weighted_gram(const SpMat& B, const Vector& w) const {
    if (B.cols() != size() || B.rows() != w.size())
        throw std::invalid_argument("SparseSym::plus_weighted_gram: dimension mismatch");
    SpMat gram = SpMat(B.transpose() * w.asDiagonal() * B).triangularView<Eigen::Lower>();
    SpMat m = lower_ + gram;
    m.makeCompressed();
    return SparseSym(std::move(m));
}

bool SparseSym::operator==(const SparseSym& other) const {
    if (size() != other.size()) return false;
    return (dense() - other.dense()).cwiseAbs().maxCoeff() == 0.0;
}

// ---------------------------------------------------------------------------
// Cholesky

namespace {

// Upper triangle of the symmetrically permuted matrix, column k holding rows <= k.
struct UpperCsc {
    int n = 0;
    std::vector<int> p, i;
    std::vector<double> x;
};

UpperCsc permuted_upper(const SpMat& lower, const std::vector<int>& inv_perm, double jitter) {
    const int n = static_cast<int>(lower.rows());
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(lower.nonZeros()));
    for (int k = 0; k < lower.outerSize(); ++k)
        for (SpMat::InnerIterator it(lower, k); it; ++it) {
            int a = inv_perm[it.row()], b = inv_perm[it.col()];
            if (a > b) std::swap(a, b);
            double v = it.value();
            if (it.row() == it.col()) v += jitter;
            t.emplace_back(a, b, v);
        }
    SpMat up(n, n);
    up.setFromTriplets(t.begin(), t.end());
    up.makeCompressed();
    UpperCsc u;
    u.n = n;
    u.p.assign(up.outerIndexPtr(), up.outerIndexPtr() + n + 1);
    u.i.assign(up.innerIndexPtr(), up.innerIndexPtr() + up.nonZeros());
    u.x.assign(up.valuePtr(), up.valuePtr() + up.nonZeros());
    return u;
}

std::vector<int> elimination_tree(const UpperCsc& a) {
    std::vector<int> parent(a.n, -1), ancestor(a.n, -1);
    for (int k = 0; k < a.n; ++k) {
        for (int p = a.p[k]; p < a.p[k + 1]; ++p) {
            int i = a.i[p];
            while (i != -1 && i < k) {
                const int next = ancestor[i];
                ancestor[i] = k;
                if (next == -1) parent[i] = k;
                i = next;
            }
        }
    }
    return parent;
}

// Nonzero pattern of row k of L (columns < k), written to s[top..n).
int row_pattern(const UpperCsc& a, int k, const std::vector<int>& parent, std::vector<int>& s,
                std::vector<int>& mark) {
    int top = a.n;
    mark[k] = k;
    for (int p = a.p[k]; p < a.p[k + 1]; ++p) {
        int i = a.i[p];
        if (i > k) continue;
        int len = 0;
        for (; mark[i] != k; i = parent[i]) {
            s[len++] = i;
            mark[i] = k;
        }
        while (len > 0) s[--top] = s[--len];
    }
    return top;
}

}  // namespace

CholFactor factorize(const SparseSym& Q, double jitter) {
    const int n = Q.size();
    CholFactor f;
    f.perm_.resize(n);
    f.inv_perm_.resize(n);
    if (n == 0) {
        f.L_ = SpMat(0, 0);
        return f;
    }

    SpMat full = Q.full();
    Eigen::AMDOrdering<int> amd;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
    amd(full, pinv);
    for (int k = 0; k < n; ++k) f.perm_[k] = pinv.indices()(k);
    for (int k = 0; k < n; ++k) f.inv_perm_[f.perm_[k]] = k;

    const UpperCsc a = permuted_upper(Q.lower(), f.inv_perm_, jitter);
    const std::vector<int> parent = elimination_tree(a);

    double max_diag = 0.0;
    for (int k = 0; k < n; ++k)
        for (int p = a.p[k]; p < a.p[k + 1]; ++p)
            if (a.i[p] == k) max_diag = std::max(max_diag, std::abs(a.x[p]));
    const double pivot_tol = 1e-12 * max_diag;

    // symbolic: column counts of L
    std::vector<int> s(n), mark(n, -1), count(n, 1);
    for (int k = 0; k < n; ++k) {
        const int top = row_pattern(a, k, parent, s, mark);
        for (int t = top; t < n; ++t) ++count[s[t]];
    }
    std::vector<int> Lp(n + 1, 0);
    for (int k = 0; k < n; ++k) Lp[k + 1] = Lp[k] + count[k];
    std::vector<int> Li(Lp[n]);
    std::vector<double> Lx(Lp[n]);

    // numeric: up-looking, one row of L per step
    std::vector<int> next(Lp.begin(), Lp.end() - 1);
    std::vector<double> x(n, 0.0);
    std::fill(mark.begin(), mark.end(), -1);
    for (int k = 0; k < n; ++k) {
        const int top = row_pattern(a, k, parent, s, mark);
        x[k] = 0.0;
        for (int p = a.p[k]; p < a.p[k + 1]; ++p)
            if (a.i[p] <= k) x[a.i[p]] = a.x[p];
        double d = x[k];
        x[k] = 0.0;
        for (int t = top; t < n; ++t) {
            const int i = s[t];
            const double lki = x[i] / Lx[Lp[i]];
            x[i] = 0.0;
            for (int p = Lp[i] + 1; p < next[i]; ++p) x[Li[p]] -= Lx[p] * lki;
            d -= lki * lki;
            const int p = next[i]++;
            Li[p] = k;
            Lx[p] = lki;
        }
        if (!(d > pivot_tol) || !std::isfinite(d)) throw NotPositiveDefinite(f.perm_[k]);
        const int p = next[k]++;
        Li[p] = k;
        Lx[p] = std::sqrt(d);
    }

    f.L_ = SpMat(n, n);
    f.L_.resizeNonZeros(Lp[n]);
    std::copy(Lp.begin(), Lp.end(), f.L_.outerIndexPtr());
    std::copy(Li.begin(), Li.end(), f.L_.innerIndexPtr());
    std::copy(Lx.begin(), Lx.end(), f.L_.valuePtr());

    double logdet = 0.0;
    for (int k = 0; k < n; ++k) logdet += std::log(Lx[Lp[k]]);
    f.logdet_ = 2.0 * logdet;
    return f;
}

namespace {

void lower_solve_inplace(const SpMat& L, Vector& x) {
    const int n = static_cast<int>(L.cols());
    const int* Lp = L.outerIndexPtr();
    const int* Li = L.innerIndexPtr();
    const double* Lx = L.valuePtr();
    for (int j = 0; j < n; ++j) {
        x(j) /= Lx[Lp[j]];
        const double xj = x(j);
        for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) x(Li[p]) -= Lx[p] * xj;
    }
}

void lower_transpose_solve_inplace(const SpMat& L, Vector& x) {
    const int n = static_cast<int>(L.cols());
    const int* Lp = L.outerIndexPtr();
    const int* Li = L.innerIndexPtr();
    const double* Lx = L.valuePtr();
    for (int j = n - 1; j >= 0; --j) {
        double v = x(j);
        for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) v -= Lx[p] * x(Li[p]);
        x(j) = v / Lx[Lp[j]];
    }
}

}  // namespace

Vector CholFactor::solve(const Vector& b) const {
    const int n = size();
    if (b.size() != n) throw std::invalid_argument("CholFactor::solve: dimension mismatch");
    Vector y(n);
    for (int k = 0; k < n; ++k) y(k) = b(perm_[k]);
    lower_solve_inplace(L_, y);
    lower_transpose_solve_inplace(L_, y);
    Vector out(n);
    for (int k = 0; k < n; ++k) out(perm_[k]) = y(k);
    return out;
}

Matrix CholFactor::solve(const Matrix& B) const {
    if (B.rows() != size()) throw std::invalid_argument("CholFactor::solve: dimension mismatch");
    Matrix out(B.rows(), B.cols());
    for (Eigen::Index c = 0; c < B.cols(); ++c) out.col(c) = solve(Vector(B.col(c)));
    return out;
}

Vector CholFactor::backsolve_transpose(const Vector& z) const {
    const int n = size();
    if (z.size() != n) throw std::invalid_argument("CholFactor: dimension mismatch");
    Vector w = z;
    lower_transpose_solve_inplace(L_, w);
    Vector out(n);
    for (int k = 0; k < n; ++k) out(perm_[k]) = w(k);
    return out;
}

Vector solve(const CholFactor& factor, const Vector& b) { return factor.solve(b); }

// ---------------------------------------------------------------------------
// Takahashi recursion

PartialInverse partial_inverse(const CholFactor& factor) {
    PartialInverse out;
    out.perm_ = factor.perm();
    out.inv_perm_.resize(out.perm_.size());
    for (std::size_t k = 0; k < out.perm_.size(); ++k) out.inv_perm_[out.perm_[k]] = static_cast<int>(k);

    const SpMat& L = factor.L();
    out.sigma_ = L;  // same pattern
    const int n = static_cast<int>(L.cols());
    const int* Lp = L.outerIndexPtr();
    const int* Li = L.innerIndexPtr();
    const double* Lx = L.valuePtr();
    double* Sx = out.sigma_.valuePtr();

    auto lookup = [&](int i, int k) -> double {
        if (i < k) std::swap(i, k);
        const int* begin = Li + Lp[k];
        const int* end = Li + Lp[k + 1];
        const int* it = std::lower_bound(begin, end, i);
        if (it == end || *it != i) throw std::logic_error("Takahashi recursion: pattern not closed");
        return Sx[it - Li];
    };

    for (int j = n - 1; j >= 0; --j) {
        const double ljj = Lx[Lp[j]];
        // off-diagonal entries of column j, any order: their dependencies live in later columns
        for (int q = Lp[j + 1] - 1; q > Lp[j]; --q) {
            const int i = Li[q];
            double acc = 0.0;
            for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) acc += Lx[p] * lookup(i, Li[p]);
            Sx[q] = -acc / ljj;
        }
        double acc = 0.0;
        for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) acc += Lx[p] * Sx[p];
        Sx[Lp[j]] = 1.0 / (ljj * ljj) - acc / ljj;
    }
    return out;
}

const double* PartialInverse::find(int i, int j) const {
    if (i < 0 || j < 0 || i >= size() || j >= size()) return nullptr;
    int a = inv_perm_[i], b = inv_perm_[j];
    if (a < b) std::swap(a, b);
    const int* Lp = sigma_.outerIndexPtr();
    const int* Li = sigma_.innerIndexPtr();
    const int* begin = Li + Lp[b];
    const int* end = Li + Lp[b + 1];
    const int* it = std::lower_bound(begin, end, a);
    if (it == end || *it != a) return nullptr;
    return sigma_.valuePtr() + (it - Li);
}

double PartialInverse::operator()(int i, int j) const {
    const double* v = find(i, j);
    if (!v) throw std::out_of_range("PartialInverse: entry outside the factor pattern");
    return *v;
}

bool PartialInverse::contains(int i, int j) const { return find(i, j) != nullptr; }

Vector PartialInverse::diagonal() const {
    const int n = size();
    Vector d(n);
    const int* Lp = sigma_.outerIndexPtr();
    for (int k = 0; k < n; ++k) d(perm_[k]) = sigma_.valuePtr()[Lp[k]];
    return d;
}

SparseSym PartialInverse::to_sparse() const {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(sigma_.nonZeros()));
    for (int k = 0; k < sigma_.outerSize(); ++k)
        for (SpMat::InnerIterator it(sigma_, k); it; ++it)
            t.emplace_back(perm_[it.row()], perm_[it.col()], it.value());
    return SparseSym::from_triplets(size(), t);
}

// ---------------------------------------------------------------------------
// sampling and constraints

Vector sample_canonical(const CholFactor& factor, const Vector& mean, Rng& rng) {
    if (mean.size() != factor.size()) throw std::invalid_argument("sample_canonical: dimension mismatch");
    Vector z(factor.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    return mean + factor.backsolve_transpose(z);
}

Vector sample_canonical(const CholFactor& factor, const Vector& mean, std::uint64_t seed) {
    Rng rng(seed);
    return sample_canonical(factor, mean, rng);
}

ConstraintSystem::ConstraintSystem(const CholFactor& factor, const Matrix& C) : C_(C) {
    if (C.rows() == 0) return;
    if (C.cols() != factor.size()) throw std::invalid_argument("ConstraintSystem: dimension mismatch");
    W_ = factor.solve(Matrix(C.transpose()));
    Matrix S = C * W_;
    S = 0.5 * (S + S.transpose());
    S_llt_.compute(S);
    const double scale = S.diagonal().cwiseAbs().maxCoeff();
    if (S_llt_.info() != Eigen::Success || !(scale > 0.0))
        throw SingularConstraint("constraint matrix C Q^{-1} C^T is singular");
    const Vector d = Matrix(S_llt_.matrixL()).diagonal();
    if (d.minCoeff() * d.minCoeff() <= 1e-13 * scale)
        throw SingularConstraint("constraint matrix C Q^{-1} C^T is singular");
    logdet_S_ = 2.0 * d.array().log().sum();
}

Vector ConstraintSystem::correct(const Vector& x, const Vector& e) const {
    if (empty()) return x;
    return x - W_ * S_llt_.solve(C_ * x - e);
}

Vector ConstraintSystem::variance_reduction() const {
    if (empty()) return Vector();
    const Matrix M = S_llt_.matrixL().solve(W_.transpose());  // k x n
    return M.colwise().squaredNorm().transpose();
}

double ConstraintSystem::variance_reduction(const std::vector<std::pair<int, double>>& row) const {
    if (empty()) return 0.0;
    Vector u = Vector::Zero(W_.cols());
    for (const auto& [j, a] : row) u += a * W_.row(j).transpose();
    return u.dot(S_llt_.solve(u));
}

ConstrainedMoments constrain_moments(const CholFactor& factor, const Vector& mean,
                                     const Vector& diag_var, const Matrix& C, const Vector& e) {
    if (mean.size() != factor.size() || diag_var.size() != factor.size() || e.size() != C.rows())
        throw std::invalid_argument("constrain_moments: dimension mismatch");
    if (C.rows() == 0) return {mean, diag_var};
    const ConstraintSystem sys(factor, C);
    return {sys.correct(mean, e), diag_var - sys.variance_reduction()};
}

}  // namespace lgm
