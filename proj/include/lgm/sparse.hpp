#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <vector>

namespace lgm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

class Rng;

/// Symmetric matrix stored as its lower triangle in compressed columns.
/// Every diagonal entry is structurally present (possibly zero).
class SparseSym {
public:
    SparseSym() = default;

    /// Entries from either triangle are folded into the lower one; duplicates add.
    static SparseSym from_triplets(int n, const std::vector<Triplet>& entries);
    static SparseSym identity(int n, double value = 1.0);
    static SparseSym from_dense(const Matrix& dense, double drop_tol = 0.0);
    /// Block-diagonal stacking.
    static SparseSym block_diagonal(const std::vector<SparseSym>& blocks);

    int size() const { return static_cast<int>(lower_.rows()); }
    const SpMat& lower() const { return lower_; }
    SpMat full() const;
    Matrix dense() const;
    Vector diagonal() const;
    Vector multiply(const Vector& v) const;
    double quadratic_form(const Vector& v) const;

    SparseSym scaled(double factor) const;
    SparseSym with_jitter(double jitter) const;
    SparseSym operator+(const SparseSym& other) const;
    /// Adds B^T diag(w) B, where B has `size()` columns.
    SparseSym plus_weighted_gram(const SpMat& B, const Vector& w) const;

    bool operator==(const SparseSym& other) const;

private:
    explicit SparseSym(SpMat lower) : lower_(std::move(lower)) {}
    SpMat lower_;
};

/// Fill-reducing permuted Cholesky factor: Q(perm, perm) = L L^T.
class CholFactor {
public:
    int size() const { return static_cast<int>(perm_.size()); }
    double logdet() const { return logdet_; }
    /// perm()[new] = old.
    const std::vector<int>& perm() const { return perm_; }
    const SpMat& L() const { return L_; }

    Vector solve(const Vector& b) const;
    Matrix solve(const Matrix& B) const;
    /// Returns P^T L^{-T} z, a draw with covariance Q^{-1} when z is standard normal.
    Vector backsolve_transpose(const Vector& z) const;

private:
    friend CholFactor factorize(const SparseSym& Q, double jitter);
    std::vector<int> perm_;
    std::vector<int> inv_perm_;
    SpMat L_;
    double logdet_ = 0.0;
};

/// Factorizes Q + jitter I under an approximate-minimum-degree ordering.
/// Throws NotPositiveDefinite (original row index) when a pivot falls below
/// 1e-12 times the largest diagonal entry.
CholFactor factorize(const SparseSym& Q, double jitter = 0.0);

Vector solve(const CholFactor& factor, const Vector& b);

/// Entries of Q^{-1} on the symmetric pattern of L + L^T, from the Takahashi recursion.
class PartialInverse {
public:
    int size() const { return static_cast<int>(perm_.size()); }
    /// Covariance entry for original indices; throws std::out_of_range off-pattern.
    double operator()(int i, int j) const;
    bool contains(int i, int j) const;
    Vector diagonal() const;
    /// The computed entries as a symmetric sparse matrix in original ordering.
    SparseSym to_sparse() const;

private:
    friend PartialInverse partial_inverse(const CholFactor& factor);
    const double* find(int i, int j) const;
    std::vector<int> perm_;
    std::vector<int> inv_perm_;
    SpMat sigma_;  // lower triangle in permuted ordering, same pattern as L
};

PartialInverse partial_inverse(const CholFactor& factor);

/// Exact draw from N(mean, Q^{-1}).
Vector sample_canonical(const CholFactor& factor, const Vector& mean, Rng& rng);
Vector sample_canonical(const CholFactor& factor, const Vector& mean, std::uint64_t seed);

/// Conditioning-by-kriging pieces for linear constraints C x = e under precision Q:
/// W = Q^{-1} C^T and S = C Q^{-1} C^T.
class ConstraintSystem {
public:
    ConstraintSystem() = default;
    ConstraintSystem(const CholFactor& factor, const Matrix& C);

    bool empty() const { return C_.rows() == 0; }
    int rows() const { return static_cast<int>(C_.rows()); }
    const Matrix& C() const { return C_; }
    const Matrix& W() const { return W_; }
    double logdet_S() const { return logdet_S_; }

    /// x - W S^{-1} (C x - e).
    Vector correct(const Vector& x, const Vector& e) const;
    /// Diagonal of W S^{-1} W^T.
    Vector variance_reduction() const;
    /// a^T W S^{-1} W^T a for a sparse row a.
    double variance_reduction(const std::vector<std::pair<int, double>>& row) const;

private:
    Matrix C_;
    Matrix W_;
    Eigen::LLT<Matrix> S_llt_;
    double logdet_S_ = 0.0;
};

struct ConstrainedMoments {
    Vector mean;
    Vector variance;
};

ConstrainedMoments constrain_moments(const CholFactor& factor, const Vector& mean,
                                     const Vector& diag_var, const Matrix& C, const Vector& e);

}  // namespace lgm
