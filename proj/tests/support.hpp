#pragma once

#include "lgm/model.hpp"
#include "lgm/sparse.hpp"
#include "lgm/spec_io.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

using lgm::Matrix;
using lgm::Vector;

inline std::string data_path(const std::string& rel) { return std::string(LGM_DATA_DIR) + "/" + rel; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("lgm_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Random SPD matrix with a sparse off-diagonal pattern, dominant diagonal.
inline Matrix random_spd(int n, double density, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), coin(0.0, 1.0);
    Matrix a = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = j + 1; i < n; ++i)
            if (coin(gen) < density) a(i, j) = a(j, i) = u(gen);
    for (int i = 0; i < n; ++i) a(i, i) = a.row(i).cwiseAbs().sum() + 0.5 + coin(gen);
    return a;
}

inline double dense_logdet(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Covariance of N(0, Q^+) conditioned on N x = 0, Q singular with null space spanned by N's rows.
inline Matrix constrained_covariance(const Matrix& q, const Matrix& n) {
    const Matrix aug = q + n.transpose() * n;
    const Matrix s = aug.inverse();
    const Matrix w = s * n.transpose();
    return s - w * (n * w).inverse() * w.transpose();
}

inline double geometric_mean(const Vector& v) { return std::exp(v.array().log().mean()); }

/// Pearson correlation.
inline double correlation(const Vector& a, const Vector& b) {
    const Vector da = a.array() - a.mean(), db = b.array() - b.mean();
    return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

/// Central differences of order four.
template <class F>
double diff1(F f, double x, double h = 1e-3) {
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}
template <class F>
double diff2(F f, double x, double h = 1e-3) {
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h);
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Table from named numeric columns.
inline lgm::DataTable make_table(const std::vector<std::pair<std::string, std::vector<double>>>& cols) {
    lgm::DataTable t(cols.empty() ? 0 : static_cast<int>(cols.front().second.size()));
    for (const auto& [name, values] : cols) t.add_numeric(name, values);
    return t;
}

}  // namespace testing
