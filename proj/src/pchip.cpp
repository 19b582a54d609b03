#include "lgm/pchip.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lgm {

namespace {

double end_slope(double h0, double h1, double d0, double d1) {
    double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if ((m > 0) != (d0 > 0) || d0 == 0.0) {
        m = 0.0;
    } else if ((d0 > 0) != (d1 > 0) && std::abs(m) > 3.0 * std::abs(d0)) {
        m = 3.0 * d0;
    }
    return m;
}

}  // namespace

std::vector<double> pchip_slopes(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    std::vector<double> m(n, 0.0);
    if (n < 2) return m;
    std::vector<double> h(n - 1), d(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        h[k] = x[k + 1] - x[k];
        d[k] = (y[k + 1] - y[k]) / h[k];
    }
    if (n == 2) {
        m[0] = m[1] = d[0];
        return m;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (d[k - 1] * d[k] <= 0.0) {
            m[k] = 0.0;
        } else {
            const double w1 = 2.0 * h[k] + h[k - 1];
            const double w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
        }
    }
    m[0] = end_slope(h[0], h[1], d[0], d[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    return m;
}

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    if (x_.size() != y_.size() || x_.size() < 2) throw std::invalid_argument("Pchip: need >= 2 points");
    for (std::size_t k = 1; k < x_.size(); ++k)
        if (!(x_[k] > x_[k - 1])) throw std::invalid_argument("Pchip: abscissae not increasing");
    m_ = pchip_slopes(x_, y_);
}

int Pchip::cell(double t) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), t);
    int k = static_cast<int>(it - x_.begin()) - 1;
    return std::clamp(k, 0, static_cast<int>(x_.size()) - 2);
}

double Pchip::operator()(double t) const {
    const int k = cell(t);
    const double h = x_[k + 1] - x_[k];
    const double s = (t - x_[k]) / h;
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * y_[k] + h10 * h * m_[k] + h01 * y_[k + 1] + h11 * h * m_[k + 1];
}

double Pchip::integrate_cell(int k, double t) const {
    const double h = x_[k + 1] - x_[k];
    const double s = std::clamp((t - x_[k]) / h, 0.0, 1.0);
    const double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
    // antiderivatives of the Hermite basis on [0, s]
    const double H00 = s4 / 2 - s3 + s, H10 = s4 / 4 - 2 * s3 / 3 + s2 / 2;
    const double H01 = -s4 / 2 + s3, H11 = s4 / 4 - s3 / 3;
    return h * (H00 * y_[k] + H10 * h * m_[k] + H01 * y_[k + 1] + H11 * h * m_[k + 1]);
}

}  // namespace lgm
