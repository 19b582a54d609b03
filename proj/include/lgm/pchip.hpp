#pragma once

#include <span>
#include <vector>

namespace lgm {

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes with the
/// three-point shape-preserving end condition).
class Pchip {
public:
    Pchip() = default;
    Pchip(std::vector<double> x, std::vector<double> y);

    double operator()(double t) const;
    /// Integral of the interpolant over [x[k], x[k+1]] up to `t` (t within the cell).
    double integrate_cell(int k, double t) const;
    /// Index k with x[k] <= t < x[k+1], clamped to the valid cell range.
    int cell(double t) const;

    const std::vector<double>& x() const { return x_; }
    const std::vector<double>& y() const { return y_; }
    const std::vector<double>& slopes() const { return m_; }

private:
    std::vector<double> x_, y_, m_;
};

std::vector<double> pchip_slopes(std::span<const double> x, std::span<const double> y);

}  // namespace lgm
