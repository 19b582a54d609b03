#pragma once

#include "lgm/pchip.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace lgm {

/// Univariate density stored on an ascending grid, interpolated by PCHIP.
/// The CDF integrates the interpolant exactly and is normalised to end at 1.
class Marginal {
public:
    Marginal() = default;
    /// Requires n >= 5 strictly increasing abscissae, finite nonnegative densities and
    /// trapezoid mass within [0.99, 1.01].
    Marginal(std::vector<double> x, std::vector<double> density);
    /// Rescales `density` to unit trapezoid mass before constructing.
    static Marginal normalized(std::vector<double> x, std::vector<double> density);

    const std::vector<double>& x() const { return interp_.x(); }
    const std::vector<double>& density() const { return interp_.y(); }
    double lower() const { return x().front(); }
    double upper() const { return x().back(); }
    bool empty() const { return x().empty(); }

    double pdf(double t) const;
    double cdf(double t) const;
    double quantile(double p) const;

private:
    Pchip interp_;
    std::vector<double> cum_;  // unnormalised integral up to each node
};

double dmarginal(double x, const Marginal& m);
double pmarginal(double x, const Marginal& m);
double qmarginal(double p, const Marginal& m);

/// Density of g(X). Without `dg` the derivative is taken by central differences.
/// Throws std::invalid_argument when g is not strictly monotone on the grid.
Marginal tmarginal(const std::function<double(double)>& g, const Marginal& m,
                   const std::function<double(double)>& dg = {});

/// E[g(X)] by the trapezoid rule on a 4x refined grid.
double emarginal(const std::function<double(double)>& g, const Marginal& m);

/// Shortest interval holding `level` of the mass; throws MultimodalMarginal when the
/// highest-density region is not a single interval.
std::pair<double, double> hpdmarginal(double level, const Marginal& m);

struct MarginalSummary {
    double mean = 0, sd = 0, median = 0, q025 = 0, q975 = 0;
};
MarginalSummary zmarginal(const Marginal& m);
double mmarginal(const Marginal& m);
std::vector<double> rmarginal(int n, const Marginal& m, std::uint64_t seed);

/// Two columns "x,density", 12 significant digits.
std::string format_marginal_csv(const Marginal& m);
Marginal parse_marginal_csv(const std::string& text, const std::string& source = "marginal");
Marginal read_marginal_csv(const std::string& path);

}  // namespace lgm
