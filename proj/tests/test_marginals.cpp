#include "doctest.h"
#include "support.hpp"

#include "lgm/errors.hpp"
#include "lgm/marginals.hpp"

#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

using namespace lgm;

namespace {

Marginal normal_grid(double mu = 0.0, double sd = 1.0, int n = 201, double width = 8.0) {
    std::vector<double> x, d;
    for (int i = 0; i < n; ++i) {
        const double t = mu - width * sd + 2.0 * width * sd * i / (n - 1);
        x.push_back(t);
        d.push_back(std::exp(-0.5 * std::pow((t - mu) / sd, 2)) / (sd * std::sqrt(2 * M_PI)));
    }
    return Marginal(x, d);
}

Marginal lognormal_grid(int n = 400) {
    boost::math::lognormal_distribution<> ln(0.0, 1.0);
    std::vector<double> x, d;
    for (int i = 0; i < n; ++i) {
        const double t = 1e-4 + 40.0 * std::pow(static_cast<double>(i) / (n - 1), 2.5);
        x.push_back(t);
        d.push_back(boost::math::pdf(ln, t));
    }
    return Marginal::normalized(x, d);
}

}  // namespace

TEST_CASE("construction rules") {
    CHECK_THROWS(Marginal({0, 1, 2, 3}, {0.1, 0.4, 0.4, 0.1}));                // too few points
    CHECK_THROWS(Marginal({0, 1, 1, 2, 3}, {0.1, 0.3, 0.3, 0.3, 0.1}));        // not increasing
    CHECK_THROWS(Marginal({0, 1, 2, 3, 4}, {0.1, -0.3, 0.3, 0.3, 0.1}));       // negative
    CHECK_THROWS(Marginal({0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}));                   // mass 4
    CHECK_NOTHROW(Marginal::normalized({0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}));
}

TEST_CASE("dmarginal") {
    const auto m = normal_grid();
    CHECK(dmarginal(-9.0, m) == 0.0);
    CHECK(dmarginal(9.0, m) == 0.0);
    CHECK(dmarginal(m.x()[57], m) == m.density()[57]);
    CHECK(dmarginal(0.0, m) == doctest::Approx(0.3989).epsilon(1e-4));
    CHECK(dmarginal(0.33, m) == doctest::Approx(std::exp(-0.5 * 0.33 * 0.33) / std::sqrt(2 * M_PI)).epsilon(1e-4));
}

TEST_CASE("pmarginal and qmarginal") {
    const auto m = normal_grid(1.5, 2.0);
    CHECK(pmarginal(1.5, m) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(pmarginal(m.lower(), m) == 0.0);
    CHECK(pmarginal(m.upper(), m) == 1.0);
    CHECK(pmarginal(-100, m) == 0.0);
    CHECK(pmarginal(100, m) == 1.0);
    boost::math::normal_distribution<> nd(1.5, 2.0);
    for (double x : {-3.0, 0.0, 2.2, 5.0}) {
        CHECK(pmarginal(x, m) == doctest::Approx(boost::math::cdf(nd, x)).epsilon(1e-5));
        CHECK(std::abs(qmarginal(pmarginal(x, m), m) - x) < 1e-4);
    }
    double prev = -1.0;
    for (double x = m.lower(); x <= m.upper(); x += 0.01) {
        const double f = pmarginal(x, m);
        CHECK(f >= prev);
        prev = f;
    }
    CHECK(qmarginal(0.0, m) == m.lower());
    CHECK(pmarginal(qmarginal(1.0, m), m) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tmarginal") {
    const auto m = normal_grid();
    const auto same = tmarginal([](double t) { return t; }, m);
    for (std::size_t i = 0; i < m.x().size(); ++i) CHECK(std::abs(same.density()[i] - m.density()[i]) < 1e-10);

    const auto ln = tmarginal([](double t) { return std::exp(t); }, m);
    boost::math::lognormal_distribution<> ref(0.0, 1.0);
    CHECK(dmarginal(1.0, ln) == doctest::Approx(0.3989).epsilon(1e-3));
    for (double y : {0.2, 0.7, 1.0, 2.5, 6.0}) CHECK(std::abs(dmarginal(y, ln) - boost::math::pdf(ref, y)) < 1e-3);

    // log precision to standard deviation: decreasing maps are fine.
    const auto sd = tmarginal([](double t) { return std::exp(-t / 2); }, m);
    CHECK(sd.lower() > 0.0);
    CHECK(emarginal([](double) { return 1.0; }, sd) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(tmarginal([](double t) { return t * t; }, m), std::invalid_argument);
}

TEST_CASE("emarginal") {
    const auto m = normal_grid(0.7, 1.3);
    CHECK(emarginal([](double) { return 1.0; }, m) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(emarginal([](double t) { return t; }, m) == doctest::Approx(0.7).epsilon(1e-6));
    const auto z = normal_grid();
    CHECK(emarginal([](double t) { return std::exp(t); }, z) == doctest::Approx(std::exp(0.5)).epsilon(1e-3));
}

TEST_CASE("transformed mean agrees with emarginal") {
    const auto m = normal_grid(0.2, 0.4);
    auto g = [](double t) { return std::exp(t); };
    const auto t = tmarginal(g, m);
    CHECK(std::abs(zmarginal(t).mean - emarginal(g, m)) < 1e-4);
}

TEST_CASE("hpdmarginal") {
    const auto m = normal_grid();
    const auto [lo, hi] = hpdmarginal(0.95, m);
    CHECK(lo == doctest::Approx(qmarginal(0.025, m)).epsilon(1e-3));
    CHECK(hi == doctest::Approx(qmarginal(0.975, m)).epsilon(1e-3));
    CHECK(pmarginal(hi, m) - pmarginal(lo, m) == doctest::Approx(0.95).epsilon(1e-4));

    const auto ln = lognormal_grid();
    const auto [a, b] = hpdmarginal(0.95, ln);
    CHECK(pmarginal(b, ln) - pmarginal(a, ln) == doctest::Approx(0.95).epsilon(1e-4));
    CHECK(b - a < qmarginal(0.975, ln) - qmarginal(0.025, ln));

    const auto full = hpdmarginal(1.0, m);
    CHECK(full.first == m.lower());
    CHECK(full.second == m.upper());
}

TEST_CASE("hpdmarginal rejects a bimodal density") {
    std::vector<double> x, d;
    for (int i = 0; i < 301; ++i) {
        const double t = -10 + 20.0 * i / 300;
        x.push_back(t);
        d.push_back(std::exp(-0.5 * (t - 4) * (t - 4)) + std::exp(-0.5 * (t + 4) * (t + 4)));
    }
    CHECK_THROWS_AS(hpdmarginal(0.95, Marginal::normalized(x, d)), MultimodalMarginal);
}

TEST_CASE("zmarginal and mmarginal") {
    const auto z = zmarginal(normal_grid());
    CHECK(std::abs(z.mean) < 1e-4);
    CHECK(std::abs(z.sd - 1.0) < 1e-3);
    CHECK(std::abs(z.median) < 1e-4);
    CHECK(z.q025 == doctest::Approx(-1.959964).epsilon(1e-4));
    CHECK(z.q975 == doctest::Approx(1.959964).epsilon(1e-4));
    const auto m = normal_grid(2.0, 0.5);
    CHECK(std::abs(mmarginal(m) - 2.0) < m.x()[1] - m.x()[0]);
    // Lognormal(0, 1) mode is exp(-1).
    CHECK(mmarginal(lognormal_grid(2000)) == doctest::Approx(std::exp(-1.0)).epsilon(2e-2));
}

TEST_CASE("rmarginal matches the CDF") {
    const auto m = lognormal_grid();
    const int n = 10000;
    auto s = rmarginal(n, m, 42);
    CHECK(s == rmarginal(n, m, 42));
    CHECK(s != rmarginal(n, m, 43));
    std::sort(s.begin(), s.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = pmarginal(s[i], m);
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    CHECK(ks < 0.02);
}

TEST_CASE("operations leave the input untouched") {
    const auto m = normal_grid();
    const auto x = m.x(), d = m.density();
    (void)tmarginal([](double t) { return 2 * t + 1; }, m);
    (void)hpdmarginal(0.9, m);
    (void)rmarginal(10, m, 1);
    (void)zmarginal(m);
    CHECK(m.x() == x);
    CHECK(m.density() == d);
}

TEST_CASE("csv round trip") {
    const auto m = normal_grid(0.3, 0.8, 75);
    const auto back = parse_marginal_csv(format_marginal_csv(m));
    REQUIRE(back.x().size() == m.x().size());
    for (std::size_t i = 0; i < m.x().size(); ++i) {
        CHECK(back.x()[i] == doctest::Approx(m.x()[i]).epsilon(1e-11));
        CHECK(back.density()[i] == doctest::Approx(m.density()[i]).epsilon(1e-11));
    }
    CHECK(format_marginal_csv(m).rfind("x,density\n", 0) == 0);
    CHECK_THROWS_AS(parse_marginal_csv("x,density\n1,2\n"), ValidationError);
    CHECK_THROWS_AS(parse_marginal_csv("x,density\n1,a\n2,1\n3,1\n4,1\n5,1\n"), ValidationError);
}
