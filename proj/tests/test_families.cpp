#include "doctest.h"
#include "support.hpp"

#include "lgm/errors.hpp"
#include "lgm/families.hpp"

#include <cmath>
#include <random>

using namespace lgm;
using testing::diff1;
using testing::diff2;

namespace {

const double kNoFloor = -std::numeric_limits<double>::infinity();

const FamilyKind kAll[] = {FamilyKind::gaussian, FamilyKind::poisson, FamilyKind::binomial,
                           FamilyKind::nbinomial, FamilyKind::gamma, FamilyKind::beta};

struct Point {
    FamilyKind kind;
    double y, eta, theta2;
    ObservationAux aux;
};

/// Random (family, y, eta, theta2) with y in the family support.
std::vector<Point> sweep(int per_family, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> eta(-3.0, 3.0), th(-1.5, 2.0), unit(0.02, 0.98), pos(0.05, 6.0);
    std::uniform_int_distribution<int> count(0, 15), trials(1, 20);
    std::vector<Point> out;
    for (FamilyKind k : kAll)
        for (int i = 0; i < per_family; ++i) {
            Point p{k, 0.0, eta(gen), th(gen), {}};
            switch (k) {
                case FamilyKind::gaussian: p.y = eta(gen) * 2; break;
                case FamilyKind::poisson:
                    p.y = count(gen);
                    p.aux.E = pos(gen);
                    break;
                case FamilyKind::binomial:
                    p.aux.ntrials = trials(gen);
                    p.y = std::uniform_int_distribution<int>(0, static_cast<int>(p.aux.ntrials))(gen);
                    break;
                case FamilyKind::nbinomial: p.y = count(gen); break;
                case FamilyKind::gamma: p.y = pos(gen); break;
                case FamilyKind::beta: p.y = unit(gen); break;
            }
            out.push_back(p);
        }
    return out;
}

}  // namespace

TEST_CASE("log-density examples") {
    CHECK(loglik(FamilyKind::gaussian, 0.0, 0.0, 0.0) == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-14));
    CHECK(loglik(FamilyKind::poisson, 0.0, 0.0, 0.0) == doctest::Approx(-1.0));
    CHECK(loglik(FamilyKind::binomial, 1.0, 0.0, 0.0, {1.0, 1.0}) == doctest::Approx(std::log(0.5)));
}

TEST_CASE("log-densities are normalised") {
    // Discrete families sum to one, continuous ones integrate to one.
    const double eta = 0.4, th = 0.7;
    double s = 0.0;
    for (int y = 0; y < 400; ++y) s += std::exp(loglik(FamilyKind::poisson, y, eta, th, {2.0, 1.0}));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    s = 0.0;
    for (int y = 0; y < 2000; ++y) s += std::exp(loglik(FamilyKind::nbinomial, y, eta, th));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    s = 0.0;
    for (int y = 0; y <= 12; ++y) s += std::exp(loglik(FamilyKind::binomial, y, eta, th, {1.0, 12.0}));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    auto integrate = [](auto f, double a, double b) {
        const int n = 400000;
        const double h = (b - a) / n;
        double acc = 0.5 * (f(a) + f(b));
        for (int i = 1; i < n; ++i) acc += f(a + i * h);
        return acc * h;
    };
    CHECK(integrate([&](double y) { return std::exp(loglik(FamilyKind::gaussian, y, eta, th)); }, -20, 20) ==
          doctest::Approx(1.0).epsilon(1e-8));
    CHECK(integrate([&](double y) { return std::exp(loglik(FamilyKind::gamma, y, eta, th)); }, 1e-9, 60) ==
          doctest::Approx(1.0).epsilon(1e-5));
    CHECK(integrate([&](double y) { return std::exp(loglik(FamilyKind::beta, y, eta, th)); }, 1e-9, 1 - 1e-9) ==
          doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("mean and variance parameterisations") {
    // nbinomial: Var = mu + mu^2 / size.
    const double eta = 1.1, th = 0.3, mu = std::exp(eta), size = std::exp(th);
    double m1 = 0, m2 = 0;
    for (int y = 0; y < 3000; ++y) {
        const double p = std::exp(loglik(FamilyKind::nbinomial, y, eta, th));
        m1 += y * p;
        m2 += y * y * p;
    }
    CHECK(m1 == doctest::Approx(mu).epsilon(1e-8));
    CHECK(m2 - m1 * m1 == doctest::Approx(mu + mu * mu / size).epsilon(1e-8));
}

TEST_CASE("derivative examples") {
    const auto d = loglik_derivs(FamilyKind::gaussian, 1.5, 0.5, std::log(4.0));
    CHECK(d.g == doctest::Approx(4.0 * 1.0));
    CHECK(d.h == doctest::Approx(4.0));
    const auto p = loglik_derivs(FamilyKind::poisson, 2.0, 0.0, 0.0);
    CHECK(p.g == doctest::Approx(1.0));
    CHECK(p.h == doctest::Approx(1.0));
}

TEST_CASE("derivatives match finite differences over a randomised sweep") {
    double worst_g = 0, worst_h = 0, worst_t = 0;
    for (const auto& p : sweep(100, 17)) {
        auto f = [&](double e) { return loglik(p.kind, p.y, e, p.theta2, p.aux); };
        CAPTURE(family_name(p.kind));
        const auto d = loglik_derivs(p.kind, p.y, p.eta, p.theta2, p.aux, kNoFloor);
        worst_g = std::max(worst_g, std::abs(d.g - diff1(f, p.eta)));
        worst_h = std::max(worst_h, std::abs(d.h + diff2(f, p.eta)));
        CHECK(std::abs(d.h + diff2(f, p.eta)) < 1e-6);
        auto second = [&](double e) { return -loglik_derivs(p.kind, p.y, e, p.theta2, p.aux, kNoFloor).h; };
        worst_t = std::max(worst_t, std::abs(loglik_third(p.kind, p.y, p.eta, p.theta2, p.aux) - diff1(second, p.eta)));
    }
    CHECK(worst_g < 1e-6);
    CHECK(worst_h < 1e-6);
    CHECK(worst_t < 1e-5);
}

TEST_CASE("curvature is clamped from below") {
    const auto d = loglik_derivs(FamilyKind::binomial, 0.0, 30.0, 0.0, {1.0, 1.0});
    CHECK(d.h >= 1e-8);
    const auto e = loglik_derivs(FamilyKind::binomial, 0.0, 30.0, 0.0, {1.0, 1.0}, 1e-4);
    CHECK(e.h == doctest::Approx(1e-4));
}

TEST_CASE("log-densities stay finite over a wide predictor range") {
    for (const auto& p : sweep(20, 5))
        for (double eta = -30; eta <= 30; eta += 0.5) {
            CHECK(std::isfinite(loglik(p.kind, p.y, eta, p.theta2, p.aux)));
            const auto d = loglik_derivs(p.kind, p.y, eta, p.theta2, p.aux);
            CHECK(std::isfinite(d.g));
            CHECK(std::isfinite(d.h));
        }
}

TEST_CASE("gaussian curvature does not depend on the predictor") {
    for (double eta : {-5.0, 0.0, 3.0}) CHECK(loglik_derivs(FamilyKind::gaussian, 1.0, eta, 0.5).h == doctest::Approx(std::exp(0.5)));
    CHECK(constant_curvature(FamilyKind::gaussian));
    CHECK_FALSE(constant_curvature(FamilyKind::poisson));
    CHECK(loglik_third(FamilyKind::gaussian, 1.0, 0.2, 0.5) == 0.0);
}

TEST_CASE("links") {
    CHECK(link(Link::logit, 0.5) == doctest::Approx(0.0));
    CHECK(inv_link(Link::log, 0.237) == doctest::Approx(1.267).epsilon(1e-3));
    for (double v : {-2.0, 0.0, 3.5}) CHECK(inv_link(Link::identity, link(Link::identity, v)) == v);
    for (double v : {0.01, 0.3, 0.99}) CHECK(inv_link(Link::logit, link(Link::logit, v)) == doctest::Approx(v).epsilon(1e-14));
    for (double v : {1e-3, 1.0, 40.0}) CHECK(inv_link(Link::log, link(Link::log, v)) == doctest::Approx(v).epsilon(1e-14));
    CHECK_THROWS(link(Link::logit, 0.0));
    CHECK_THROWS(link(Link::logit, 1.0));
    CHECK_THROWS(link(Link::log, -1.0));
    CHECK(inv_link(Link::logit, 40.0) <= 1.0);
    CHECK(inv_link(Link::logit, -40.0) >= 0.0);
    CHECK(default_link(FamilyKind::gaussian) == Link::identity);
    CHECK(default_link(FamilyKind::poisson) == Link::log);
    CHECK(default_link(FamilyKind::nbinomial) == Link::log);
    CHECK(default_link(FamilyKind::gamma) == Link::log);
    CHECK(default_link(FamilyKind::binomial) == Link::logit);
    CHECK(default_link(FamilyKind::beta) == Link::logit);
}

TEST_CASE("names and hyperparameter counts") {
    for (FamilyKind k : kAll) CHECK(parse_family_name(family_name(k)) == k);
    CHECK_THROWS_AS(parse_family_name("weibull"), ValidationError);
    CHECK(family_hyper_count(FamilyKind::gaussian) == 1);
    CHECK(family_hyper_count(FamilyKind::poisson) == 0);
    CHECK(family_hyper_count(FamilyKind::binomial) == 0);
    CHECK(family_hyper_count(FamilyKind::beta) == 1);
}

TEST_CASE("support checks") {
    CHECK_THROWS_AS(check_support(FamilyKind::poisson, -1.0, {}), ValidationError);
    CHECK_THROWS_AS(check_support(FamilyKind::poisson, 1.5, {}), ValidationError);
    CHECK_THROWS_AS(check_support(FamilyKind::binomial, 3.0, {1.0, 2.0}), ValidationError);
    CHECK_THROWS_AS(check_support(FamilyKind::gamma, 0.0, {}), ValidationError);
    CHECK_THROWS_AS(check_support(FamilyKind::beta, 1.0, {}), ValidationError);
    CHECK_NOTHROW(check_support(FamilyKind::gaussian, -4.0, {}));
}
