#include "doctest.h"
#include "models.hpp"

#include "lgm/engine.hpp"
#include "lgm/errors.hpp"
#include "lgm/oracle.hpp"

#include <boost/math/tools/minima.hpp>

using namespace lgm;
using nlohmann::json;
using testing::Problem;

namespace {

/// Exact log p(y | tau) + log p(theta) for the linear model, theta = log tau.
double exact_log_post(const Model& m, const Matrix& X, const Vector& y, const Vector& prior_prec, double theta) {
    return oracle::conjugate_gaussian(X, y, prior_prec, std::exp(theta)).log_evidence + m.log_prior_theta(Vector::Constant(1, theta));
}

Matrix design_of(const Model& m) { return m.design().X; }

Vector prior_diag(const Model& m) {
    Vector p(m.layout().beta_length);
    for (int j = 0; j < p.size(); ++j)
        p(j) = m.layout().beta_names[j] == "(Intercept)" ? m.spec().control.fixed_prec_intercept : m.spec().control.fixed_prec;
    return p;
}

}  // namespace

TEST_CASE("gaussian likelihood converges in one Newton step") {
    Problem p(testing::linear_spec(false), testing::linear_data(50, 1.0, 2.0, 0.5, 3));
    Engine e(*p);
    const auto ga = e.gaussian_approximation(Vector::Constant(1, 1.2));
    CHECK(ga.iterations == 1);
    CHECK((ga.diag_var.array() >= 0).all());
}

TEST_CASE("poisson mode matches a dense Newton oracle") {
    boost::random::mt19937 gen(9);
    boost::random::normal_distribution<double> z;
    std::vector<double> y, x;
    for (int i = 0; i < 20; ++i) {
        x.push_back(z(gen));
        y.push_back(boost::random::poisson_distribution<int>(std::exp(0.7 * x.back()))(gen));
    }
    Problem p(R"({"response":"y","fixed":["x"],"family":"poisson"})", testing::make_table({{"y", y}, {"x", x}}));
    REQUIRE(p->n_theta() == 0);
    const auto ga = Engine(*p).gaussian_approximation(Vector(0));
    double b = 0.0;
    for (int it = 0; it < 100; ++it) {
        double g = -0.001 * b, h = 0.001;
        for (int i = 0; i < 20; ++i) {
            const double mu = std::exp(b * x[i]);
            g += x[i] * (y[i] - mu);
            h += x[i] * x[i] * mu;
        }
        b += g / h;
    }
    CHECK(std::abs(ga.x_mode(0) - b) < 1e-8);
}

TEST_CASE("all responses missing leaves the prior") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Problem p(testing::linear_spec(true, 0.0), testing::make_table({{"y", {nan, nan, nan}}, {"x", {1, 2, 3}}}));
    const auto ga = Engine(*p).gaussian_approximation(Vector(0));
    CHECK(ga.x_mode.cwiseAbs().maxCoeff() < 1e-14);
    CHECK(ga.half_logdet_P == doctest::Approx(ga.half_logdet_Q).epsilon(1e-12));
    CHECK(ga.loglik == 0.0);
}

TEST_CASE("log posterior of theta equals the exact evidence up to a constant") {
    Problem p(testing::linear_spec(false), testing::linear_data(60, -1.0, 0.5, 0.7, 4));
    const Engine e(*p);
    const Matrix X = design_of(*p);
    const Vector y = p->y(), pp = prior_diag(*p);
    double offset = 0.0;
    for (int k = 0; k <= 20; ++k) {
        const double th = -3.0 + 0.4 * k;
        const double diff = e.log_posterior_theta(Vector::Constant(1, th)) - exact_log_post(*p, X, y, pp, th);
        if (k == 0) offset = diff;
        CHECK(std::abs(diff - offset) < 1e-8);
    }
}

TEST_CASE("log posterior is finite over a wide box on a two-precision model") {
    Problem p(R"({"response":"y","fixed":["1","x"],"family":"poisson",
                  "random":[{"id":"g","model":"iid"},{"id":"h","model":"iid"}]})",
              [] {
                  auto d = testing::poisson_glmm_data(10, 6, 12);
                  std::vector<double> h;
                  for (int i = 0; i < d.n_rows(); ++i) h.push_back(1 + i % 7);
                  d.add_numeric("h", h);
                  return d;
              }());
    const Engine e(*p);
    for (double a = -10; a <= 10; a += 5)
        for (double b = -10; b <= 10; b += 5) {
            CAPTURE(a);
            CAPTURE(b);
            CHECK(std::isfinite(e.log_posterior_theta((Vector(2) << a, b).finished())));
        }
}

TEST_CASE("mode of a one-hyperparameter model matches a one-dimensional search") {
    Problem p(testing::linear_spec(false), testing::linear_data(80, 0.3, -1.0, 1.5, 5));
    const Matrix X = design_of(*p);
    const Vector y = p->y(), pp = prior_diag(*p);
    const auto best = boost::math::tools::brent_find_minima(
        [&](double t) { return -exact_log_post(*p, X, y, pp, t); }, -6.0, 6.0, 40);
    const auto mode = Engine(*p).find_mode();
    CHECK(std::abs(mode.theta(0) - best.first) < 1e-3);
    CHECK(mode.H(0, 0) > 0);
}

TEST_CASE("no free hyperparameters gives a single grid point") {
    Problem p(testing::linear_spec(true, 1.0), testing::linear_data(30, 0.0, 1.0, 0.6, 6));
    const Engine e(*p);
    const auto mode = e.find_mode();
    CHECK(mode.theta.size() == 0);
    const auto grid = e.build_grid(mode);
    REQUIRE(grid.points.size() == 1);
    CHECK(grid.points[0].weight == 1.0);
}

namespace {

/// A field that never reaches the data, so the hyperposterior equals its N(1, 0.5^2) prior exactly.
Problem gaussian_hyper_problem() {
    json doc = {{"response", "y"},
                {"fixed", {"1"}},
                {"family", "gaussian"},
                {"random",
                 {{{"id", "f"},
                   {"model", "generic0"},
                   {"Cmatrix", {{"n", 3}, {"entries", {{1, 1, 2.0}, {2, 2, 1.0}, {3, 3, 1.5}}}}},
                   {"A.local", {{"nrow", 4}, {"ncol", 3}, {"entries", json::array()}}},
                   {"hyper", {{"prec", {{"prior", "gaussian"}, {"param", {1.0, 4.0}}}}}}}}},
                {"control", {{"family", {{"hyper", {{"prec", {{"initial", 0.0}, {"fixed", true}}}}}}}}}};
    return Problem(doc.dump(), testing::make_table({{"y", {0.1, -0.3, 0.4, 0.2}}}));
}

}  // namespace

TEST_CASE("grid on an exactly gaussian hyperposterior") {
    auto p = gaussian_hyper_problem();
    const Engine e(*p);
    const auto mode = e.find_mode();
    CHECK(mode.theta(0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(mode.H(0, 0) == doctest::Approx(4.0).epsilon(1e-4));
    const auto grid = e.build_grid(mode);
    std::vector<double> zs;
    for (const auto& g : grid.points) zs.push_back(g.z(0));
    std::sort(zs.begin(), zs.end());
    const std::vector<double> expected = {-2.25, -1.5, -0.75, 0.0, 0.75, 1.5, 2.25};
    REQUIRE(zs.size() == expected.size());
    for (std::size_t i = 0; i < zs.size(); ++i) CHECK(zs[i] == doctest::Approx(expected[i]).epsilon(1e-9));
    double total = 0.0;
    for (const auto& g : grid.points) {
        total += g.weight;
        for (const auto& h : grid.points)
            if (std::abs(g.z(0) + h.z(0)) < 1e-9) CHECK(g.weight == doctest::Approx(h.weight).epsilon(1e-6));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));

    const auto r = e.run();
    const auto zi = zmarginal(r.hyperpar_marginals_internal[0]);
    CHECK(zi.mean == doctest::Approx(1.0).epsilon(0.02));
    CHECK(zi.sd == doctest::Approx(0.5).epsilon(0.02));
    // Natural scale is lognormal.
    CHECK(r.hyperpar[0].mean == doctest::Approx(std::exp(1.0 + 0.125)).epsilon(0.02));
    CHECK(emarginal([](double) { return 1.0; }, r.hyperpar_marginals[0]) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("conjugate model is exact") {
    const double log_prec = std::log(4.0);
    Problem p(testing::linear_spec(true, log_prec), testing::linear_data(200, -2.0, 1.5, 0.5, 7));
    const auto r = fit(*p, {}, true);
    const auto ref = oracle::conjugate_gaussian(design_of(*p), p->y(), prior_diag(*p), 4.0);
    REQUIRE(r.fixed.size() == 2);
    for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(r.fixed[j].mean - ref.mean(j)) < 1e-8);
        CHECK(std::abs(r.fixed[j].sd - std::sqrt(ref.covariance(j, j))) < 1e-8);
        CHECK(r.fixed[j].kld == 0.0);
        // The marginal is the Gaussian itself.
        const double sd = std::sqrt(ref.covariance(j, j));
        for (double k : {-2.0, 0.0, 1.0}) {
            const double t = ref.mean(j) + k * sd;
            CHECK(dmarginal(t, r.fixed_marginals[j]) ==
                  doctest::Approx(std::exp(-0.5 * k * k) / (sd * std::sqrt(2 * M_PI))).epsilon(1e-3));
        }
    }
    CHECK(std::abs(r.diagnostics.mlik - ref.log_evidence) < 1e-6);
    CHECK(r.fixed[0].name == "(Intercept)");
    CHECK(r.fixed[1].name == "x");
    CHECK(r.random.empty());
}

TEST_CASE("marginal likelihood with a free noise precision matches quadrature") {
    Problem p(testing::linear_spec(false), testing::linear_data(100, 0.5, 1.0, 0.8, 8));
    const Matrix X = design_of(*p);
    const Vector y = p->y(), pp = prior_diag(*p);
    const auto r = fit(*p, {}, true);
    // Integrate exp(log p(y|theta) + log p(theta)) over theta.
    const double centre = r.mode.theta(0);
    const double ref_max = exact_log_post(*p, X, y, pp, centre);
    double acc = 0.0;
    const double h = 0.002;
    for (double t = centre - 6; t <= centre + 6; t += h) acc += std::exp(exact_log_post(*p, X, y, pp, t) - ref_max) * h;
    CHECK(std::abs(r.diagnostics.mlik - (ref_max + std::log(acc))) < 0.05);
}

TEST_CASE("fitted value of a single latent element equals that element") {
    Problem p(R"({"response":"y","fixed":["1"],"family":"gaussian"})",
              testing::make_table({{"y", {0.3, 1.2, -0.4, 0.8, 0.1, 0.5}}}));
    const auto r = fit(*p, {}, true);
    REQUIRE(r.fitted.size() == 6);
    for (const auto& f : r.fitted) {
        CHECK(f.mean == doctest::Approx(r.fixed[0].mean).epsilon(1e-12));
        CHECK(f.sd == doctest::Approx(r.fixed[0].sd).epsilon(1e-12));
        CHECK(f.q025 == doctest::Approx(r.fixed[0].q025).epsilon(1e-9));
    }
}

TEST_CASE("missing responses get predictive fitted values") {
    auto d = testing::linear_data(40, 1.0, 2.0, 0.3, 10);
    std::vector<double> y = d.numeric("y"), x = d.numeric("x");
    for (int i : {3, 17, 39}) y[i] = std::numeric_limits<double>::quiet_NaN();
    Problem p(testing::linear_spec(false, 0.0, {{"compute", {{"cpo", true}, {"dic", true}}}}),
              testing::make_table({{"y", y}, {"x", x}}));
    const auto r = fit(*p, {}, true);
    REQUIRE(r.fitted.size() == 40);
    for (int i : {3, 17, 39}) {
        CHECK(r.fitted[i].mean == doctest::Approx(r.fixed[0].mean + r.fixed[1].mean * x[i]).epsilon(1e-6));
        CHECK(std::isnan(r.diagnostics.cpo[i]));
    }
    CHECK(std::isfinite(r.diagnostics.cpo[0]));
}

TEST_CASE("fitted variance matches a dense quadratic form") {
    boost::random::mt19937 gen(13);
    boost::random::normal_distribution<double> z;
    std::vector<double> y, x, g;
    for (int i = 0; i < 30; ++i) {
        x.push_back(z(gen));
        g.push_back(1 + i % 8);
        y.push_back(0.5 * x.back() + z(gen));
    }
    Problem p(R"({"response":"y","fixed":["1","x"],"family":"gaussian",
                  "random":[{"id":"g","model":"iid","hyper":{"prec":{"initial":0.5,"fixed":true}}}],
                  "control":{"family":{"hyper":{"prec":{"initial":0.2,"fixed":true}}}}})",
              testing::make_table({{"y", y}, {"x", x}, {"g", g}}));
    const auto r = fit(*p, {}, true);
    const Matrix A = Matrix(p->A());
    const Matrix P = p->precision(Vector(0), 0.0).dense() + std::exp(0.2) * A.transpose() * A;
    const Matrix S = P.inverse();
    for (int i = 0; i < 30; ++i) {
        const double v = A.row(i) * S * A.row(i).transpose();
        CHECK(std::abs(r.fitted[i].sd * r.fitted[i].sd - v) < 1e-8);
    }
}

TEST_CASE("a fit with no posterior spread has no effective parameters") {
    Problem p(testing::linear_spec(true, 0.0, {{"fixed", {{"prec", 1e10}, {"prec.intercept", 1e10}}}, {"compute", {{"dic", true}, {"waic", true}}}}),
              testing::linear_data(25, 0.0, 0.0, 1.0, 14));
    const auto r = fit(*p, {}, true);
    REQUIRE(r.diagnostics.p_dic.has_value());
    CHECK(std::abs(*r.diagnostics.p_dic) < 1e-6);
    CHECK(*r.diagnostics.dic == doctest::Approx(*r.diagnostics.deviance_of_mean).epsilon(1e-6));
    CHECK(std::abs(*r.diagnostics.p_waic) < 1e-6);
}

TEST_CASE("summaries are well ordered and weights normalised on a spatial fit") {
    const auto spec = load_model_spec(testing::data_path("scotland/scotland_bym.json"));
    const auto data = load_table(testing::data_path("scotland/scotland.csv"), spec.response);
    const auto r = fit(spec, data);
    double total = 0.0;
    for (const auto& g : r.grid.points) {
        CHECK(g.weight >= 0.0);
        total += g.weight;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    bool has_mode = false;
    for (const auto& g : r.grid.points) has_mode |= g.z.norm() == 0.0;
    CHECK(has_mode);
    auto ordered = [](const SummaryRow& s) {
        CHECK(s.q025 <= s.q50);
        CHECK(s.q50 <= s.q975);
        CHECK(s.sd > 0.0);
    };
    for (const auto& s : r.fixed) ordered(s);
    for (const auto& rs : r.random)
        for (const auto& s : rs.rows) ordered(s);
    for (const auto& s : r.hyperpar) ordered(s);
    for (const auto& s : r.fitted) ordered(s);
    CHECK(r.random.size() == 1);
    CHECK(r.random[0].rows.size() == 112);
    CHECK(r.hyperpar.size() == 2);
}

TEST_CASE("halving the grid step barely moves posterior means") {
    struct Case {
        std::string json;
        DataTable data;
    };
    auto with_dz = [](std::string doc, double dz) {
        auto j = json::parse(doc);
        j["control"]["inla"]["dz"] = dz;
        return j.dump();
    };
    const std::vector<Case> cases = {
        {testing::linear_spec(false), testing::linear_data(40, 1.0, -0.5, 1.0, 15)},
        {testing::kPoissonGlmm, testing::poisson_glmm_data(8, 6, 16)},
    };
    for (const auto& c : cases) {
        const auto coarse = fit(parse_model_spec(with_dz(c.json, 0.75)), c.data);
        const auto fine = fit(parse_model_spec(with_dz(c.json, 0.375)), c.data);
        CHECK(fine.grid.points.size() > coarse.grid.points.size());
        for (std::size_t j = 0; j < coarse.fixed.size(); ++j)
            CHECK(std::abs(coarse.fixed[j].mean - fine.fixed[j].mean) < 0.02 * fine.fixed[j].sd);
        for (std::size_t b = 0; b < coarse.random.size(); ++b)
            for (std::size_t j = 0; j < coarse.random[b].rows.size(); ++j)
                CHECK(std::abs(coarse.random[b].rows[j].mean - fine.random[b].rows[j].mean) <
                      0.02 * fine.random[b].rows[j].sd);
    }
}

TEST_CASE("shifting the log prior by a constant leaves the mode unchanged") {
    auto make = [](double shift) {
        json table = json::array();
        for (int i = 0; i <= 60; ++i) {
            const double t = -6.0 + 0.25 * i;
            table.push_back({t, -0.5 * (t - 1) * (t - 1) / 4.0 + shift});
        }
        json doc = json::parse(testing::kPoissonGlmm);
        doc["random"][0]["hyper"]["prec"] = {{"prior", "table"}, {"table", table}};
        return parse_model_spec(doc.dump());
    };
    const auto data = testing::poisson_glmm_data(8, 6, 17);
    const Model a(make(0.0), data), b(make(12.5), data);
    const auto ma = Engine(a).find_mode(), mb = Engine(b).find_mode();
    CHECK(std::abs(ma.theta(0) - mb.theta(0)) < 1e-10);
}

TEST_CASE("results do not depend on the thread count") {
    const auto data = testing::poisson_glmm_data(12, 5, 18);
    const auto spec = parse_model_spec(testing::kPoissonGlmm);
    FitOptions one, many;
    many.threads = 4;
    const auto a = fit(spec, data, one), b = fit(spec, data, many);
    for (std::size_t j = 0; j < a.fixed.size(); ++j) {
        CHECK(a.fixed[j].mean == b.fixed[j].mean);
        CHECK(a.fixed[j].sd == b.fixed[j].sd);
    }
    for (std::size_t j = 0; j < a.hyperpar.size(); ++j) CHECK(a.hyperpar[j].mean == b.hyperpar[j].mean);
    CHECK(a.diagnostics.mlik == b.diagnostics.mlik);
}

TEST_CASE("safe settings are more conservative") {
    const EngineOptions o;
    const auto s = o.safe_variant();
    CHECK(s.newton_step == 0.5 * o.newton_step);
    CHECK(s.curvature_floor >= 1e-4);
    CHECK(s.jitter_scale == 10 * o.jitter_scale);
    CHECK(s.start_at_prior_median);
}

TEST_CASE("Gauss-Hermite rule integrates normal moments") {
    std::vector<double> x, w;
    gauss_hermite(21, x, w);
    REQUIRE(x.size() == 21);
    double m0 = 0, m2 = 0, m4 = 0, m1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        m0 += w[i];
        m1 += w[i] * x[i];
        m2 += w[i] * x[i] * x[i];
        m4 += w[i] * std::pow(x[i], 4);
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(m1) < 1e-13);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("latent labels") {
    const auto spec = load_model_spec(testing::data_path("scotland/scotland_bym.json"));
    const Model m(spec, load_table(testing::data_path("scotland/scotland.csv"), spec.response));
    CHECK(latent_label(m.layout(), 0) == "(Intercept)");
    CHECK(latent_label(m.layout(), 1) == "AFF");
    CHECK(latent_label(m.layout(), 2) == "idarea[1]");
}
