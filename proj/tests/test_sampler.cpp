#include "doctest.h"
#include "models.hpp"

#include "lgm/engine.hpp"
#include "lgm/errors.hpp"
#include "lgm/oracle.hpp"
#include "lgm/sampler.hpp"

using namespace lgm;
using testing::Problem;

namespace {

Matrix stack(const std::vector<JointDraw>& s) {
    Matrix m(s.size(), s.front().x.size());
    for (std::size_t i = 0; i < s.size(); ++i) m.row(i) = s[i].x.transpose();
    return m;
}

FitResult football_fit() {
    const auto spec = load_model_spec(testing::data_path("football/football.json"));
    return fit(spec, load_table(testing::data_path("football/football_surrogate.csv"), spec.response));
}

FitResult scotland_fit() {
    const auto spec = load_model_spec(testing::data_path("scotland/scotland_bym.json"));
    return fit(spec, load_table(testing::data_path("scotland/scotland.csv"), spec.response));
}

}  // namespace

TEST_CASE("joint draws from a conjugate fit have the exact mean") {
    const double prec = 4.0;
    Problem p(testing::linear_spec(true, std::log(prec), {{"compute", {{"config", true}}}}),
              testing::linear_data(100, -2.0, 1.5, 0.5, 21));
    const auto r = fit(*p, {}, true);
    Vector pp(2);
    pp << p->spec().control.fixed_prec_intercept, p->spec().control.fixed_prec;
    const auto ref = oracle::conjugate_gaussian(p->design().X, p->y(), pp, prec);
    const int n = 10000;
    const auto draws = posterior_sample(n, r, 5);
    const Matrix x = stack(draws);
    for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt(ref.covariance(j, j) / n);
        CHECK(std::abs(x.col(j).mean() - ref.mean(j)) < 3 * se);
    }
    for (const auto& d : draws) CHECK(d.theta.size() == 0);
}

TEST_CASE("sampling is reproducible and independent of the thread count") {
    Problem p(testing::kPoissonGlmm, testing::poisson_glmm_data(6, 5, 22));
    const auto r = fit(*p, {}, true);
    const auto a = posterior_sample(200, r, 9), b = posterior_sample(200, r, 9), c = posterior_sample(200, r, 9, 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].config == b[i].config);
        CHECK(std::memcmp(a[i].x.data(), b[i].x.data(), sizeof(double) * a[i].x.size()) == 0);
        CHECK(std::memcmp(a[i].x.data(), c[i].x.data(), sizeof(double) * a[i].x.size()) == 0);
        CHECK(std::memcmp(a[i].theta.data(), c[i].theta.data(), sizeof(double) * a[i].theta.size()) == 0);
    }
    CHECK_FALSE(stack(a).isApprox(stack(posterior_sample(200, r, 10))));
    const Matrix h1 = hyperpar_sample(300, r, true, 4), h2 = hyperpar_sample(300, r, true, 4);
    CHECK(h1 == h2);
}

TEST_CASE("sampling without stored configurations fails") {
    Problem p(testing::linear_spec(false), testing::linear_data(20, 0, 1, 1, 23));
    const auto r = fit(*p, {}, true);
    CHECK_THROWS_AS(posterior_sample(10, r, 1), ConfigNotStored);
    CHECK_NOTHROW(hyperpar_sample(10, r, true, 1));
}

TEST_CASE("sample moments agree with the marginal summaries") {
    const auto r = football_fit();
    const int n = 10000;
    const Matrix x = stack(posterior_sample(n, r, 77, 4));
    const auto& lay = r.layout;
    auto check_block = [&](int offset, const std::vector<SummaryRow>& rows) {
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const Vector c = x.col(offset + static_cast<int>(j));
            const double mean = c.mean();
            const double sd = std::sqrt((c.array() - mean).square().sum() / (n - 1));
            CHECK(std::abs(mean - rows[j].mean) < 4 * rows[j].sd / std::sqrt(n));
            CHECK(std::abs(sd - rows[j].sd) < 0.05 * rows[j].sd);
        }
    };
    check_block(lay.beta_offset, r.fixed);
    for (std::size_t b = 0; b < lay.blocks.size(); ++b) check_block(lay.blocks[b].offset, r.random[b].rows);
}

TEST_CASE("every draw satisfies the linear constraints") {
    const auto r = scotland_fit();
    REQUIRE(r.constraints.rows() == 1);
    for (const auto& d : posterior_sample(500, r, 3)) CHECK((r.constraints * d.x).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("hyperparameter draws on both scales") {
    const auto r = scotland_fit();
    const Matrix in = hyperpar_sample(2000, r, true, 11), nat = hyperpar_sample(2000, r, false, 11);
    REQUIRE(in.cols() == 2);
    for (int i = 0; i < in.rows(); ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(from_internal(r.theta_transforms[j], in(i, j)) == doctest::Approx(nat(i, j)).epsilon(1e-12));
    // Exact grid resampling only returns grid points.
    const Matrix g = hyperpar_sample(100, r, true, 12, false);
    for (int i = 0; i < g.rows(); ++i) {
        bool found = false;
        for (const auto& pt : r.grid.points) found |= (pt.theta - g.row(i).transpose()).norm() == 0.0;
        CHECK(found);
    }
}

TEST_CASE("single grid point draws spread with unit z noise") {
    // Keep only the mode to get a one-point grid.
    Problem p(testing::kPoissonGlmm, testing::poisson_glmm_data(6, 5, 24));
    auto r = fit(*p, {}, true);
    auto mode_point = *std::find_if(r.grid.points.begin(), r.grid.points.end(), [](const GridPoint& g) { return g.z.norm() == 0.0; });
    mode_point.weight = 1.0;
    r.grid.points = {mode_point};
    const int n = 20000;
    const Matrix h = hyperpar_sample(n, r, true, 13);
    const double expected_sd = 1.0 / std::sqrt(r.grid.lambda(0));
    const double mean = h.col(0).mean();
    const double sd = std::sqrt((h.col(0).array() - mean).square().sum() / (n - 1));
    CHECK(std::abs(mean - r.grid.mode(0)) < 4 * expected_sd / std::sqrt(n));
    CHECK(sd == doctest::Approx(expected_sd).epsilon(0.03));
}

TEST_CASE("selector evaluation") {
    Problem p(testing::linear_spec(false, 0.0, {{"compute", {{"config", true}}}}), testing::linear_data(60, -2.0, 1.5, 0.5, 25));
    const auto r = fit(*p, {}, true);
    const auto s = posterior_sample(50, r, 6);
    const Matrix slope = posterior_sample_eval("x", s, r);
    REQUIRE(slope.cols() == 1);
    for (int i = 0; i < 50; ++i) CHECK(slope(i, 0) == s[i].x(1));
    const Matrix all = posterior_sample_eval("beta", s, r);
    CHECK(all.cols() == 2);
    const Matrix icpt = posterior_sample_eval("(Intercept)", s, r);
    CHECK(icpt(3, 0) == s[3].x(0));
    CHECK_THROWS(posterior_sample_eval("nope", s, r));

    const auto ex = posterior_sample_eval(
        [](const DrawView& v) {
            const Vector b = v.latent("beta");
            return std::vector<double>{std::exp(b(0)), std::exp(b(1)), v.hyper(v.fit.hyperpar[0].name)};
        },
        s, r);
    for (int i = 0; i < 50; ++i) {
        CHECK(ex[i][0] == doctest::Approx(std::exp(s[i].x(0))).epsilon(1e-14));
        CHECK(ex[i][1] == doctest::Approx(std::exp(s[i].x(1))).epsilon(1e-14));
        CHECK(ex[i][2] == doctest::Approx(std::exp(s[i].theta(0))).epsilon(1e-12));
    }
}

TEST_CASE("season simulation over many components runs per draw") {
    const auto r = football_fit();
    const auto spec = load_model_spec(testing::data_path("football/football.json"));
    const auto data = load_table(testing::data_path("football/football_surrogate.csv"), spec.response);
    const auto& att = data.numeric("attack");
    const auto& def = data.numeric("defense");
    const auto& home = data.numeric("home");
    const auto draws = posterior_sample(100, r, 31);
    const auto goals = posterior_sample_eval(
        [&](const DrawView& v) {
            const Vector b = v.latent("beta"), a = v.latent("attack"), d = v.latent("defense");
            // Expected goals per team over the season.
            std::vector<double> total(a.size(), 0.0);
            for (int i = 0; i < data.n_rows(); ++i) {
                const int ta = static_cast<int>(att[i]) - 1, td = static_cast<int>(def[i]) - 1;
                total[ta] += std::exp(b(0) + b(1) * home[i] + a(ta) + d(td));
            }
            return total;
        },
        draws, r);
    REQUIRE(goals.size() == 100);
    CHECK(goals[0].size() == 20);
    for (const auto& row : goals)
        for (double g : row) CHECK((g > 0 && std::isfinite(g)));
}
