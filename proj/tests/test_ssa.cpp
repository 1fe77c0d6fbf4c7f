#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "helpers.hpp"
#include "soem/ssa.hpp"

using namespace soem;

namespace {

TimeSeries sinusoid(const std::string& id, int n, double period, double amp = 1.0,
                    double phase = 0.0) {
    TimeSeries ts{id, {}, std::nullopt};
    ts.values.reserve(n);
    for (int t = 0; t < n; ++t)
        ts.values.push_back(amp * std::sin(2.0 * std::numbers::pi * t / period + phase));
    return ts;
}

/// Continues a linear recurrence; coeffs are oldest-first over a window of
/// their own length.
TimeSeries recurrence_series(const std::string& id, std::vector<double> seed,
                             const std::vector<double>& coeffs, int n) {
    TimeSeries ts{id, std::move(seed), std::nullopt};
    const auto d = coeffs.size();
    while (ts.values.size() < static_cast<std::size_t>(n)) {
        double next = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            next += coeffs[i] * ts.values[ts.values.size() - d + i];
        ts.values.push_back(next);
    }
    return ts;
}

SSADecomposition decompose_series(const TimeSeries& ts, int L, const RPolicy& policy) {
    return decompose(covariance(embed(ts, L), false), policy);
}

}  // namespace

TEST_CASE("decompose retention policies", "[ssa]") {
    TimeSeries flat{"c", std::vector<double>(30, 2.0), {}};
    SSADecomposition rank1 = decompose_series(flat, 5, {RPolicy::Kind::energy, 0.9});
    CHECK(rank1.r() == 1);

    TimeSeries sine = sinusoid("s", 240, 12.0);
    SSADecomposition two = decompose_series(sine, 24, {RPolicy::Kind::energy, 0.9});
    CHECK(two.r() == 2);
    const double total = two.eigenvalues().sum();
    CHECK(two.eigenvalues()(0) + two.eigenvalues()(1) >= 0.999 * total);

    SSADecomposition full = decompose_series(sine, 24, {RPolicy::Kind::fixed, 24});
    CHECK(full.r() == 24);
    SSADecomposition clamped = decompose_series(sine, 24, {RPolicy::Kind::fixed, 99});
    CHECK(clamped.r() == 24);

    CHECK_THROWS_AS(decompose_series(sine, 24, {RPolicy::Kind::fixed, 0}), std::invalid_argument);
    CHECK_THROWS_AS(decompose_series(sine, 24, {RPolicy::Kind::energy, 0.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(decompose_series(sine, 24, {RPolicy::Kind::energy, 1.5}),
                    std::invalid_argument);

    // Zero covariance has no energy to apportion; one component is kept.
    TimeSeries zero{"z", std::vector<double>(20, 0.0), {}};
    CHECK(decompose_series(zero, 4, {RPolicy::Kind::energy, 0.9}).r() == 1);
}

TEST_CASE("decomposition validation", "[ssa]") {
    TimeSeries sine = sinusoid("s", 60, 6.0);
    EmbeddedCovariance c = covariance(embed(sine, 8), false);
    EigenDecomposition eig = sym_eigen(c.matrix());
    CHECK_THROWS_AS(SSADecomposition(8, eig.values, eig.basis, 0, "s"), std::invalid_argument);
    CHECK_THROWS_AS(SSADecomposition(8, eig.values, eig.basis, 9, "s"), std::invalid_argument);
}

TEST_CASE("full-rank reconstruction is the identity", "[ssa]") {
    std::mt19937_64 rng(44);
    std::normal_distribution<double> g(0.0, 1.0);
    TimeSeries ts{"r", {}, {}};
    for (int t = 0; t < 50; ++t) ts.values.push_back(g(rng));
    TrajectoryMatrix x = embed(ts, 9);
    TimeSeries back = reconstruct(x, decompose_series(ts, 9, {RPolicy::Kind::fixed, 9}));
    REQUIRE(back.values.size() == ts.values.size());
    for (std::size_t t = 0; t < ts.values.size(); ++t)
        CHECK(back.values[t] == Catch::Approx(ts.values[t]).margin(1e-10));
}

TEST_CASE("rank-1 exponential reconstructs exactly", "[ssa]") {
    TimeSeries ts{"exp", {}, {}};
    for (int t = 0; t < 10; ++t) ts.values.push_back(std::pow(2.0, t));
    TrajectoryMatrix x = embed(ts, 4);
    TimeSeries back = reconstruct(x, decompose_series(ts, 4, {RPolicy::Kind::fixed, 1}));
    for (std::size_t t = 0; t < ts.values.size(); ++t)
        CHECK(back.values[t] == Catch::Approx(ts.values[t]).margin(1e-8 * ts.values.back()));
}

TEST_CASE("rank-2 reconstruction denoises a sinusoid", "[ssa]") {
    const double noise_sd = 0.2;
    std::mt19937_64 rng(71);
    std::normal_distribution<double> g(0.0, noise_sd);
    TimeSeries clean = sinusoid("sn", 240, 12.0);
    TimeSeries noisy = clean;
    for (auto& v : noisy.values) v += g(rng);

    TrajectoryMatrix x = embed(noisy, 24);
    TimeSeries back = reconstruct(x, decompose_series(noisy, 24, {RPolicy::Kind::fixed, 2}));
    double sq = 0.0;
    for (std::size_t t = 0; t < clean.values.size(); ++t) {
        const double e = back.values[t] - clean.values[t];
        sq += e * e;
    }
    CHECK(std::sqrt(sq / static_cast<double>(clean.values.size())) < noise_sd);
}

TEST_CASE("reconstruct rejects mismatched window", "[ssa]") {
    TimeSeries sine = sinusoid("s", 60, 6.0);
    CHECK_THROWS_AS(reconstruct(embed(sine, 7), decompose_series(sine, 8, {})),
                    std::invalid_argument);
}

TEST_CASE("recurrence coefficients of a doubling series", "[ssa]") {
    TimeSeries ts{"d", {1, 2, 4, 8, 16}, {}};
    LRFModel model = lrf(decompose_series(ts, 3, {RPolicy::Kind::fixed, 1}));
    REQUIRE(model.phi.size() == 2);
    CHECK(model.phi(0) == Catch::Approx(0.8).margin(1e-10));
    CHECK(model.phi(1) == Catch::Approx(1.6).margin(1e-10));
    CHECK(model.verticality == Catch::Approx(16.0 / 21.0).margin(1e-10));

    TimeSeries scaled = ts;
    for (auto& v : scaled.values) v *= 10.0;
    LRFModel same = lrf(decompose_series(scaled, 3, {RPolicy::Kind::fixed, 1}));
    CHECK((same.phi - model.phi).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("period-4 sinusoid yields the alternating recurrence", "[ssa]") {
    TimeSeries ts = sinusoid("p4", 40, 4.0);
    LRFModel model = lrf(decompose_series(ts, 3, {RPolicy::Kind::fixed, 2}));
    CHECK(model.phi(0) == Catch::Approx(-1.0).margin(1e-8));
    CHECK(model.phi(1) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("lrf scale invariance on arbitrary data", "[ssa]") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> g(0.0, 1.0);
    TimeSeries ts{"g", {}, {}};
    for (int t = 0; t < 80; ++t) ts.values.push_back(g(rng));
    TimeSeries scaled = ts;
    for (auto& v : scaled.values) v *= -3.7;

    LRFModel a = lrf(decompose_series(ts, 10, {RPolicy::Kind::energy, 0.9}));
    LRFModel b = lrf(decompose_series(scaled, 10, {RPolicy::Kind::energy, 0.9}));
    CHECK(a.r == b.r);
    CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("vertical eigenspace is rejected", "[ssa]") {
    // An impulse at the very end concentrates all energy on the last window
    // coordinate, so the retained eigenvector is the last canonical basis
    // vector and the recurrence denominator vanishes.
    TimeSeries impulse{"i", {0, 0, 0, 0, 0, 0, 0, 1}, {}};
    CHECK_THROWS_WITH(lrf(decompose_series(impulse, 4, {RPolicy::Kind::fixed, 1})),
                      Catch::Matchers::ContainsSubstring("vertical eigenspace, LRF undefined"));
}

TEST_CASE("forecast continues the doubling series", "[ssa]") {
    TimeSeries ts{"d", {1, 2, 4, 8, 16}, {}};
    LRFModel model{Eigen::Vector2d(0.8, 1.6), 16.0 / 21.0, 1, 3};
    std::vector<double> out = forecast(ts, model, 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == Catch::Approx(32.0).margin(1e-9));
    CHECK(out[1] == Catch::Approx(64.0).margin(1e-9));
}

TEST_CASE("forecast edge cases", "[ssa]") {
    TimeSeries ts{"t", {1, 2, 3, 4}, {}};
    LRFModel zero{Eigen::Vector3d::Zero(), 0.0, 1, 4};
    std::vector<double> out = forecast(ts, zero, 3);
    CHECK(out == std::vector<double>{0.0, 0.0, 0.0});

    LRFModel model{Eigen::Vector2d(0.5, 0.5), 0.0, 1, 3};
    CHECK_THROWS_AS(forecast(ts, model, 0), std::invalid_argument);
    CHECK_THROWS_AS(forecast(TimeSeries{"s", {1.0, 2.0}, {}}, zero, 1), std::invalid_argument);

    // Chain rule: the first element of a longer horizon matches the shorter one.
    std::vector<double> h1 = forecast(ts, model, 1);
    std::vector<double> h2 = forecast(ts, model, 2);
    CHECK(h2[0] == h1[0]);
}

TEST_CASE("finite-rank series forecast exactly", "[ssa]") {
    // Damped oscillation, order 2.
    const std::vector<double> c2{-0.9604, 1.8582};  // poles 0.98 e^{+-i pi/10}
    TimeSeries full2 = recurrence_series("o2", {1.0, 0.9}, c2, 60);
    TimeSeries train2{"o2", {full2.values.begin(), full2.values.begin() + 48}, {}};
    LRFModel m2 = lrf(decompose_series(train2, 6, {RPolicy::Kind::fixed, 2}));
    std::vector<double> f2 = forecast(train2, m2, 12);
    for (int h = 0; h < 12; ++h) {
        const double truth = full2.values[48 + h];
        CHECK(f2[h] == Catch::Approx(truth).margin(1e-6 * std::max(1.0, std::abs(truth))));
    }

    // Order 4: sum of two sinusoids with different periods.
    TimeSeries both{"o4", {}, {}};
    for (int t = 0; t < 72; ++t)
        both.values.push_back(std::sin(2.0 * std::numbers::pi * t / 12.0) +
                              0.5 * std::sin(2.0 * std::numbers::pi * t / 5.0 + 0.3));
    TimeSeries train4{"o4", {both.values.begin(), both.values.begin() + 60}, {}};
    LRFModel m4 = lrf(decompose_series(train4, 10, {RPolicy::Kind::fixed, 4}));
    std::vector<double> f4 = forecast(train4, m4, 12);
    for (int h = 0; h < 12; ++h)
        CHECK(f4[h] == Catch::Approx(both.values[60 + h]).margin(1e-6));
}

TEST_CASE("cluster forecasting reduces to univariate", "[ssa]") {
    TimeSeries sine = sinusoid("s", 60, 12.0);
    RPolicy pol{RPolicy::Kind::energy, 0.9};

    MSSAForecast solo = mssa_forecast({sine}, 12, pol, 6);
    CHECK_FALSE(solo.fallback);
    std::vector<double> uni = forecast(sine, lrf(decompose_series(sine, 12, pol)), 6);
    REQUIRE(solo.forecasts.size() == 1);
    CHECK(solo.forecasts[0] == uni);

    MSSAForecast twin = mssa_forecast({sine, sine}, 12, pol, 6);
    for (int h = 0; h < 6; ++h) {
        CHECK(twin.forecasts[0][h] == Catch::Approx(uni[h]).margin(1e-9));
        CHECK(twin.forecasts[1][h] == twin.forecasts[0][h]);
    }
}

TEST_CASE("shared recurrence forecasts a common-dynamics cluster", "[ssa]") {
    const std::vector<double> coeffs{-0.9604, 1.8582};
    TimeSeries a = recurrence_series("a", {1.0, 0.8}, coeffs, 72);
    TimeSeries b = recurrence_series("b", {-0.3, 0.5}, coeffs, 72);
    TimeSeries ta{"a", {a.values.begin(), a.values.begin() + 60}, {}};
    TimeSeries tb{"b", {b.values.begin(), b.values.begin() + 60}, {}};

    MSSAForecast out = mssa_forecast({ta, tb}, 8, {RPolicy::Kind::fixed, 2}, 12);
    CHECK_FALSE(out.fallback);
    for (int h = 0; h < 12; ++h) {
        CHECK(out.forecasts[0][h] == Catch::Approx(a.values[60 + h]).margin(1e-6));
        CHECK(out.forecasts[1][h] == Catch::Approx(b.values[60 + h]).margin(1e-6));
    }

    // Differing lengths pool fine; the covariance sum needs no equal K.
    TimeSeries shorter{"c", {b.values.begin(), b.values.begin() + 40}, {}};
    CHECK_NOTHROW(mssa_forecast({ta, shorter}, 8, {RPolicy::Kind::fixed, 2}, 3));
}

TEST_CASE("vertical pooled basis falls back to per-series models", "[ssa]") {
    // Each member alone retains one slanted component (non-vertical), but the
    // pool is dominated by the pure last-coordinate direction.
    TimeSeries a{"a", {0, 0, 0, 0, 1, 1}, {}};
    TimeSeries b{"b", {0, 0, 0, 0, -1, 1}, {}};
    RPolicy pol{RPolicy::Kind::energy, 0.8};

    MSSAForecast out = mssa_forecast({a, b}, 3, pol, 2);
    CHECK(out.fallback);
    std::vector<double> ua = forecast(a, lrf(decompose_series(a, 3, pol)), 2);
    std::vector<double> ub = forecast(b, lrf(decompose_series(b, 3, pol)), 2);
    CHECK(out.forecasts[0] == ua);
    CHECK(out.forecasts[1] == ub);
}

TEST_CASE("mssa_forecast validation", "[ssa]") {
    CHECK_THROWS_AS(mssa_forecast({}, 4, {}, 1), std::invalid_argument);
    TimeSeries tiny{"t", {1, 2, 3, 4}, {}};
    CHECK_THROWS_AS(mssa_forecast({tiny}, 4, {}, 1), std::invalid_argument);
}
