#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "helpers.hpp"
#include "soem/embedding.hpp"

using namespace soem;

namespace {

TimeSeries seeded_series(const std::string& id, int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    TimeSeries ts{id, {}, std::nullopt};
    ts.values.reserve(n);
    for (int i = 0; i < n; ++i) ts.values.push_back(g(rng));
    return ts;
}

}  // namespace

TEST_CASE("series validation", "[embedding]") {
    CHECK_THROWS_AS(validate(TimeSeries{"x", {1.0}, {}}), std::invalid_argument);
    CHECK_THROWS_AS(validate(TimeSeries{"x", {1.0, std::nan("")}, {}}), std::invalid_argument);
    CHECK_NOTHROW(validate(TimeSeries{"x", {1.0, 2.0}, {}}));

    MultiSeries empty{"m", {}};
    CHECK_THROWS_AS(validate(empty), std::invalid_argument);
    MultiSeries ragged{"m", {TimeSeries{"a", {1, 2, 3}, {}}, TimeSeries{"b", {1, 2}, {}}}};
    CHECK_THROWS_AS(validate(ragged), std::invalid_argument);
}

TEST_CASE("embed builds the lagged-window matrix", "[embedding]") {
    TimeSeries ts{"t", {1, 2, 3, 4, 5}, {}};
    TrajectoryMatrix x = embed(ts, 3);
    Eigen::MatrixXd expect(3, 3);
    expect << 1, 2, 3, 2, 3, 4, 3, 4, 5;
    CHECK(x.entries() == expect);
    CHECK(x.source_id() == "t");

    // Window length equal to the series gives a single column.
    TimeSeries pair{"p", {7, 8}, {}};
    CHECK_THROWS_AS(embed(pair, 2), std::invalid_argument);  // L = N rejected
    TrajectoryMatrix one = embed(TimeSeries{"q", {7, 8, 9}, {}}, 2);
    CHECK(one.K() == 2);

    TrajectoryMatrix wide = embed(ts, 2);
    Eigen::MatrixXd expect2(2, 4);
    expect2 << 1, 2, 3, 4, 2, 3, 4, 5;
    CHECK(wide.entries() == expect2);

    CHECK_THROWS_WITH(embed(ts, 5), Catch::Matchers::ContainsSubstring("N=5"));
    CHECK_THROWS_AS(embed(ts, 1), std::invalid_argument);
}

TEST_CASE("trajectory matrices are Hankel", "[embedding]") {
    TimeSeries ts = seeded_series("h", 40, 123);
    TrajectoryMatrix x = embed(ts, 7);
    for (int j = 0; j + 1 < x.K(); ++j)
        for (int i = 1; i < x.L(); ++i) CHECK(x.entries()(i, j) == x.entries()(i - 1, j + 1));

    Eigen::MatrixXd broken = x.entries();
    broken(1, 0) += 1.0;
    CHECK_THROWS_AS(TrajectoryMatrix(broken, "h"), std::invalid_argument);
}

TEST_CASE("covariance equals the brute-force product", "[embedding]") {
    TimeSeries ts{"t", {1, 2, 3, 4, 5}, {}};
    TrajectoryMatrix x = embed(ts, 3);
    EmbeddedCovariance c = covariance(x, false);
    Eigen::MatrixXd brute = x.entries() * x.entries().transpose();
    CHECK((c.matrix().data() - brute).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_FALSE(c.norm_applied());
    CHECK(c.source_id() == "t");

    EmbeddedCovariance cn = covariance(x, true);
    CHECK(cn.matrix().data().norm() == Catch::Approx(1.0).margin(1e-12));
    CHECK(cn.norm_applied());
}

TEST_CASE("constant series give rank-1 covariance; zero series cannot normalize", "[embedding]") {
    TimeSeries flat{"c", std::vector<double>(10, 3.0), {}};
    EmbeddedCovariance c = covariance(embed(flat, 4), false);
    EigenDecomposition eig = sym_eigen(c.matrix());
    CHECK(eig.values(0) > 0.0);
    for (int i = 1; i < 4; ++i) CHECK(std::abs(eig.values(i)) < 1e-10 * eig.values(0));

    TimeSeries zero{"z", std::vector<double>(10, 0.0), {}};
    CHECK_THROWS_WITH(covariance(embed(zero, 4), true),
                      Catch::Matchers::ContainsSubstring("cannot normalize"));
    CHECK_NOTHROW(covariance(embed(zero, 4), false));
}

TEST_CASE("trace identity links covariance to window energies", "[embedding]") {
    TimeSeries ts = seeded_series("e", 100, 7);
    TrajectoryMatrix x = embed(ts, 12);
    EmbeddedCovariance c = covariance(x, false);
    double windows = 0.0;
    for (int j = 0; j < x.K(); ++j) windows += x.entries().col(j).squaredNorm();
    CHECK(c.matrix().data().trace() == Catch::Approx(windows).epsilon(1e-8));
}

TEST_CASE("covariance is PSD", "[embedding]") {
    for (unsigned seed : {1u, 2u, 3u}) {
        TimeSeries ts = seeded_series("p", 60, seed);
        EmbeddedCovariance c = covariance(embed(ts, 10), true);
        EigenDecomposition eig = sym_eigen(c.matrix());
        CHECK(eig.values.minCoeff() >= -1e-10 * c.matrix().data().trace());
    }
}

TEST_CASE("stacked covariance is additive over channels", "[embedding]") {
    TimeSeries a = seeded_series("a", 50, 11);
    TimeSeries b = seeded_series("b", 50, 12);
    TimeSeries c = seeded_series("c", 50, 13);
    MultiSeries ms{"m", {a, b, c}};
    const int L = 8;

    EmbeddedCovariance stacked = stack_covariance(ms, L, false);
    Eigen::MatrixXd summed = covariance(embed(a, L), false).matrix().data() +
                             covariance(embed(b, L), false).matrix().data() +
                             covariance(embed(c, L), false).matrix().data();
    CHECK((stacked.matrix().data() - summed).cwiseAbs().maxCoeff() < 1e-12);

    // Brute force through the explicitly stacked matrix X_H = [X1 X2 X3].
    Eigen::MatrixXd xh(L, 3 * (50 - L + 1));
    xh << embed(a, L).entries(), embed(b, L).entries(), embed(c, L).entries();
    CHECK((stacked.matrix().data() - xh * xh.transpose()).cwiseAbs().maxCoeff() < 1e-9);

    // Two identical channels double the single-channel product.
    MultiSeries twin{"tw", {a, a}};
    EmbeddedCovariance doubled = stack_covariance(twin, L, false);
    CHECK((doubled.matrix().data() - 2.0 * covariance(embed(a, L), false).matrix().data())
              .cwiseAbs()
              .maxCoeff() < 1e-12);

    // One channel degenerates to the univariate covariance.
    MultiSeries solo{"s", {a}};
    CHECK((stack_covariance(solo, L, false).matrix().data() -
           covariance(embed(a, L), false).matrix().data())
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("covariance is sensitive to sample order", "[embedding]") {
    TimeSeries ts = seeded_series("o", 40, 5);
    TimeSeries shuffled = ts;
    std::mt19937_64 rng(6);
    std::shuffle(shuffled.values.begin(), shuffled.values.end(), rng);
    Eigen::MatrixXd c1 = covariance(embed(ts, 6), false).matrix().data();
    Eigen::MatrixXd c2 = covariance(embed(shuffled, 6), false).matrix().data();
    CHECK((c1 - c2).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("default_L policies", "[embedding]") {
    CHECK(default_L(136, {EmbedPolicy::Kind::tenth, 0.0}) == 14);
    CHECK(default_L(144, {EmbedPolicy::Kind::fraction, 1.0 / 3.0}) == 48);
    CHECK(default_L(30, {EmbedPolicy::Kind::fixed, 50}) == 29);
    CHECK(default_L(200, {EmbedPolicy::Kind::tenth, 0.0}) == 20);
    // Short series clamp up to the minimum usable window.
    CHECK(default_L(12, {EmbedPolicy::Kind::tenth, 0.0}) == 2);
    CHECK(default_L(5, {EmbedPolicy::Kind::fixed, 1}) == 2);
    CHECK_THROWS_AS(default_L(2, {EmbedPolicy::Kind::tenth, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(default_L(100, {EmbedPolicy::Kind::fraction, -0.1}), std::invalid_argument);
}

TEST_CASE("zscore standardizes and rejects constants", "[embedding]") {
    TimeSeries ts = seeded_series("z", 200, 9);
    for (auto& v : ts.values) v = 3.0 * v + 10.0;
    TimeSeries z = zscore(ts);
    double mean = 0.0, var = 0.0;
    for (double v : z.values) mean += v;
    mean /= static_cast<double>(z.values.size());
    for (double v : z.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.values.size());
    CHECK(mean == Catch::Approx(0.0).margin(1e-12));
    CHECK(var == Catch::Approx(1.0).epsilon(1e-10));

    CHECK_THROWS_AS(zscore(TimeSeries{"c", {2, 2, 2}, {}}), std::invalid_argument);
}
