#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "helpers.hpp"
#include "soem/datagen.hpp"
#include "soem/ssa.hpp"

using namespace soem;

TEST_CASE("generate iterates the recurrence", "[datagen]") {
    TimeSeries doubling = generate({{0.8, 1.6}, {1.0, 2.0}, 5, 0.0, 0});
    CHECK(doubling.values == std::vector<double>{1, 2, 4, 8, 16});

    // y_{t+1} = -y_{t-1}: the alternation continues past the window with
    // period 4, so index 5 returns to +1.
    TimeSeries alt = generate({{-1.0, 0.0}, {0.0, 1.0}, 6, 0.0, 0});
    CHECK(alt.values == std::vector<double>{0, 1, 0, -1, 0, 1});
}

TEST_CASE("generation is deterministic per seed", "[datagen]") {
    LRFSpec spec{{-0.5, 1.2}, {1.0, 1.0}, 100, 0.3, 42};
    TimeSeries a = generate(spec);
    TimeSeries b = generate(spec);
    CHECK(a.values == b.values);

    spec.seed = 43;
    TimeSeries c = generate(spec);
    CHECK(a.values != c.values);
}

TEST_CASE("divergence guard aborts unstable growth", "[datagen]") {
    CHECK_THROWS_AS(generate({{2.0}, {1.0}, 60, 0.0, 0}), std::runtime_error);
    // The same recurrence stopped earlier stays under the guard.
    CHECK_NOTHROW(generate({{2.0}, {1.0}, 30, 0.0, 0}));
}

TEST_CASE("spec validation", "[datagen]") {
    CHECK_THROWS_AS(generate({{}, {}, 10, 0.0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(generate({{1.0}, {1.0, 2.0}, 10, 0.0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(generate({{1.0}, {1.0}, 1, 0.0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(generate({{1.0}, {1.0}, 10, -0.1, 0}), std::invalid_argument);
}

TEST_CASE("group generation shapes and labels", "[datagen]") {
    std::vector<LRFSpec> specs = benchmark_specs(50, 0.0);

    std::vector<TimeSeries> single = generate_groups({specs[0]}, 1, false, 7);
    REQUIRE(single.size() == 1);
    CHECK(single[0].label == "0");

    std::vector<TimeSeries> all = generate_groups(specs, 4, false, 7);
    REQUIRE(all.size() == 12);
    std::map<std::string, int> counts;
    for (const auto& ts : all) counts[*ts.label]++;
    CHECK(counts["0"] == 4);
    CHECK(counts["1"] == 4);
    CHECK(counts["2"] == 4);

    // Noiseless, fixed windows: members of a group coincide.
    for (int m = 1; m < 4; ++m) CHECK(all[m].values == all[0].values);

    // Randomized windows de-align them but keep the dynamics.
    std::vector<TimeSeries> rnd = generate_groups(specs, 4, true, 7);
    CHECK(rnd[0].values != rnd[1].values);

    // Repeatable for a fixed seed.
    CHECK(generate_groups(specs, 4, true, 7)[5].values == rnd[5].values);

    CHECK_THROWS_AS(generate_groups(specs, 0, false, 7), std::invalid_argument);
    CHECK_THROWS_AS(generate_groups({}, 1, false, 7), std::invalid_argument);
}

TEST_CASE("noiseless specs close the forecasting loop", "[datagen]") {
    // The generator and the recurrence estimator must share one coefficient
    // convention; fitting on a prefix has to continue the series exactly.
    for (LRFSpec spec : benchmark_specs(60, 0.0)) {
        TimeSeries full = generate(spec, "loop");
        TimeSeries train{"loop", {full.values.begin(), full.values.begin() + 48}, {}};
        const int d = static_cast<int>(spec.phi.size());
        LRFModel model =
            lrf(decompose(covariance(embed(train, 10), false), {RPolicy::Kind::fixed, double(d)}));
        std::vector<double> fc = forecast(train, model, 12);
        for (int h = 0; h < 12; ++h) {
            const double truth = full.values[48 + h];
            CHECK(fc[h] == Catch::Approx(truth).margin(1e-6 * std::max(1.0, std::abs(truth))));
        }
    }
}

TEST_CASE("groups share eigenstructure within, not across", "[datagen]") {
    std::vector<TimeSeries> all = generate_groups(benchmark_specs(200, 0.05), 4, true, 99);
    const int L = 20;
    std::vector<EmbeddedCovariance> covs;
    std::vector<int> group;
    for (const auto& ts : all) {
        covs.push_back(covariance(embed(ts, L), true));
        group.push_back(std::stoi(*ts.label));
    }

    double within = 0.0, cross = 0.0;
    int nw = 0, nc = 0;
    for (std::size_t i = 0; i < covs.size(); ++i)
        for (std::size_t j = i + 1; j < covs.size(); ++j) {
            const double d =
                delta(std::vector<SymMatrix>{covs[i].matrix(), covs[j].matrix()});
            if (group[i] == group[j]) {
                within += d;
                ++nw;
            } else {
                cross += d;
                ++nc;
            }
        }
    within /= nw;
    cross /= nc;
    CHECK(within < cross);
}
