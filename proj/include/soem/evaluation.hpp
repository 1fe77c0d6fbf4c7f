#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soem/eigenmap.hpp"
#include "soem/linalg.hpp"

namespace soem {

/// Grid locations of labeled items (winning nodes of a classed dataset).
struct LabeledPlacement {
    std::vector<NodeCoord> coords;
    std::vector<std::string> labels;
};

inline void validate(const LabeledPlacement& p) {
    if (p.coords.empty() || p.coords.size() != p.labels.size())
        throw std::invalid_argument("LabeledPlacement: need equally many coords and labels");
}

inline void validate(const LabeledPlacement& p, const Grid& g) {
    validate(p);
    for (const auto& c : p.coords)
        if (c.row < 0 || c.row >= g.rows || c.col < 0 || c.col >= g.cols)
            throw std::invalid_argument("LabeledPlacement: coordinate outside grid");
}

/// Davies-Bouldin index of a labeled layout. Scatter is the mean distance to
/// the class centroid; similarity R = (S_k + S_l) / d(c_k, c_l); the index
/// averages each class's worst similarity. Two zero-scatter classes are
/// perfectly tight regardless of position (R = 0); classes with spread but
/// coincident centroids are inseparable and poison the index with +inf
/// (reported, not thrown).
[[nodiscard]] inline double davies_bouldin(const LabeledPlacement& placement) {
    validate(placement);
    std::map<std::string, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < placement.labels.size(); ++i)
        classes[placement.labels[i]].push_back(i);
    if (classes.size() < 2)
        throw std::invalid_argument("davies_bouldin: need at least 2 classes, found " +
                                    std::to_string(classes.size()));

    const std::size_t k = classes.size();
    std::vector<double> crow(k), ccol(k), scatter(k);
    std::size_t c = 0;
    for (const auto& [label, members] : classes) {
        double r = 0.0, q = 0.0;
        for (std::size_t i : members) {
            r += placement.coords[i].row;
            q += placement.coords[i].col;
        }
        crow[c] = r / static_cast<double>(members.size());
        ccol[c] = q / static_cast<double>(members.size());
        double s = 0.0;
        for (std::size_t i : members)
            s += std::hypot(placement.coords[i].row - crow[c], placement.coords[i].col - ccol[c]);
        scatter[c] = s / static_cast<double>(members.size());
        ++c;
    }

    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        double worst = 0.0;
        for (std::size_t b = 0; b < k; ++b) {
            if (a == b) continue;
            const double spread = scatter[a] + scatter[b];
            const double d = std::hypot(crow[a] - crow[b], ccol[a] - ccol[b]);
            double r;
            if (spread == 0.0)
                r = 0.0;
            else if (d == 0.0)
                r = std::numeric_limits<double>::infinity();
            else
                r = spread / d;
            worst = std::max(worst, r);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

/// Monte-Carlo null model: the same label multiset thrown uniformly onto the
/// grid (independent draws, nodes sampled with replacement). Degenerate +inf
/// draws propagate into the mean.
[[nodiscard]] inline double db_random_baseline(const std::vector<std::string>& labels,
                                               const Grid& grid, int draws, std::uint64_t seed) {
    validate(grid);
    if (labels.empty())
        throw std::invalid_argument("db_random_baseline: no labels");
    if (draws < 1)
        throw std::invalid_argument("db_random_baseline: draws must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, grid.nodes() - 1);
    double total = 0.0;
    for (int d = 0; d < draws; ++d) {
        LabeledPlacement p;
        p.labels = labels;
        p.coords.reserve(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int node = pick(rng);
            p.coords.push_back({node / grid.cols, node % grid.cols});
        }
        total += davies_bouldin(p);
    }
    return total / draws;
}

enum class Neighborhood { eight };

/// Fraction of inputs whose runner-up node touches the winner (8-connected).
/// The quantizer is topology-preserving when second-best nodes sit next to
/// best ones.
[[nodiscard]] inline double topographic_accuracy(const Assignment& a, const Grid& grid,
                                                 Neighborhood = Neighborhood::eight) {
    if (a.size() == 0)
        throw std::invalid_argument("topographic_accuracy: empty assignment");
    LabeledPlacement bounds{a.winner, std::vector<std::string>(a.size(), "")};
    validate(bounds, grid);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int dr = std::abs(a.winner[i].row - a.runner_up[i].row);
        const int dc = std::abs(a.winner[i].col - a.runner_up[i].col);
        if (dr <= 1 && dc <= 1 && !(dr == 0 && dc == 0)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

struct RankDistancePoint {
    int rank = 0;            // 1 is the winner itself
    double mean_distance = 0.0;  // grid distance from the winner, averaged over inputs
};

/// How grid distance grows with deviation rank: for each input, nodes are
/// sorted by deviation (ties by node index) and the distance from the rank-k
/// node to the winner is averaged across inputs. A self-organised map shows a
/// monotone-ish climb; a random one is flat.
[[nodiscard]] inline std::vector<RankDistancePoint> rank_distance_curve(
    const EigenMap& map, const std::vector<EmbeddedCovariance>& inputs, int max_rank) {
    validate(map);
    if (inputs.empty())
        throw std::invalid_argument("rank_distance_curve: no inputs");
    const int nodes = map.grid.nodes();
    if (max_rank < 1 || max_rank > nodes)
        throw std::invalid_argument("rank_distance_curve: max_rank " + std::to_string(max_rank) +
                                    " outside [1, " + std::to_string(nodes) + "]");

    std::vector<double> sums(max_rank, 0.0);
    std::vector<std::vector<double>> dev(inputs.size(), std::vector<double>(nodes));
    parallel_for(inputs.size(), [&](std::size_t i) {
        for (int node = 0; node < nodes; ++node) {
            const auto c = map.coord(node);
            dev[i][node] = node_deviation(map.basis(c.row, c.col), inputs[i]);
        }
    });
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<int> order(nodes);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int x, int y) {
            return dev[i][x] != dev[i][y] ? dev[i][x] < dev[i][y] : x < y;
        });
        const NodeCoord win = map.coord(order[0]);
        for (int r = 0; r < max_rank; ++r)
            sums[r] += grid_distance(map.coord(order[r]), win);
    }

    std::vector<RankDistancePoint> curve(max_rank);
    for (int r = 0; r < max_rank; ++r)
        curve[r] = {r + 1, sums[r] / static_cast<double>(inputs.size())};
    return curve;
}

/// Deviation of one input at every node, for plotting.
[[nodiscard]] inline Eigen::MatrixXd deviation_surface(const EigenMap& map,
                                                       const EmbeddedCovariance& c) {
    validate(map);
    Eigen::MatrixXd surface(map.grid.rows, map.grid.cols);
    for (int i = 0; i < map.grid.rows; ++i)
        for (int j = 0; j < map.grid.cols; ++j) surface(i, j) = node_deviation(map.basis(i, j), c);
    return surface;
}

/// Mean grid distance between winner and runner-up.
[[nodiscard]] inline double mean_runnerup_distance(const Assignment& a) {
    if (a.size() == 0)
        throw std::invalid_argument("mean_runnerup_distance: empty assignment");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        total += grid_distance(a.winner[i], a.runner_up[i]);
    return total / static_cast<double>(a.size());
}

struct TriangleReport {
    double rate = 0.0;
    long violations = 0;
    long triplets = 0;
};

/// Empirical triangle-inequality check of the joint-diagonalization residual
/// over sampled triples. Pairwise deltas are cached, so the cost is bounded
/// by the number of distinct pairs touched.
[[nodiscard]] inline TriangleReport triangle_violation_rate(
    const std::vector<EmbeddedCovariance>& covs, long triplets, std::uint64_t seed,
    const JDOptions& opt = {}) {
    if (covs.size() < 3)
        throw std::invalid_argument("triangle_violation_rate: need at least 3 covariances");
    TriangleReport report;
    report.triplets = triplets;
    if (triplets <= 0) {
        report.triplets = 0;
        return report;
    }

    const std::size_t n = covs.size();
    std::map<std::pair<std::size_t, std::size_t>, double> cache;
    const auto pair_delta = [&](std::size_t a, std::size_t b) {
        const auto key = std::minmax(a, b);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const double d =
            delta(std::vector<SymMatrix>{covs[key.first].matrix(), covs[key.second].matrix()}, opt);
        cache.emplace(key, d);
        return d;
    };

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (long t = 0; t < triplets; ++t) {
        std::size_t i = pick(rng), j = pick(rng), k = pick(rng);
        while (j == i) j = pick(rng);
        while (k == i || k == j) k = pick(rng);
        if (pair_delta(i, j) > pair_delta(i, k) + pair_delta(k, j) + 1e-10) ++report.violations;
    }
    report.rate = static_cast<double>(report.violations) / static_cast<double>(triplets);
    return report;
}

/// Spearman rank correlation with average ranks on ties.
[[nodiscard]] inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length samples of size >= 2");
    const auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return v[a] < v[b];
        });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("spearman: constant ranks have no correlation");
    return sxy / std::sqrt(sxx * syy);
}

/// Headline numbers for one trained map against one labeled input set.
struct MetricReport {
    double db = 0.0;
    double db_random_mean = 0.0;
    double db_ratio = 0.0;
    double topo_accuracy = 0.0;
    double mean_runnerup_distance = 0.0;
    std::vector<RankDistancePoint> rank_distance_curve;
};

/// JSON form of the report. Non-finite values (the +inf DB sentinel) become
/// null, which is the only faithful JSON encoding.
[[nodiscard]] inline nlohmann::json metric_report_json(const MetricReport& r) {
    const auto num = [](double v) {
        return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : r.rank_distance_curve)
        curve.push_back({{"rank", p.rank}, {"mean_distance", num(p.mean_distance)}});
    return {{"db", num(r.db)},
            {"db_random_mean", num(r.db_random_mean)},
            {"db_ratio", num(r.db_ratio)},
            {"topo_accuracy", num(r.topo_accuracy)},
            {"mean_runnerup_distance", num(r.mean_runnerup_distance)},
            {"rank_distance_curve", curve}};
}

[[nodiscard]] inline std::string rank_curve_csv(const std::vector<RankDistancePoint>& curve) {
    std::ostringstream out;
    out << "rank,mean_distance\n";
    char buf[64];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", p.rank, p.mean_distance);
        out << buf;
    }
    return out.str();
}

[[nodiscard]] inline std::string surface_csv(const Eigen::MatrixXd& surface) {
    std::ostringstream out;
    char buf[64];
    for (Eigen::Index i = 0; i < surface.rows(); ++i) {
        for (Eigen::Index j = 0; j < surface.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", surface(i, j));
            out << buf << (j + 1 < surface.cols() ? "," : "");
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace soem
