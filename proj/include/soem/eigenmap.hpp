#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "soem/embedding.hpp"
#include "soem/linalg.hpp"
#include "soem/parallel.hpp"

namespace soem {

/// Bounded rectangular node lattice (no wraparound).
struct Grid {
    int rows = 1;
    int cols = 1;
    bool bounded = true;

    [[nodiscard]] int nodes() const { return rows * cols; }
};

inline void validate(const Grid& g) {
    if (g.rows < 1 || g.cols < 1)
        throw std::invalid_argument("Grid: rows and cols must be >= 1");
    if (!g.bounded)
        throw std::invalid_argument("Grid: only bounded grids are supported");
}

struct NodeCoord {
    int row = 0;
    int col = 0;

    bool operator==(const NodeCoord&) const = default;
};

/// Euclidean distance between lattice coordinates.
[[nodiscard]] inline double grid_distance(const NodeCoord& a, const NodeCoord& b) {
    const double dr = a.row - b.row, dc = a.col - b.col;
    return std::sqrt(dr * dr + dc * dc);
}

/// Training knobs. sigma0 <= 0 means "derive from the grid" (rows/4).
/// Schedule index 0 is annealing; 1 holds the value constant.
struct TrainConfig {
    int rows = 10;
    int cols = 10;
    int iterations = 10;
    double sigma0 = 0.0;
    int sigma_schedule = 0;
    double nu0 = 0.9;
    int nu_schedule = 0;
    double jd_tol = 1e-8;
    int jd_max_sweeps = 100;
    std::uint64_t seed = 0;
    int L = 0;
    bool unit_norm = true;
    bool early_stop_radius = false;

    [[nodiscard]] double resolved_sigma0() const {
        return sigma0 > 0.0 ? sigma0 : rows / 4.0;
    }

    /// Kernel radius at iteration i: shrinks as sigma0 * 4/(4+i), so the
    /// neighbourhood tightens towards direct neighbours by the last rounds.
    [[nodiscard]] double sigma_at(int i) const {
        const double s0 = resolved_sigma0();
        return sigma_schedule == 1 ? s0 : s0 * 4.0 / (4.0 + i);
    }

    /// Input gain at iteration i: decays linearly from nu0 towards (but never
    /// reaching) zero, slowing refinement to damp oscillations.
    [[nodiscard]] double nu_at(int i) const {
        return nu_schedule == 1 ? nu0 : nu0 * (1.0 - static_cast<double>(i) / iterations);
    }
};

inline void validate(const TrainConfig& cfg) {
    validate(Grid{cfg.rows, cfg.cols, true});
    if (cfg.iterations < 1)
        throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    if (!(cfg.nu0 >= 0.0 && cfg.nu0 <= 1.0))
        throw std::invalid_argument("TrainConfig: nu0 must lie in [0, 1]");
    if (!(cfg.resolved_sigma0() > 0.0))
        throw std::invalid_argument("TrainConfig: sigma0 must be positive");
    if (cfg.sigma_schedule != 0 && cfg.sigma_schedule != 1)
        throw std::invalid_argument("TrainConfig: unknown sigma_schedule");
    if (cfg.nu_schedule != 0 && cfg.nu_schedule != 1)
        throw std::invalid_argument("TrainConfig: unknown nu_schedule");
    if (cfg.L < 2)
        throw std::invalid_argument("TrainConfig: L must be >= 2");
    if (!(cfg.jd_tol > 0.0) || cfg.jd_max_sweeps < 1)
        throw std::invalid_argument("TrainConfig: invalid jd options");
}

/// The map: one orthonormal L x L basis per lattice node, row-major storage.
struct EigenMap {
    Grid grid;
    int L = 0;
    std::vector<OrthoBasis> bases;
    int iteration = 0;
    std::uint64_t seed = 0;
    /// Per-node JD convergence from the most recent update; transient, not
    /// serialized.
    std::vector<unsigned char> jd_converged;

    [[nodiscard]] const OrthoBasis& basis(int row, int col) const {
        return bases[static_cast<std::size_t>(row) * grid.cols + col];
    }
    [[nodiscard]] NodeCoord coord(std::size_t index) const {
        return {static_cast<int>(index) / grid.cols, static_cast<int>(index) % grid.cols};
    }
};

inline void validate(const EigenMap& map) {
    validate(map.grid);
    if (map.L < 2)
        throw std::invalid_argument("EigenMap: L must be >= 2");
    if (map.bases.size() != static_cast<std::size_t>(map.grid.nodes()))
        throw std::invalid_argument("EigenMap: basis count " + std::to_string(map.bases.size()) +
                                    " != node count " + std::to_string(map.grid.nodes()));
    for (const auto& b : map.bases)
        if (b.dim() != map.L)
            throw std::invalid_argument("EigenMap: basis dimension mismatch");
    if (map.iteration < 0)
        throw std::invalid_argument("EigenMap: negative iteration");
}

/// Competitive result over one input batch.
struct Assignment {
    std::vector<NodeCoord> winner;
    std::vector<double> deviation;
    std::vector<NodeCoord> runner_up;
    std::vector<double> runner_up_deviation;

    [[nodiscard]] std::size_t size() const { return winner.size(); }
};

/// Seeded random orthonormal basis per node (Gaussian draws through
/// Gram-Schmidt; a rank-deficient draw is redrawn). Sequential over nodes so
/// the result is a pure function of the seed.
[[nodiscard]] inline EigenMap init_map(const TrainConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    EigenMap map{Grid{cfg.rows, cfg.cols, true}, cfg.L, {}, 0, cfg.seed, {}};
    const int n = map.grid.nodes();
    map.bases.reserve(n);
    map.jd_converged.assign(n, 1);
    for (int node = 0; node < n; ++node) {
        for (;;) {
            Eigen::MatrixXd draw(cfg.L, cfg.L);
            for (int j = 0; j < cfg.L; ++j)
                for (int i = 0; i < cfg.L; ++i) draw(i, j) = g(rng);
            try {
                map.bases.push_back(gram_schmidt(draw));
                break;
            } catch (const std::invalid_argument&) {
                continue;  // measure-zero rank deficiency; redraw
            }
        }
    }
    return map;
}

/// How far the input is from being diagonal in the node's basis:
/// off(U^T C U). Zero exactly when U's columns are eigenvectors of C.
[[nodiscard]] inline double node_deviation(const OrthoBasis& u, const EmbeddedCovariance& c) {
    if (u.dim() != c.dim())
        throw std::invalid_argument("node_deviation: basis dim " + std::to_string(u.dim()) +
                                    " != covariance dim " + std::to_string(c.dim()));
    const Eigen::MatrixXd b = u.data().transpose() * (c.matrix().data() * u.data());
    return off(b);
}

/// Gaussian neighbourhood kernel on grid distance.
[[nodiscard]] inline double kernel(double dist, double sigma) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("kernel: sigma must be positive");
    if (!(dist >= 0.0))
        throw std::invalid_argument("kernel: dist must be nonnegative");
    return std::exp(-dist * dist / (2.0 * sigma * sigma));
}

/// Winner and runner-up per input. Normally the winner is the deviation
/// argmin (exact ties broken uniformly by the rng, which is consumed only
/// when a tie actually occurs); on the first training iteration winners are
/// drawn uniformly instead and the runner-up degenerates to the winner.
/// Deviations are computed in parallel; rng use is sequential, so the result
/// does not depend on the thread count.
[[nodiscard]] inline Assignment compete(const EigenMap& map,
                                        const std::vector<EmbeddedCovariance>& inputs,
                                        bool first_iteration, std::mt19937_64& rng) {
    validate(map);
    if (inputs.empty())
        throw std::invalid_argument("compete: no inputs");
    for (const auto& c : inputs)
        if (c.dim() != map.L)
            throw std::invalid_argument("compete: input '" + c.source_id() + "' dim " +
                                        std::to_string(c.dim()) + " != map L " +
                                        std::to_string(map.L));

    const std::size_t m = inputs.size();
    const int nodes = map.grid.nodes();
    Assignment out;
    out.winner.resize(m);
    out.deviation.resize(m);
    out.runner_up.resize(m);
    out.runner_up_deviation.resize(m);

    if (first_iteration) {
        std::uniform_int_distribution<int> pick(0, nodes - 1);
        for (std::size_t i = 0; i < m; ++i) out.winner[i] = map.coord(pick(rng));
        parallel_for(m, [&](std::size_t i) {
            const auto& w = out.winner[i];
            out.deviation[i] = node_deviation(map.basis(w.row, w.col), inputs[i]);
            out.runner_up[i] = w;
            out.runner_up_deviation[i] = out.deviation[i];
        });
        return out;
    }

    std::vector<double> dev(m * static_cast<std::size_t>(nodes));
    parallel_for(m, [&](std::size_t i) {
        for (int node = 0; node < nodes; ++node) {
            const auto c = map.coord(node);
            dev[i * nodes + node] = node_deviation(map.basis(c.row, c.col), inputs[i]);
        }
    });

    for (std::size_t i = 0; i < m; ++i) {
        const double* row = dev.data() + i * nodes;
        double best = row[0];
        for (int node = 1; node < nodes; ++node) best = std::min(best, row[node]);

        std::vector<int> tied;
        for (int node = 0; node < nodes; ++node)
            if (row[node] == best) tied.push_back(node);
        int win = tied.front();
        if (tied.size() > 1) {
            std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
            win = tied[pick(rng)];
        }

        int second = -1;
        for (int node = 0; node < nodes; ++node) {
            if (node == win) continue;
            if (second < 0 || row[node] < row[second]) second = node;
        }
        if (second < 0) second = win;  // 1x1 grid has no distinct runner-up

        out.winner[i] = map.coord(win);
        out.deviation[i] = row[win];
        out.runner_up[i] = map.coord(second);
        out.runner_up_deviation[i] = row[second];
    }
    return out;
}

namespace detail {

/// Fixed strictly decreasing unit-Frobenius spectrum diag(L, L-1, ..., 1)/c.
[[nodiscard]] inline Eigen::VectorXd incumbent_spectrum(int L) {
    Eigen::VectorXd d(L);
    for (int i = 0; i < L; ++i) d(i) = L - i;
    return d / d.norm();
}

}  // namespace detail

/// One batch refinement pass. Each node joint-diagonalizes its incumbent
/// (embodied as U diag(L..1) U^T / c, the unique symmetric matrix whose JD
/// solution is exactly U with its column order) against every input, the
/// inputs weighted by the neighbourhood kernel around their winners and the
/// gain nu, the incumbent by (1-nu) times the total input weight. Nodes an
/// entire kernel width away from every winner (total weight < 1e-12) are left
/// untouched. Non-convergence keeps the best basis found and clears the
/// node's convergence flag. Nodes are independent and processed in parallel.
[[nodiscard]] inline EigenMap update_bases(const EigenMap& map,
                                           const std::vector<EmbeddedCovariance>& inputs,
                                           const Assignment& assign, double sigma, double nu,
                                           const JDOptions& opt = {}) {
    validate(map);
    if (assign.size() != inputs.size())
        throw std::invalid_argument("update_bases: assignment size " +
                                    std::to_string(assign.size()) + " != input count " +
                                    std::to_string(inputs.size()));
    if (!(sigma > 0.0))
        throw std::invalid_argument("update_bases: sigma must be positive");
    if (!(nu >= 0.0 && nu <= 1.0))
        throw std::invalid_argument("update_bases: nu must lie in [0, 1]");

    const std::size_t m = inputs.size();
    const Eigen::VectorXd spectrum = detail::incumbent_spectrum(map.L);

    EigenMap next = map;
    next.jd_converged.assign(map.bases.size(), 1);
    parallel_for(map.bases.size(), [&](std::size_t node) {
        const NodeCoord here = map.coord(node);
        const OrthoBasis& u = map.bases[node];

        std::vector<double> w(m);
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            w[i] = kernel(grid_distance(here, assign.winner[i]), sigma);
            total += w[i];
        }
        if (total < 1e-12) return;

        std::vector<SymMatrix> mats;
        std::vector<double> weights;
        mats.reserve(m + 1);
        weights.reserve(m + 1);
        const double w0 = (1.0 - nu) * total;
        if (w0 > 1e-15) {
            Eigen::MatrixXd a =
                u.data() * spectrum.asDiagonal() * u.data().transpose();
            mats.emplace_back(SymMatrix((a + a.transpose()) / 2.0));
            weights.push_back(w0);
        }
        for (std::size_t i = 0; i < m; ++i) {
            const double wi = nu * w[i];
            if (wi > 1e-15) {
                mats.push_back(inputs[i].matrix());
                weights.push_back(wi);
            }
        }
        if (mats.empty()) return;

        JDResult res = joint_diagonalize(WeightedSet(std::move(mats), std::move(weights)), u, opt);
        next.bases[node] = std::move(res.basis);
        next.jd_converged[node] = res.converged ? 1 : 0;
    });
    return next;
}

struct TrainResult {
    EigenMap map;
    std::vector<Assignment> history;  // one competitive pass per iteration
};

/// Full training loop: seeded init, then per iteration a competitive pass
/// (random winners on the first) followed by a batch update under the
/// annealing schedules. Pure function of (inputs, cfg).
[[nodiscard]] inline TrainResult train(const std::vector<EmbeddedCovariance>& inputs,
                                       const TrainConfig& cfg) {
    validate(cfg);
    if (inputs.empty())
        throw std::invalid_argument("train: no inputs");

    TrainResult result{init_map(cfg), {}};
    const JDOptions opt{cfg.jd_tol, cfg.jd_max_sweeps};
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x636f6d70ULL));

    for (int i = 0; i < cfg.iterations; ++i) {
        const double sigma = cfg.sigma_at(i);
        if (cfg.early_stop_radius && i > 0 && sigma < 1.0) break;
        Assignment a = compete(result.map, inputs, i == 0, rng);
        result.map = update_bases(result.map, inputs, a, sigma, cfg.nu_at(i), opt);
        result.map.iteration = i + 1;
        result.history.push_back(std::move(a));
    }
    return result;
}

/// Inference pass: compete on a trained map with deterministic tie-breaking
/// derived from the map identity (seed and iteration), so repeated calls
/// agree.
[[nodiscard]] inline Assignment assign(const EigenMap& map,
                                       const std::vector<EmbeddedCovariance>& inputs) {
    std::mt19937_64 rng(mix_seed(mix_seed(map.seed, 0x61736e67ULL),
                                 static_cast<std::uint64_t>(map.iteration)));
    return compete(map, inputs, false, rng);
}

}  // namespace soem
