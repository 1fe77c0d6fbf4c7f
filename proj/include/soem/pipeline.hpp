#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soem/dataset.hpp"
#include "soem/eigenmap.hpp"
#include "soem/evaluation.hpp"
#include "soem/map_io.hpp"
#include "soem/ssa.hpp"

namespace soem {

/// Everything a run needs beyond the trainer: how to pick L, how many
/// eigenvectors to retain for forecasting, clustering and evaluation knobs,
/// and where artifacts go. `train.L == 0` means "resolve from embed_policy
/// against the shortest series".
struct PipelineConfig {
    TrainConfig train;
    EmbedPolicy embed_policy{EmbedPolicy::Kind::tenth, 0.0};
    RPolicy retention{};
    int clusters = 3;
    std::vector<int> horizons = {1, 3, 6, 12};
    double train_frac = 2.0 / 3.0;
    int db_draws = 100;
    bool cache_covariances = true;
    std::string out_dir = "soem_out";

    // Knobs for the `gen` verb; inert during pipeline runs.
    int gen_per_group = 20;
    int gen_length = 200;
    double gen_noise_std = 0.05;
    bool gen_randomize_initial = false;
};

inline void validate(const PipelineConfig& cfg) {
    if (cfg.clusters < 1)
        throw std::invalid_argument("PipelineConfig: clusters must be >= 1");
    if (cfg.horizons.empty())
        throw std::invalid_argument("PipelineConfig: horizons must be nonempty");
    std::set<int> seen;
    for (int h : cfg.horizons) {
        if (h < 1) throw std::invalid_argument("PipelineConfig: horizons must be >= 1");
        if (!seen.insert(h).second)
            throw std::invalid_argument("PipelineConfig: duplicate horizon " +
                                        std::to_string(h));
    }
    if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0))
        throw std::invalid_argument("PipelineConfig: train_frac must be in (0,1)");
    if (cfg.db_draws < 1)
        throw std::invalid_argument("PipelineConfig: db_draws must be >= 1");
    if (cfg.out_dir.empty())
        throw std::invalid_argument("PipelineConfig: out_dir must be nonempty");
    if (cfg.gen_per_group < 1 || cfg.gen_length < 2 || cfg.gen_noise_std < 0.0)
        throw std::invalid_argument("PipelineConfig: invalid gen settings");
}

[[nodiscard]] inline EmbedPolicy parse_embed_policy(const std::string& s) {
    if (s == "tenth") return {EmbedPolicy::Kind::tenth, 0.0};
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : s.substr(colon + 1);
    if ((head == "fraction" || head == "fixed") && !tail.empty())
        return {head == "fraction" ? EmbedPolicy::Kind::fraction : EmbedPolicy::Kind::fixed,
                detail::parse_number(tail, "embed_policy")};
    throw std::invalid_argument("embed_policy: expected tenth, fraction:F, or fixed:K, got '" +
                                s + "'");
}

[[nodiscard]] inline std::string embed_policy_string(const EmbedPolicy& p) {
    char buf[48];
    switch (p.kind) {
        case EmbedPolicy::Kind::tenth: return "tenth";
        case EmbedPolicy::Kind::fraction:
            std::snprintf(buf, sizeof buf, "fraction:%.17g", p.value);
            return buf;
        default:
            std::snprintf(buf, sizeof buf, "fixed:%.17g", p.value);
            return buf;
    }
}

[[nodiscard]] inline RPolicy parse_retention(const std::string& s) {
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon);
    const std::string tail = colon == std::string::npos ? "" : s.substr(colon + 1);
    if ((head == "energy" || head == "fixed") && !tail.empty())
        return {head == "energy" ? RPolicy::Kind::energy : RPolicy::Kind::fixed,
                detail::parse_number(tail, "retention")};
    throw std::invalid_argument("retention: expected energy:F or fixed:R, got '" + s + "'");
}

[[nodiscard]] inline std::string retention_string(const RPolicy& p) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s:%.17g",
                  p.kind == RPolicy::Kind::energy ? "energy" : "fixed", p.value);
    return buf;
}

/// Flat `key = value` lines; '#' starts a comment, blank lines are skipped.
[[nodiscard]] inline std::map<std::string, std::string> parse_config_text(
    const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": empty key or value");
        kv[key] = value;
    }
    return kv;
}

namespace detail {

[[nodiscard]] inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

[[nodiscard]] inline std::vector<int> parse_horizons(const std::string& v) {
    std::vector<int> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ','))
        out.push_back(static_cast<int>(parse_integer(tok, "horizons")));
    return out;
}

}  // namespace detail

/// Applies parsed key/value pairs onto cfg. Unknown keys are errors so typos
/// fail loudly instead of silently running defaults.
inline void apply_config(PipelineConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "rows")
            cfg.train.rows = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "cols")
            cfg.train.cols = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "iterations")
            cfg.train.iterations = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "sigma0")
            cfg.train.sigma0 = detail::parse_number(value, key);
        else if (key == "sigma_schedule")
            cfg.train.sigma_schedule = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "nu0")
            cfg.train.nu0 = detail::parse_number(value, key);
        else if (key == "nu_schedule")
            cfg.train.nu_schedule = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "jd_tol")
            cfg.train.jd_tol = detail::parse_number(value, key);
        else if (key == "jd_max_sweeps")
            cfg.train.jd_max_sweeps = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "seed")
            cfg.train.seed = static_cast<std::uint64_t>(detail::parse_integer(value, key));
        else if (key == "L")
            cfg.train.L = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "unit_norm")
            cfg.train.unit_norm = detail::parse_bool(value, key);
        else if (key == "early_stop_radius")
            cfg.train.early_stop_radius = detail::parse_bool(value, key);
        else if (key == "embed_policy")
            cfg.embed_policy = parse_embed_policy(value);
        else if (key == "retention")
            cfg.retention = parse_retention(value);
        else if (key == "clusters")
            cfg.clusters = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "horizons")
            cfg.horizons = detail::parse_horizons(value);
        else if (key == "train_frac")
            cfg.train_frac = detail::parse_number(value, key);
        else if (key == "db_draws")
            cfg.db_draws = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "cache_covariances")
            cfg.cache_covariances = detail::parse_bool(value, key);
        else if (key == "out_dir")
            cfg.out_dir = value;
        else if (key == "gen_per_group")
            cfg.gen_per_group = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "gen_length")
            cfg.gen_length = static_cast<int>(detail::parse_integer(value, key));
        else if (key == "gen_noise_std")
            cfg.gen_noise_std = detail::parse_number(value, key);
        else if (key == "gen_randomize_initial")
            cfg.gen_randomize_initial = detail::parse_bool(value, key);
        else
            throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

[[nodiscard]] inline PipelineConfig load_config(const std::string& path) {
    PipelineConfig cfg;
    apply_config(cfg, parse_config_text(detail::read_file(path)));
    return cfg;
}

[[nodiscard]] inline nlohmann::json config_json(const PipelineConfig& cfg) {
    return {{"rows", cfg.train.rows},
            {"cols", cfg.train.cols},
            {"iterations", cfg.train.iterations},
            {"sigma0", cfg.train.sigma0},
            {"sigma_schedule", cfg.train.sigma_schedule},
            {"nu0", cfg.train.nu0},
            {"nu_schedule", cfg.train.nu_schedule},
            {"jd_tol", cfg.train.jd_tol},
            {"jd_max_sweeps", cfg.train.jd_max_sweeps},
            {"seed", cfg.train.seed},
            {"L", cfg.train.L},
            {"unit_norm", cfg.train.unit_norm},
            {"early_stop_radius", cfg.train.early_stop_radius},
            {"embed_policy", embed_policy_string(cfg.embed_policy)},
            {"retention", retention_string(cfg.retention)},
            {"clusters", cfg.clusters},
            {"horizons", cfg.horizons},
            {"train_frac", cfg.train_frac},
            {"db_draws", cfg.db_draws},
            {"cache_covariances", cfg.cache_covariances},
            {"out_dir", cfg.out_dir}};
}

enum class Stage { embed, train, assign, evaluate, forecast };

inline constexpr std::array<Stage, 5> stage_order = {Stage::embed, Stage::train, Stage::assign,
                                                     Stage::evaluate, Stage::forecast};

[[nodiscard]] inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::embed: return "embed";
        case Stage::train: return "train";
        case Stage::assign: return "assign";
        case Stage::evaluate: return "evaluate";
        default: return "forecast";
    }
}

/// Commands must be embed, embed+train, ... in order: each stage consumes the
/// previous one's product, so anything else cannot run.
inline void validate_stage_chain(const std::vector<Stage>& commands) {
    if (commands.empty() || commands.size() > stage_order.size())
        throw std::invalid_argument("pipeline: commands must be a nonempty stage prefix");
    for (std::size_t i = 0; i < commands.size(); ++i)
        if (commands[i] != stage_order[i])
            throw std::invalid_argument("pipeline: commands must form a prefix chain "
                                        "embed -> train -> assign -> evaluate -> forecast");
}

[[nodiscard]] inline std::vector<Stage> stages_through(Stage last) {
    std::vector<Stage> out;
    for (Stage s : stage_order) {
        out.push_back(s);
        if (s == last) break;
    }
    return out;
}

/// K-means over winner grid coordinates: seeded initialization from distinct
/// winner locations, 50 restarts, Lloyd iterations to a fixed point, best
/// within-cluster sum of squares kept.
[[nodiscard]] inline std::vector<int> partition_grid(const Assignment& a, int K,
                                                     std::uint64_t seed) {
    if (a.size() == 0) throw std::invalid_argument("partition_grid: empty assignment");
    if (K < 1) throw std::invalid_argument("partition_grid: K must be >= 1");
    std::set<std::pair<int, int>> distinct;
    for (const auto& w : a.winner) distinct.insert({w.row, w.col});
    if (static_cast<std::size_t>(K) > distinct.size())
        throw std::invalid_argument("partition_grid: K=" + std::to_string(K) + " exceeds " +
                                    std::to_string(distinct.size()) + " distinct winners");
    const std::vector<std::pair<int, int>> pool(distinct.begin(), distinct.end());

    const std::size_t n = a.size();
    std::vector<int> best_labels(n, 0);
    double best_wcss = std::numeric_limits<double>::infinity();
    bool have_best = false;

    for (int restart = 0; restart < 50; ++restart) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(restart)));
        // Partial Fisher-Yates over the distinct locations picks K without
        // replacement.
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (int k = 0; k < K; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
            std::swap(order[k], order[pick(rng)]);
        }
        std::vector<double> cr(K), cc(K);
        for (int k = 0; k < K; ++k) {
            cr[k] = pool[order[k]].first;
            cc[k] = pool[order[k]].second;
        }

        std::vector<int> labels(n, -1);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                int arg = 0;
                double best = std::numeric_limits<double>::infinity();
                for (int k = 0; k < K; ++k) {
                    const double dr = a.winner[i].row - cr[k];
                    const double dc = a.winner[i].col - cc[k];
                    const double d2 = dr * dr + dc * dc;
                    if (d2 < best) {
                        best = d2;
                        arg = k;
                    }
                }
                if (labels[i] != arg) {
                    labels[i] = arg;
                    changed = true;
                }
            }
            std::vector<double> sr(K, 0.0), sc(K, 0.0);
            std::vector<int> cnt(K, 0);
            for (std::size_t i = 0; i < n; ++i) {
                sr[labels[i]] += a.winner[i].row;
                sc[labels[i]] += a.winner[i].col;
                ++cnt[labels[i]];
            }
            for (int k = 0; k < K; ++k) {
                if (cnt[k] == 0) {
                    // Re-seed an emptied cluster at the point farthest from
                    // its current centroid; deterministic lowest-index ties.
                    std::size_t far = 0;
                    double far_d = -1.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dr = a.winner[i].row - cr[labels[i]];
                        const double dc = a.winner[i].col - cc[labels[i]];
                        const double d2 = dr * dr + dc * dc;
                        if (d2 > far_d) {
                            far_d = d2;
                            far = i;
                        }
                    }
                    cr[k] = a.winner[far].row;
                    cc[k] = a.winner[far].col;
                    changed = true;
                } else {
                    cr[k] = sr[k] / cnt[k];
                    cc[k] = sc[k] / cnt[k];
                }
            }
            if (!changed) break;
        }

        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dr = a.winner[i].row - cr[labels[i]];
            const double dc = a.winner[i].col - cc[labels[i]];
            wcss += dr * dr + dc * dc;
        }
        if (!have_best || wcss < best_wcss) {
            best_wcss = wcss;
            best_labels = labels;
            have_best = true;
        }
    }
    return best_labels;
}

/// Shared forecasting model for one cluster: one recurrence fit on the pooled
/// covariance of the members' training prefixes, falling back to per-member
/// recurrences when the pooled retained eigenspace is vertical.
struct ClusterForecastModel {
    std::vector<LRFModel> member_model;
    bool fallback = false;
};

[[nodiscard]] inline ClusterForecastModel cluster_model(const std::vector<TimeSeries>& prefixes,
                                                        int L, const RPolicy& retention) {
    if (prefixes.empty()) throw std::invalid_argument("cluster_model: empty cluster");
    ClusterForecastModel out;
    try {
        const LRFModel shared =
            lrf(decompose(detail::pooled_covariance(prefixes, L, "cluster"), retention));
        out.member_model.assign(prefixes.size(), shared);
    } catch (const std::runtime_error&) {
        out.fallback = true;
        for (const auto& p : prefixes)
            out.member_model.push_back(
                lrf(decompose(covariance(embed(p, L), false), retention)));
    }
    return out;
}

namespace detail {

[[nodiscard]] inline TimeSeries training_prefix(const TimeSeries& s, double frac) {
    const auto cut = static_cast<std::size_t>(
        std::floor(frac * static_cast<double>(s.values.size()) + 1e-9));
    if (cut < 2)
        throw std::invalid_argument("series '" + s.id + "': training prefix of " +
                                    std::to_string(cut) + " values is too short");
    return {s.id, {s.values.begin(), s.values.begin() + cut}, s.label};
}

}  // namespace detail

/// Rolling-origin h-step RMSE of a partitioned MSSA forecast. Models are fit
/// once per cluster on training prefixes; at each origin in the holdout the
/// window rolls forward over actual values and the h-step-ahead error is
/// pooled over origins and series. Returns one RMSE per requested horizon.
[[nodiscard]] inline std::vector<double> rolling_rmse(const std::vector<TimeSeries>& all,
                                                      const std::vector<int>& partition, int K,
                                                      int L, const RPolicy& retention,
                                                      double train_frac,
                                                      const std::vector<int>& horizons) {
    if (all.empty()) throw std::invalid_argument("rolling_rmse: no series");
    if (partition.size() != all.size())
        throw std::invalid_argument("rolling_rmse: partition size mismatch");
    if (horizons.empty()) throw std::invalid_argument("rolling_rmse: no horizons");
    for (int p : partition)
        if (p < 0 || p >= K)
            throw std::invalid_argument("rolling_rmse: partition label outside [0, K)");
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("rolling_rmse: train_frac must be in (0,1)");

    const int max_h = *std::max_element(horizons.begin(), horizons.end());
    std::vector<double> sums(horizons.size(), 0.0);
    std::vector<long> counts(horizons.size(), 0);

    for (int k = 0; k < K; ++k) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < all.size(); ++i)
            if (partition[i] == k) members.push_back(i);
        if (members.empty()) continue;

        std::vector<TimeSeries> prefixes;
        prefixes.reserve(members.size());
        for (std::size_t i : members)
            prefixes.push_back(detail::training_prefix(all[i], train_frac));
        const ClusterForecastModel model = cluster_model(prefixes, L, retention);

        for (std::size_t m = 0; m < members.size(); ++m) {
            const TimeSeries& s = all[members[m]];
            const auto n = static_cast<long>(s.values.size());
            const long t_end = static_cast<long>(prefixes[m].values.size());
            for (long origin = t_end - 1; origin + 1 < n; ++origin) {
                const int reach = static_cast<int>(std::min<long>(max_h, n - 1 - origin));
                const TimeSeries known{s.id, {s.values.begin(), s.values.begin() + origin + 1},
                                       s.label};
                const std::vector<double> fc =
                    forecast(known, model.member_model[m], reach);
                for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
                    const int h = horizons[hi];
                    if (h > reach) continue;
                    const double err = fc[h - 1] - s.values[origin + h];
                    sums[hi] += err * err;
                    ++counts[hi];
                }
            }
        }
    }

    std::vector<double> rmse(horizons.size(), 0.0);
    for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
        if (counts[hi] == 0)
            throw std::invalid_argument("rolling_rmse: no origin reaches horizon " +
                                        std::to_string(horizons[hi]));
        rmse[hi] = std::sqrt(sums[hi] / static_cast<double>(counts[hi]));
    }
    return rmse;
}

/// Written at run start (status "running") and finalized at the end, so a
/// crash leaves evidence. Every emitted artifact is listed with its content
/// hash; timings are wall-clock and vary run to run (the data artifacts are
/// the byte-stable ones).
struct RunManifest {
    std::string status = "running";
    std::string error;
    std::uint64_t seed = 0;
    std::string source;
    std::string input_digest;
    std::vector<std::string> stages;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::string>> outputs;
    std::vector<std::pair<std::string, double>> timings_ms;
    std::string path;
};

namespace detail {

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for '" + path + "'");
}

inline void write_manifest(const RunManifest& man) {
    nlohmann::json j{{"status", man.status},
                     {"seed", man.seed},
                     {"input", {{"source", man.source}, {"digest", man.input_digest}}},
                     {"stages", man.stages},
                     {"config", man.config}};
    if (!man.error.empty()) j["error"] = man.error;
    auto outputs = nlohmann::json::array();
    for (const auto& [file, hash] : man.outputs)
        outputs.push_back({{"file", file}, {"fnv1a64", hash}});
    j["outputs"] = outputs;
    auto timings = nlohmann::json::object();
    for (const auto& [stage, ms] : man.timings_ms) timings[stage] = ms;
    j["timings_ms"] = timings;
    write_text(man.path, j.dump(2) + "\n");
}

/// Writes an artifact and records (name, content hash) in the manifest.
inline void emit(RunManifest& man, const std::string& dir, const std::string& name,
                 const std::string& content) {
    write_text(dir + "/" + name, content);
    man.outputs.emplace_back(name, hex64(fnv1a64(content)));
}

class StageTimer {
public:
    StageTimer(RunManifest& man, std::string name)
        : man_(man), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const auto end = std::chrono::steady_clock::now();
        man_.timings_ms.emplace_back(
            name_, std::chrono::duration<double, std::milli>(end - start_).count());
    }

private:
    RunManifest& man_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Runs the requested stage prefix over the dataset and writes artifacts into
/// cfg.out_dir: covariances.json (optional cache), map.json, assignment.csv,
/// metrics.json, forecast.csv, rmse.csv, and manifest.json. When the chain
/// includes the forecast stage, embedding, map training, and recurrence
/// estimation see only each series' training prefix.
inline RunManifest run_pipeline(const Dataset& ds, PipelineConfig cfg,
                                const std::vector<Stage>& commands) {
    validate(ds);
    validate(cfg);
    validate_stage_chain(commands);
    const Stage last = commands.back();
    const bool forecasting = last == Stage::forecast;

    std::filesystem::create_directories(cfg.out_dir);

    // The map needs one shared dimension; resolve the policy against the
    // shortest embedded span so every series supports it.
    const bool multi = ds.kind == DatasetKind::multivariate;
    const std::size_t n_items = ds.size();
    std::size_t min_len = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < n_items; ++i) {
        const std::size_t len = multi ? ds.multi[i].channels.front().values.size()
                                      : ds.series[i].values.size();
        const std::size_t used = forecasting
                                     ? static_cast<std::size_t>(std::floor(
                                           cfg.train_frac * static_cast<double>(len) + 1e-9))
                                     : len;
        min_len = std::min(min_len, used);
    }
    if (cfg.train.L < 2)
        cfg.train.L = default_L(static_cast<int>(min_len), cfg.embed_policy);
    validate(cfg.train);
    const int L = cfg.train.L;

    RunManifest man;
    man.seed = cfg.train.seed;
    man.source = ds.source;
    man.input_digest = ds.digest;
    for (Stage s : commands) man.stages.push_back(stage_name(s));
    man.config = config_json(cfg);
    man.path = cfg.out_dir + "/manifest.json";
    detail::write_manifest(man);

    try {
        // embed
        std::vector<std::optional<EmbeddedCovariance>> slots(n_items);
        std::vector<std::string> ids(n_items);
        std::vector<std::optional<std::string>> labels(n_items);
        {
            const detail::StageTimer timer(man, "embed");
            parallel_for(n_items, [&](std::size_t i) {
                if (multi) {
                    MultiSeries used = ds.multi[i];
                    if (forecasting)
                        for (auto& ch : used.channels)
                            ch = detail::training_prefix(ch, cfg.train_frac);
                    slots[i] = stack_covariance(used, L, cfg.train.unit_norm);
                    ids[i] = ds.multi[i].id;
                    labels[i] = ds.multi[i].label;
                } else {
                    const TimeSeries used = forecasting
                                                ? detail::training_prefix(ds.series[i],
                                                                          cfg.train_frac)
                                                : ds.series[i];
                    slots[i] = covariance(embed(used, L), cfg.train.unit_norm);
                    ids[i] = ds.series[i].id;
                    labels[i] = ds.series[i].label;
                }
            });
            if (cfg.cache_covariances) {
                nlohmann::json items = nlohmann::json::array();
                for (std::size_t i = 0; i < n_items; ++i)
                    items.push_back(
                        {{"id", ids[i]},
                         {"label", labels[i] ? nlohmann::json(*labels[i]) : nlohmann::json()},
                         {"data", detail::encode_basis(slots[i]->matrix().data())}});
                const nlohmann::json cache{{"format_version", 1},
                                           {"L", L},
                                           {"unit_norm", cfg.train.unit_norm},
                                           {"items", items}};
                detail::emit(man, cfg.out_dir, "covariances.json", cache.dump(2) + "\n");
            }
        }
        std::vector<EmbeddedCovariance> covs;
        covs.reserve(n_items);
        for (auto& s : slots) covs.push_back(std::move(*s));

        if (last != Stage::embed) {
            // train
            std::optional<TrainResult> trained;
            {
                const detail::StageTimer timer(man, "train");
                trained = train(covs, cfg.train);
                save_map(trained->map, cfg.out_dir + "/map.json");
                man.outputs.emplace_back(
                    "map.json",
                    detail::hex64(fnv1a64(detail::read_file(cfg.out_dir + "/map.json"))));
            }

            if (last != Stage::train) {
                // assign
                Assignment asg;
                {
                    const detail::StageTimer timer(man, "assign");
                    asg = assign(trained->map, covs);
                    std::ostringstream csv;
                    csv << "id,i,j,deviation,runner_i,runner_j\n";
                    char buf[64];
                    for (std::size_t i = 0; i < n_items; ++i) {
                        std::snprintf(buf, sizeof buf, "%.17g", asg.deviation[i]);
                        csv << ids[i] << ',' << asg.winner[i].row << ',' << asg.winner[i].col
                            << ',' << buf << ',' << asg.runner_up[i].row << ','
                            << asg.runner_up[i].col << '\n';
                    }
                    detail::emit(man, cfg.out_dir, "assignment.csv", csv.str());
                }

                if (last != Stage::assign) {
                    // evaluate
                    {
                        const detail::StageTimer timer(man, "evaluate");
                        MetricReport rep;
                        const Grid grid = trained->map.grid;
                        rep.topo_accuracy = topographic_accuracy(asg, grid);
                        rep.mean_runnerup_distance = mean_runnerup_distance(asg);
                        rep.rank_distance_curve =
                            rank_distance_curve(trained->map, covs, grid.nodes());

                        bool labeled = true;
                        std::set<std::string> classes;
                        for (const auto& l : labels) {
                            if (!l) labeled = false;
                            else classes.insert(*l);
                        }
                        if (labeled && classes.size() >= 2) {
                            LabeledPlacement placement;
                            placement.coords = asg.winner;
                            for (const auto& l : labels) placement.labels.push_back(*l);
                            rep.db = davies_bouldin(placement);
                            rep.db_random_mean = db_random_baseline(
                                placement.labels, grid, cfg.db_draws,
                                mix_seed(cfg.train.seed, 0x64626173ULL));
                            if (rep.db == 0.0 && rep.db_random_mean == 0.0)
                                rep.db_ratio = 0.0;
                            else
                                rep.db_ratio = rep.db / rep.db_random_mean;
                        } else {
                            rep.db = std::numeric_limits<double>::quiet_NaN();
                            rep.db_random_mean = rep.db;
                            rep.db_ratio = rep.db;
                        }
                        detail::emit(man, cfg.out_dir, "metrics.json",
                                     metric_report_json(rep).dump(2) + "\n");
                    }

                    if (last == Stage::forecast) {
                        const detail::StageTimer timer(man, "forecast");
                        const std::vector<int> partition = partition_grid(
                            asg, cfg.clusters, mix_seed(cfg.train.seed, 0x70617274ULL));

                        // Flatten to univariate units; channels inherit their
                        // series' cluster.
                        std::vector<TimeSeries> flat;
                        std::vector<int> flat_part;
                        std::vector<std::string> flat_ids;
                        for (std::size_t i = 0; i < n_items; ++i) {
                            if (multi) {
                                for (const auto& ch : ds.multi[i].channels) {
                                    flat.push_back(ch);
                                    flat.back().id = ds.multi[i].id + "/" + ch.id;
                                    flat_part.push_back(partition[i]);
                                    flat_ids.push_back(flat.back().id);
                                }
                            } else {
                                flat.push_back(ds.series[i]);
                                flat_part.push_back(partition[i]);
                                flat_ids.push_back(ids[i]);
                            }
                        }

                        const int max_h =
                            *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
                        std::ostringstream fcsv;
                        fcsv << "id,horizon,value\n";
                        char buf[64];
                        for (int k = 0; k < cfg.clusters; ++k) {
                            std::vector<std::size_t> members;
                            for (std::size_t i = 0; i < flat.size(); ++i)
                                if (flat_part[i] == k) members.push_back(i);
                            if (members.empty()) continue;
                            std::vector<TimeSeries> prefixes;
                            for (std::size_t i : members)
                                prefixes.push_back(
                                    detail::training_prefix(flat[i], cfg.train_frac));
                            const ClusterForecastModel model =
                                cluster_model(prefixes, L, cfg.retention);
                            for (std::size_t m = 0; m < members.size(); ++m) {
                                const std::vector<double> fc =
                                    forecast(flat[members[m]], model.member_model[m], max_h);
                                for (int h : cfg.horizons) {
                                    std::snprintf(buf, sizeof buf, "%.17g", fc[h - 1]);
                                    fcsv << flat_ids[members[m]] << ',' << h << ',' << buf
                                         << '\n';
                                }
                            }
                        }
                        detail::emit(man, cfg.out_dir, "forecast.csv", fcsv.str());

                        const std::vector<double> clustered =
                            rolling_rmse(flat, flat_part, cfg.clusters, L, cfg.retention,
                                         cfg.train_frac, cfg.horizons);
                        const std::vector<double> pooled =
                            rolling_rmse(flat, std::vector<int>(flat.size(), 0), 1, L,
                                         cfg.retention, cfg.train_frac, cfg.horizons);
                        std::ostringstream rcsv;
                        rcsv << "horizon,clustered_mssa,pooled_mssa\n";
                        for (std::size_t hi = 0; hi < cfg.horizons.size(); ++hi) {
                            char b1[64], b2[64];
                            std::snprintf(b1, sizeof b1, "%.17g", clustered[hi]);
                            std::snprintf(b2, sizeof b2, "%.17g", pooled[hi]);
                            rcsv << cfg.horizons[hi] << ',' << b1 << ',' << b2 << '\n';
                        }
                        detail::emit(man, cfg.out_dir, "rmse.csv", rcsv.str());
                    }
                }
            }
        }

        man.status = "ok";
        detail::write_manifest(man);
    } catch (const std::exception& e) {
        man.status = "failed";
        man.error = e.what();
        detail::write_manifest(man);
        throw;
    }
    return man;
}

}  // namespace soem
