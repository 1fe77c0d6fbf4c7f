#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "soem/datagen.hpp"
#include "soem/pipeline.hpp"

namespace {

/// Verbs are stage prefixes: `train` runs embed+train, `pipeline` runs the
/// whole chain. `gen` stands apart and only produces a benchmark dataset.
soem::Stage last_stage(const std::string& verb) {
    if (verb == "embed") return soem::Stage::embed;
    if (verb == "train") return soem::Stage::train;
    if (verb == "assign") return soem::Stage::assign;
    if (verb == "eval") return soem::Stage::evaluate;
    return soem::Stage::forecast;  // forecast and pipeline both run everything
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clusters time series by training a self-organising map of "
                 "eigenbases over covariances of their time-delay embeddings"};
    app.require_subcommand(1);

    std::string config_path, input_path, labels_path, format = "ucr";
    std::string embed_policy, horizons, out_dir;
    std::vector<int> grid;
    int iters = 0, embed_dim = 0, clusters = 0;
    std::uint64_t seed = 0;
    double train_frac = 0.0;

    const auto add_common = [&](CLI::App* sub, bool needs_input) {
        sub->add_option("--config", config_path, "key = value settings file");
        sub->add_option("--grid", grid, "map dimensions: ROWS COLS")->expected(2);
        sub->add_option("--iters", iters, "training iterations");
        auto* dim = sub->add_option("--embed-dim", embed_dim, "embedding dimension L");
        sub->add_option("--embed-policy", embed_policy,
                        "L rule when --embed-dim is absent: tenth | fraction:F | fixed:K")
            ->excludes(dim);
        sub->add_option("--seed", seed, "root seed for every random choice");
        sub->add_option("--clusters", clusters, "cluster count for forecasting");
        sub->add_option("--horizons", horizons, "comma-separated forecast horizons");
        sub->add_option("--train-frac", train_frac,
                        "fraction of each series used for fitting when forecasting");
        sub->add_option("--out", out_dir, "artifact directory");
        if (needs_input) {
            sub->add_option("input", input_path, "dataset file")->required();
            sub->add_option("--format", format,
                            "ucr (label,v1,v2,... per line) | channels (long-format CSV)")
                ->check(CLI::IsMember({"ucr", "channels"}));
            sub->add_option("--labels", labels_path,
                            "series_id,label file for the channels format");
        }
    };

    add_common(app.add_subcommand("gen", "write the three-family benchmark dataset"), false);
    add_common(app.add_subcommand("embed", "compute embedded covariances"), true);
    add_common(app.add_subcommand("train", "embed, then train the map"), true);
    add_common(app.add_subcommand("assign", "embed, train, and assign winners"), true);
    add_common(app.add_subcommand("eval", "run the chain through cluster metrics"), true);
    add_common(app.add_subcommand("forecast", "run the full chain through forecasting"), true);
    add_common(app.add_subcommand("pipeline", "run every stage"), true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        soem::PipelineConfig cfg;
        if (!config_path.empty()) cfg = soem::load_config(config_path);

        CLI::App* sub = app.get_subcommands().front();
        if (sub->count("--grid")) {
            cfg.train.rows = grid[0];
            cfg.train.cols = grid[1];
        }
        if (sub->count("--iters")) cfg.train.iterations = iters;
        if (sub->count("--embed-dim")) cfg.train.L = embed_dim;
        if (sub->count("--embed-policy"))
            cfg.embed_policy = soem::parse_embed_policy(embed_policy);
        if (sub->count("--seed")) cfg.train.seed = seed;
        if (sub->count("--clusters")) cfg.clusters = clusters;
        if (sub->count("--horizons")) cfg.horizons = soem::detail::parse_horizons(horizons);
        if (sub->count("--train-frac")) cfg.train_frac = train_frac;
        if (sub->count("--out")) cfg.out_dir = out_dir;
        if (!labels_path.empty() && format != "channels")
            throw std::invalid_argument("--labels requires --format channels");

        const std::string verb = sub->get_name();
        if (verb == "gen") {
            validate(cfg);
            const std::vector<soem::TimeSeries> series = soem::generate_groups(
                soem::benchmark_specs(cfg.gen_length, cfg.gen_noise_std), cfg.gen_per_group,
                cfg.gen_randomize_initial, cfg.train.seed);
            std::filesystem::create_directories(cfg.out_dir);
            const std::string path = cfg.out_dir + "/dataset.csv";
            soem::save_ucr(path, series);
            std::printf("wrote %zu series to %s\n", series.size(), path.c_str());
            return 0;
        }

        soem::Dataset ds;
        if (format == "channels") {
            const std::optional<std::string> labels =
                labels_path.empty() ? std::optional<std::string>{} : labels_path;
            ds = soem::load_multivariate(input_path, labels);
        } else {
            ds = soem::load_ucr(input_path);
        }

        const soem::RunManifest man =
            soem::run_pipeline(ds, cfg, soem::stages_through(last_stage(verb)));
        std::printf("ok: %zu artifacts in %s\n", man.outputs.size(), cfg.out_dir.c_str());
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
