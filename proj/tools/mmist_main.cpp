// Experiment runner: wires the cohort, MIL, reconstruction, fusion and
// evaluation stages into reproducible runs driven by a JSON config.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mmist/pipeline.hpp"

namespace fs = std::filesystem;
using mmist::pipeline::ExperimentConfig;
using mmist::pipeline::Paths;
using mmist::pipeline::StageError;
using json = nlohmann::ordered_json;

namespace {

struct CliFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string output;
    bool skip_reconstruction = false;
    std::string fusion;
};

ExperimentConfig resolve_config(const CliFlags& flags) {
    json j = json::object();
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw mmist::InvalidConfig("cannot open config: " + flags.config_path);
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw mmist::InvalidConfig(std::string("config parse error: ") + e.what());
        }
    }
    if (flags.seed) {
        j["seed"] = *flags.seed;
        if (j.contains("synth") && !j["synth"].is_null()) j["synth"]["seed"] = *flags.seed;
    }
    if (!flags.output.empty()) j["output_dir"] = flags.output;
    if (flags.skip_reconstruction) j["skip_reconstruction"] = true;
    if (!flags.fusion.empty()) j["fusion"] = flags.fusion;
    return mmist::pipeline::load_config(j);
}

void require_file(const fs::path& path) {
    if (!fs::exists(path)) throw mmist::MissingModel("missing artifact: " + path.string());
}

// Each standalone subcommand carries the stage index used for its exit code.
template <typename Fn>
void stage(int index, const char* name, Fn&& fn) {
    try {
        fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(index, name, e.what());
    }
}

int dispatch(const std::string& cmd, const CliFlags& flags) {
    ExperimentConfig cfg = resolve_config(flags);
    const Paths paths{cfg.output_dir};

    if (cmd == "pipeline") {
        mmist::pipeline::run_pipeline(cfg);
        std::cout << "wrote " << paths.report_json().string() << "\n";
        return 0;
    }

    if (cmd == "synth") {
        mmist::pipeline::LockFile lock(cfg.output_dir);
        stage(0, "synth", [&] { mmist::pipeline::cmd_synth(cfg); });
        mmist::pipeline::write_run_manifest(cfg);
        std::cout << "wrote cohort under " << paths.cohort_dir().string() << "\n";
        return 0;
    }

    mmist::pipeline::LockFile lock(cfg.output_dir);
    mmist::Cohort cohort;
    stage(1, "encode", [&] { cohort = mmist::pipeline::stage_encode(cfg); });
    if (cmd == "encode") {
        const auto s = mmist::cohort_summary(cohort);
        std::cout << "patients " << s.total.patients << " train " << s.train.patients
                  << " test " << s.test.patients << "\n";
        mmist::pipeline::write_run_manifest(cfg);
        return 0;
    }

    if (cmd == "train-mil") {
        stage(2, "train-mil", [&] { mmist::pipeline::stage_train_mil(cfg, cohort); });
    } else if (cmd == "select") {
        stage(2, "train-mil", [&] {
            for (mmist::Modality m : mmist::kImagingModalities) require_file(paths.mil_model(m));
        });
        std::map<mmist::Modality, mmist::mil::MilModel> models;
        stage(3, "select", [&] {
            models = mmist::pipeline::stage_train_mil(cfg, cohort);  // loads from disk
            mmist::pipeline::stage_select(cfg, cohort, models);
        });
    } else if (cmd == "train-recon") {
        stage(3, "select", [&] { require_file(paths.selections()); });
        stage(4, "train-recon", [&] {
            const auto sel = mmist::mil::read_selections(paths.selections(), cohort);
            mmist::pipeline::stage_train_recon(cfg, cohort, sel);
        });
    } else if (cmd == "train-fusion") {
        stage(3, "select", [&] { require_file(paths.selections()); });
        stage(5, "train-fusion", [&] {
            const auto sel = mmist::mil::read_selections(paths.selections(), cohort);
            std::optional<mmist::recon::ReconModel> recon_model;
            if (!cfg.skip_reconstruction && fs::exists(paths.recon_model()))
                recon_model = mmist::recon::from_bundle(mmist::nn::load_bundle(paths.recon_model()));
            mmist::pipeline::stage_train_fusion(cfg, cohort, sel,
                                                recon_model ? &*recon_model : nullptr);
        });
    } else if (cmd == "evaluate") {
        stage(6, "evaluate", [&] {
            for (mmist::Modality m : mmist::kImagingModalities) require_file(paths.mil_model(m));
            require_file(paths.selections());
            require_file(paths.late_weights());
            require_file(paths.early_model(mmist::fusion::CombineMode::Mean, false));
            require_file(paths.early_model(mmist::fusion::CombineMode::Concat, false));
            const auto sel = mmist::mil::read_selections(paths.selections(), cohort);
            const auto mil_models = mmist::pipeline::stage_train_mil(cfg, cohort);  // from disk
            std::optional<mmist::recon::ReconModel> recon_model;
            if (!cfg.skip_reconstruction) {
                require_file(paths.recon_model());
                recon_model =
                    mmist::recon::from_bundle(mmist::nn::load_bundle(paths.recon_model()));
            }
            const auto fm = mmist::pipeline::stage_train_fusion(
                cfg, cohort, sel, recon_model ? &*recon_model : nullptr);  // from disk
            const auto report = mmist::pipeline::build_report(
                cohort, mil_models, sel, fm, recon_model ? &*recon_model : nullptr);
            mmist::pipeline::write_report(cfg, report);
            std::cout << mmist::eval::render_text(report);
        });
    } else if (cmd == "project") {
        stage(7, "project", [&] {
            require_file(paths.selections());
            require_file(paths.recon_model());
            const auto sel = mmist::mil::read_selections(paths.selections(), cohort);
            const auto model =
                mmist::recon::from_bundle(mmist::nn::load_bundle(paths.recon_model()));
            mmist::pipeline::stage_project(cfg, cohort, sel, model);
        });
    }
    mmist::pipeline::write_run_manifest(cfg);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal survival prediction experiment runner"};
    app.require_subcommand(1);

    CliFlags flags;
    app.add_option("--config", flags.config_path, "JSON configuration file");
    uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "experiment seed (overrides config)");
    app.add_option("--output", flags.output, "output directory (overrides config)");
    app.add_flag("--skip-reconstruction", flags.skip_reconstruction,
                 "omit the reconstruction stage and its report rows");
    app.add_option("--fusion", flags.fusion, "fusion mode: ws | lw | mean | concat")
        ->check(CLI::IsMember({"ws", "lw", "mean", "concat"}));

    const char* names[] = {"synth",       "encode",       "train-mil", "select", "train-recon",
                           "train-fusion", "evaluate",    "project",   "pipeline"};
    for (const char* n : names) app.add_subcommand(n);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (seed_opt->count() > 0) flags.seed = seed_value;

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        return dispatch(cmd, flags);
    } catch (const mmist::InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3 + e.stage_index;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
