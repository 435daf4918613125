#pragma once

// Experiment orchestration: resolved configuration, stage-by-stage artifacts
// (each stage reloads saved outputs instead of recomputing), the full report
// with every experiment row, and run provenance (run.json, lock file).

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmist/cohort_io.hpp"
#include "mmist/errors.hpp"
#include "mmist/eval.hpp"
#include "mmist/fusion.hpp"
#include "mmist/hash.hpp"
#include "mmist/mil.hpp"
#include "mmist/nn.hpp"
#include "mmist/recon.hpp"
#include "mmist/synth.hpp"
#include "mmist/tabular.hpp"

namespace mmist::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "1.0.0";

struct StageConfigs {
    nn::TrainConfig mil;       // per-modality seeds/oversample applied later
    nn::TrainConfig recon;
    nn::TrainConfig baseline;
    nn::TrainConfig early;
    nn::TrainConfig lw;
};

struct ExperimentConfig {
    fs::path manifest;      // cohort manifest; defaults to <output>/cohort/manifest.csv
    fs::path feature_root;  // defaults to the manifest's directory
    fs::path output_dir = "out";
    uint64_t seed = 1;
    json synth;             // synth config JSON, null when running on real data
    StageConfigs train;
    fusion::CombineMode early_mode = fusion::CombineMode::Mean;  // train-fusion subcommand
    std::string fusion_flag = "mean";  // ws | lw | mean | concat
    bool skip_reconstruction = false;
    json resolved;          // full echo for run.json
};

inline void apply_train_overrides(nn::TrainConfig& cfg, const json& j) {
    if (j.is_null()) return;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    if (j.contains("optimizer")) {
        const std::string o = j.at("optimizer").get<std::string>();
        if (o == "adam") cfg.optimizer = nn::Optimizer::Adam;
        else if (o == "sgd") cfg.optimizer = nn::Optimizer::Sgd;
        else throw InvalidConfig("unknown optimizer: " + o);
    }
    cfg.oversample_factor = j.value("oversample_factor", cfg.oversample_factor);
    cfg.class_weight0 = j.value("class_weight0", cfg.class_weight0);
    cfg.class_weight1 = j.value("class_weight1", cfg.class_weight1);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
}

// Builds the resolved config from a JSON file plus command-line overrides.
// Stage seeds are derived from the experiment seed and the stage name, so
// one seed pins the entire run.
inline ExperimentConfig load_config(const json& j) {
    ExperimentConfig cfg;
    try {
        cfg.seed = j.value("seed", uint64_t(1));
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("manifest")) cfg.manifest = j.at("manifest").get<std::string>();
        if (j.contains("feature_root")) cfg.feature_root = j.at("feature_root").get<std::string>();
        if (j.contains("synth")) {
            cfg.synth = j.at("synth");
            if (!cfg.synth.is_null() && !cfg.synth.contains("seed")) cfg.synth["seed"] = cfg.seed;
        }
        cfg.skip_reconstruction = j.value("skip_reconstruction", false);
        cfg.fusion_flag = j.value("fusion", "mean");
        if (cfg.fusion_flag == "mean") cfg.early_mode = fusion::CombineMode::Mean;
        else if (cfg.fusion_flag == "concat") cfg.early_mode = fusion::CombineMode::Concat;
        else if (cfg.fusion_flag != "ws" && cfg.fusion_flag != "lw")
            throw InvalidConfig("fusion must be one of ws|lw|mean|concat");

        cfg.train.baseline = fusion::default_fusion_config(0);
        cfg.train.early = fusion::default_fusion_config(0);
        cfg.train.lw = fusion::default_fusion_config(0);
        cfg.train.recon.oversample_factor = 6;
        cfg.train.recon.noise_sigma = 0.01;
        cfg.train.mil.noise_sigma = 0.01;
        const json tj = j.value("train", json());
        if (!tj.is_null()) {
            apply_train_overrides(cfg.train.mil, tj.value("mil", json()));
            apply_train_overrides(cfg.train.recon, tj.value("recon", json()));
            apply_train_overrides(cfg.train.baseline, tj.value("baseline", json()));
            apply_train_overrides(cfg.train.early, tj.value("early", json()));
            apply_train_overrides(cfg.train.lw, tj.value("lw", json()));
        }
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("bad config: ") + e.what());
    }
    if (cfg.manifest.empty()) cfg.manifest = cfg.output_dir / "cohort" / "manifest.csv";
    if (cfg.feature_root.empty()) cfg.feature_root = cfg.manifest.parent_path();
    cfg.train.recon.seed = cfg.seed ^ fnv1a64("recon", 5);
    cfg.train.baseline.seed = cfg.seed ^ fnv1a64("baseline", 8);
    cfg.train.early.seed = cfg.seed ^ fnv1a64("early", 5);
    cfg.train.lw.seed = cfg.seed ^ fnv1a64("lw", 2);
    cfg.train.mil.seed = cfg.seed ^ fnv1a64("mil", 3);
    cfg.resolved = j;
    cfg.resolved["seed"] = cfg.seed;
    cfg.resolved["output_dir"] = cfg.output_dir.string();
    cfg.resolved["manifest"] = cfg.manifest.string();
    cfg.resolved["feature_root"] = cfg.feature_root.string();
    cfg.resolved["skip_reconstruction"] = cfg.skip_reconstruction;
    cfg.resolved["fusion"] = cfg.fusion_flag;
    cfg.resolved["train"] = {{"mil", cfg.train.mil.to_json()},
                             {"recon", cfg.train.recon.to_json()},
                             {"baseline", cfg.train.baseline.to_json()},
                             {"early", cfg.train.early.to_json()},
                             {"lw", cfg.train.lw.to_json()}};
    return cfg;
}

inline ExperimentConfig load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("config parse error: ") + e.what());
    }
    return load_config(j);
}

// One run per output directory.
class LockFile {
  public:
    explicit LockFile(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        if (fs::exists(path_))
            throw Error("output directory is locked by another run: " + path_.string());
        std::ofstream(path_, std::ios::binary) << "locked\n";
    }
    ~LockFile() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;

  private:
    fs::path path_;
};

struct Paths {
    fs::path out;
    fs::path cohort_dir() const { return out / "cohort"; }
    fs::path models() const { return out / "models"; }
    fs::path mil_model(Modality m) const {
        return models() / (std::string("mil_") + modality_name(m) + ".mmnn");
    }
    fs::path selections() const { return out / "selections.csv"; }
    fs::path recon_model() const { return models() / "recon.mmnn"; }
    fs::path baseline_model(Modality m) const {
        return models() / (std::string("baseline_") + modality_name(m) + ".mmnn");
    }
    fs::path late_weights() const { return models() / "late_fusion.json"; }
    fs::path early_model(fusion::CombineMode mode, bool with_recon) const {
        std::string name = std::string("early_") +
                           (mode == fusion::CombineMode::Mean ? "mean" : "concat");
        if (with_recon) name += "_recon";
        return models() / (name + ".mmnn");
    }
    fs::path report_json() const { return out / "report.json"; }
    fs::path report_txt() const { return out / "report.txt"; }
    fs::path run_json() const { return out / "run.json"; }
};

// --- individual stages -------------------------------------------------------

inline void cmd_synth(const ExperimentConfig& cfg) {
    if (cfg.synth.is_null()) throw InvalidConfig("synth stage requires a \"synth\" config block");
    const synth::SynthConfig sc = synth::config_from_json(cfg.synth);
    const auto gc = synth::generate(sc);
    synth::write_cohort(gc, sc, Paths{cfg.output_dir}.cohort_dir());
}

inline Cohort stage_encode(const ExperimentConfig& cfg) {
    Cohort cohort = load_cohort(cfg.manifest, cfg.feature_root);
    encode_cohort_clingen(cohort);
    return cohort;
}

inline std::map<Modality, mil::MilModel> stage_train_mil(const ExperimentConfig& cfg,
                                                         const Cohort& cohort) {
    const Paths paths{cfg.output_dir};
    fs::create_directories(paths.models());
    std::map<Modality, mil::MilModel> models;
    for (Modality m : kImagingModalities) {
        const fs::path path = paths.mil_model(m);
        if (fs::exists(path)) {
            const auto b = nn::load_bundle(path);
            models[m] = mil::MilModel{m, b.find("scorer")};
            continue;
        }
        nn::TrainConfig mc = mil::default_mil_config(m, cfg.train.mil.seed ^ uint64_t(int(m) + 1));
        const uint64_t seed = mc.seed;
        mc = cfg.train.mil;  // user overrides win ...
        mc.seed = seed;
        mc.oversample_factor = cfg.train.mil.oversample_factor > 1
                                   ? cfg.train.mil.oversample_factor
                                   : mil::default_mil_config(m, 0).oversample_factor;
        Rng rng(seed);
        mil::MilModel model = mil::make_mil_model(m, rng);
        mil::train_mil(model, cohort, mc);
        nn::ModelBundle b;
        b.models.emplace_back("scorer", model.scorer);
        b.meta = {{"modality", modality_name(m)}, {"train", mc.to_json()}};
        nn::save_bundle(path, b);
        models[m] = std::move(model);
    }
    return models;
}

inline mil::SelectionMap stage_select(const ExperimentConfig& cfg, const Cohort& cohort,
                                      const std::map<Modality, mil::MilModel>& models) {
    const Paths paths{cfg.output_dir};
    if (fs::exists(paths.selections())) return mil::read_selections(paths.selections(), cohort);
    std::map<Modality, const mil::MilModel*> ptrs;
    for (const auto& [m, model] : models) ptrs[m] = &model;
    const auto sel = mil::select_best(cohort, ptrs);
    write_selections(paths.selections(), sel);
    return sel;
}

inline recon::ReconModel stage_train_recon(const ExperimentConfig& cfg, const Cohort& cohort,
                                           const mil::SelectionMap& selections) {
    const Paths paths{cfg.output_dir};
    fs::create_directories(paths.models());
    if (fs::exists(paths.recon_model()))
        return recon::from_bundle(nn::load_bundle(paths.recon_model()));
    Rng rng(cfg.train.recon.seed);
    recon::ReconModel model = recon::make_recon_model(rng, cohort.modality_dims);
    const auto samples = recon::build_recon_samples(cohort, selections, Split::TRAIN);
    recon::train_recon(model, samples, cfg.train.recon);
    nn::save_bundle(paths.recon_model(),
                    recon::to_bundle(model, {{"train", cfg.train.recon.to_json()}}));
    return model;
}

struct FusionModels {
    std::array<std::optional<fusion::BaselineClassifier>, kNumModalities> baselines;
    std::array<double, kNumModalities> ws_weights{};
    std::array<double, kNumModalities> lw_theta{};
    std::optional<fusion::EarlyFusionModel> early_mean, early_concat;
    std::optional<fusion::EarlyFusionModel> early_mean_recon, early_concat_recon;
};

namespace detail {

inline std::vector<fusion::LateLwSample> late_samples(
    const Cohort& cohort, const mil::SelectionMap& selections,
    const std::array<std::optional<fusion::BaselineClassifier>, kNumModalities>& baselines) {
    std::vector<fusion::LateLwSample> out;
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TRAIN) continue;
        fusion::LateLwSample s;
        s.label = p.label_12mo;
        s.mask = modality_mask(p);
        for (Modality m : kAllModalities) {
            if (!s.mask[m]) continue;
            const FeatureVector* v = mil::selected_vector(p, m, selections);
            if (!v || !baselines[int(m)]) {
                s.mask.at(m) = false;
                continue;
            }
            s.probs[m] = fusion::baseline_prob(*baselines[int(m)], *v);
        }
        if (s.mask.count() > 0) out.push_back(std::move(s));
    }
    return out;
}

inline nn::ModelBundle early_to_bundle(const fusion::EarlyFusionModel& m, const json& meta) {
    nn::ModelBundle b;
    for (Modality mod : kAllModalities)
        b.models.emplace_back(std::string("proj_") + modality_name(mod),
                              m.projections[int(mod)]);
    b.models.emplace_back("head", m.head);
    b.meta = meta;
    return b;
}

inline fusion::EarlyFusionModel early_from_bundle(const nn::ModelBundle& b) {
    fusion::EarlyFusionModel m;
    for (Modality mod : kAllModalities)
        m.projections[int(mod)] = b.find(std::string("proj_") + modality_name(mod));
    m.head = b.find("head");
    const std::string mode = b.meta.value("mode", "mean");
    m.mode = mode == "concat" ? fusion::CombineMode::Concat : fusion::CombineMode::Mean;
    return m;
}

inline fusion::EarlyFusionModel train_or_load_early(const ExperimentConfig& cfg,
                                                    const Cohort& cohort,
                                                    const mil::SelectionMap& selections,
                                                    fusion::CombineMode mode,
                                                    const recon::ReconModel* recon_model) {
    const Paths paths{cfg.output_dir};
    const fs::path path = paths.early_model(mode, recon_model != nullptr);
    if (fs::exists(path)) return early_from_bundle(nn::load_bundle(path));
    nn::TrainConfig tc = cfg.train.early;
    tc.seed ^= fnv1a64(path.filename().string().c_str(), path.filename().string().size());
    Rng rng(tc.seed);
    fusion::EarlyFusionModel model = fusion::make_early_model(mode, rng, cohort.modality_dims);
    const auto samples =
        fusion::build_fusion_samples(cohort, selections, Split::TRAIN, recon_model);
    fusion::train_early(model, samples, tc);
    nn::save_bundle(path, early_to_bundle(model, {{"mode", mode == fusion::CombineMode::Concat
                                                               ? "concat"
                                                               : "mean"},
                                                  {"train", tc.to_json()}}));
    return model;
}

} // namespace detail

inline FusionModels stage_train_fusion(const ExperimentConfig& cfg, const Cohort& cohort,
                                       const mil::SelectionMap& selections,
                                       const recon::ReconModel* recon_model) {
    const Paths paths{cfg.output_dir};
    fs::create_directories(paths.models());
    FusionModels out;

    for (Modality m : kAllModalities) {
        const fs::path path = paths.baseline_model(m);
        if (fs::exists(path)) {
            const auto b = nn::load_bundle(path);
            fusion::BaselineClassifier bc;
            bc.modality = m;
            bc.head = b.find("head");
            bc.train_bacc = b.meta.value("train_bacc", 0.0);
            out.baselines[int(m)] = std::move(bc);
            continue;
        }
        nn::TrainConfig bc_cfg = cfg.train.baseline;
        bc_cfg.seed ^= uint64_t(int(m) + 101);
        try {
            auto bc = fusion::baseline_train(cohort, selections, m, bc_cfg);
            nn::ModelBundle b;
            b.models.emplace_back("head", bc.head);
            b.meta = {{"modality", modality_name(m)},
                      {"train_bacc", bc.train_bacc},
                      {"train", bc_cfg.to_json()}};
            nn::save_bundle(path, b);
            out.baselines[int(m)] = std::move(bc);
        } catch (const EmptyModality&) {
            // Modality absent from the training split; its report column
            // stays not-applicable.
        }
    }

    if (fs::exists(paths.late_weights())) {
        std::ifstream in(paths.late_weights());
        json j;
        in >> j;
        for (int i = 0; i < kNumModalities; ++i) {
            out.ws_weights[i] = j.at("ws_weights")[size_t(i)].get<double>();
            out.lw_theta[i] = j.at("lw_theta")[size_t(i)].get<double>();
        }
    } else {
        for (Modality m : kAllModalities)
            out.ws_weights[int(m)] =
                out.baselines[int(m)] ? out.baselines[int(m)]->train_bacc : 0.0;
        const auto lw_data = detail::late_samples(cohort, selections, out.baselines);
        out.lw_theta = fusion::train_lw(lw_data, cfg.train.lw);
        json j = {{"ws_weights", out.ws_weights}, {"lw_theta", out.lw_theta}};
        std::ofstream(paths.late_weights(), std::ios::binary) << j.dump(2) << "\n";
    }

    out.early_mean = detail::train_or_load_early(cfg, cohort, selections,
                                                 fusion::CombineMode::Mean, nullptr);
    out.early_concat = detail::train_or_load_early(cfg, cohort, selections,
                                                   fusion::CombineMode::Concat, nullptr);
    if (recon_model) {
        out.early_mean_recon = detail::train_or_load_early(
            cfg, cohort, selections, fusion::CombineMode::Mean, recon_model);
        out.early_concat_recon = detail::train_or_load_early(
            cfg, cohort, selections, fusion::CombineMode::Concat, recon_model);
    }
    return out;
}

// --- evaluation wiring -------------------------------------------------------

namespace detail {

inline std::map<Modality, double> late_probs(
    const PatientRecord& p, const mil::SelectionMap& selections, const ModalityMask& mask,
    const std::array<std::optional<fusion::BaselineClassifier>, kNumModalities>& baselines) {
    std::map<Modality, double> probs;
    for (Modality m : kAllModalities) {
        if (!mask[m] || !baselines[int(m)]) continue;
        const FeatureVector* v = mil::selected_vector(p, m, selections);
        if (v) probs[m] = fusion::baseline_prob(*baselines[int(m)], *v);
    }
    return probs;
}

} // namespace detail

inline eval::EvaluationReport build_report(const Cohort& cohort,
                                           const std::map<Modality, mil::MilModel>& mil_models,
                                           const mil::SelectionMap& selections,
                                           const FusionModels& fm,
                                           const recon::ReconModel* recon_model) {
    eval::EvaluationReport report;
    report.column_counts = eval::column_counts(cohort);

    // Row 1: bag-level MIL classification per imaging modality.
    std::array<eval::Predictor, kNumModalities> mil_preds;
    for (const auto& [m, model] : mil_models) {
        const mil::MilModel* mp = &model;
        const Modality mod = m;
        mil_preds[int(m)] = [mp, mod](const PatientRecord& p) -> std::optional<int> {
            const auto& bag = p.bag(mod);
            if (!bag) return std::nullopt;
            return mil::mil_forward(*mp, *bag).bag_prob > 0.5 ? 1 : 0;
        };
    }
    report.rows.push_back(eval::per_modality_row("MIL", cohort, mil_preds));

    // Row 2: per-modality baselines on the selected instances.
    std::array<eval::Predictor, kNumModalities> base_preds;
    for (Modality m : kAllModalities) {
        if (!fm.baselines[int(m)]) continue;
        const fusion::BaselineClassifier* bc = &*fm.baselines[int(m)];
        const Modality mod = m;
        base_preds[int(m)] = [bc, mod, &selections](const PatientRecord& p)
            -> std::optional<int> {
            const FeatureVector* v = mil::selected_vector(p, mod, selections);
            if (!v) return std::nullopt;
            return fusion::baseline_prob(*bc, *v) > 0.5 ? 1 : 0;
        };
    }
    report.rows.push_back(eval::per_modality_row("Baselines", cohort, base_preds));

    // Rows 3-4: late fusion.
    report.rows.push_back(eval::sliced_row(
        "Late Fusion WS", cohort, [&](const PatientRecord& p) -> std::optional<int> {
            const ModalityMask mask = modality_mask(p);
            const auto probs = detail::late_probs(p, selections, mask, fm.baselines);
            ModalityMask eff;
            for (Modality m : kAllModalities) eff.at(m) = probs.count(m) > 0;
            if (eff.count() == 0) return std::nullopt;
            return fusion::late_ws_predict(probs, fm.ws_weights, eff) > 0.5 ? 1 : 0;
        }));
    report.rows.push_back(eval::sliced_row(
        "Late Fusion LW", cohort, [&](const PatientRecord& p) -> std::optional<int> {
            const ModalityMask mask = modality_mask(p);
            const auto probs = detail::late_probs(p, selections, mask, fm.baselines);
            ModalityMask eff;
            for (Modality m : kAllModalities) eff.at(m) = probs.count(m) > 0;
            if (eff.count() == 0) return std::nullopt;
            return fusion::late_lw_predict(probs, fm.lw_theta, eff) > 0.5 ? 1 : 0;
        }));

    // Rows 5-8: early fusion, with and without reconstruction-completed inputs.
    const auto early_row = [&](const std::string& name, const fusion::EarlyFusionModel& model,
                               const recon::ReconModel* rm) {
        const auto samples = fusion::build_fusion_samples(cohort, selections, Split::TEST, rm);
        std::map<std::string, const fusion::FusionSample*> by_id;
        for (const auto& s : samples) by_id[s.patient_id] = &s;
        report.rows.push_back(eval::sliced_row(
            name, cohort, [&](const PatientRecord& p) -> std::optional<int> {
                const auto it = by_id.find(p.patient_id);
                if (it == by_id.end()) return std::nullopt;
                return fusion::predict_early(model, *it->second) > 0.5 ? 1 : 0;
            }));
    };
    if (fm.early_mean) early_row("Early Fusion Mean", *fm.early_mean, nullptr);
    if (fm.early_concat) early_row("Early Fusion Cat", *fm.early_concat, nullptr);
    if (recon_model && fm.early_mean_recon)
        early_row("Early Fusion Mean (W/ Reconstruction)", *fm.early_mean_recon, recon_model);
    if (recon_model && fm.early_concat_recon)
        early_row("Early Fusion Cat (W/ Reconstruction)", *fm.early_concat_recon, recon_model);
    return report;
}

inline void write_report(const ExperimentConfig& cfg, const eval::EvaluationReport& report) {
    const Paths paths{cfg.output_dir};
    std::ofstream(paths.report_json(), std::ios::binary) << eval::to_json(report);
    std::ofstream(paths.report_txt(), std::ios::binary) << eval::render_text(report);
}

inline void stage_project(const ExperimentConfig& cfg, const Cohort& cohort,
                          const mil::SelectionMap& selections,
                          const recon::ReconModel& recon_model) {
    const auto dump = eval::project_latents(recon_model, cohort, selections);
    for (Modality m : kAllModalities) {
        const std::string name = modality_name(m);
        const Paths paths{cfg.output_dir};
        eval::write_projection_csv((paths.out / ("projection_" + name + ".csv")).string(),
                                   dump[int(m)]);
        eval::write_latents((paths.out / ("latents_" + name + ".mmfv")).string(),
                            (paths.out / ("latents_" + name + "_provenance.csv")).string(),
                            dump[int(m)]);
    }
}

inline void write_run_manifest(const ExperimentConfig& cfg) {
    const Paths paths{cfg.output_dir};
    json run;
    run["tool_version"] = kToolVersion;
    run["seed"] = cfg.seed;
    run["config"] = cfg.resolved;
    json hashes = json::object();
    if (fs::exists(cfg.manifest)) hashes["manifest"] = hash_hex(hash_file(cfg.manifest.string()));
    const fs::path tabular = cfg.manifest.parent_path() / "tabular.csv";
    if (fs::exists(tabular)) hashes["tabular"] = hash_hex(hash_file(tabular.string()));
    const fs::path ledger = cfg.manifest.parent_path() / "ledger.json";
    if (fs::exists(ledger)) hashes["ledger"] = hash_hex(hash_file(ledger.string()));
    run["input_hashes"] = hashes;
    std::ofstream(paths.run_json(), std::ios::binary) << run.dump(2) << "\n";
}

// Error from a specific pipeline stage; the CLI maps stage_index to exit
// code 3 + stage_index.
struct StageError : Error {
    int stage_index;
    StageError(int idx, const std::string& stage, const std::string& what)
        : Error("stage " + stage + ": " + what), stage_index(idx) {}
};

// encode -> train-mil -> select -> train-recon -> train-fusion -> evaluate
// -> project. When the config has a synth block and no cohort exists yet,
// the cohort is generated first (stage 0).
inline eval::EvaluationReport run_pipeline(const ExperimentConfig& cfg) {
    LockFile lock(cfg.output_dir);
    int stage = 0;
    std::string stage_name;
    const auto enter = [&](int idx, const char* name) {
        stage = idx;
        stage_name = name;
    };
    try {
        enter(0, "synth");
        if (!cfg.synth.is_null() && !fs::exists(cfg.manifest)) cmd_synth(cfg);

        enter(1, "encode");
        Cohort cohort = stage_encode(cfg);

        enter(2, "train-mil");
        const auto mil_models = stage_train_mil(cfg, cohort);

        enter(3, "select");
        const auto selections = stage_select(cfg, cohort, mil_models);

        std::optional<recon::ReconModel> recon_model;
        enter(4, "train-recon");
        if (!cfg.skip_reconstruction)
            recon_model = stage_train_recon(cfg, cohort, selections);

        enter(5, "train-fusion");
        const auto fm = stage_train_fusion(cfg, cohort, selections,
                                           recon_model ? &*recon_model : nullptr);

        enter(6, "evaluate");
        auto report = build_report(cohort, mil_models, selections, fm,
                                   recon_model ? &*recon_model : nullptr);
        write_report(cfg, report);

        enter(7, "project");
        if (recon_model) stage_project(cfg, cohort, selections, *recon_model);

        write_run_manifest(cfg);
        return report;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, stage_name, e.what());
    }
}

} // namespace mmist::pipeline
