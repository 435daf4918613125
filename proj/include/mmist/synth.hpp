#pragma once

// Synthetic cohort generator and its closed-form Bayes oracle.
//
// Generative model, per patient:
//   y  ~ Bernoulli(class_prior)                (1 = survived)
//   z  ~ Normal(y * delta, I_k)                (one latent state per patient)
//   x_m = A_m z + noise_sigma_m * Normal(0,I)  (fresh noise per instance)
//
// All instances of a patient share z. Modality presence is drawn from the
// configured missing rates (WSI and CLINGEN are never missing). Because the
// model is linear-Gaussian, the survival posterior for any availability mask
// is a logistic function of a linear score, which gives an exact accuracy
// ceiling for every mask.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmist/cohort_io.hpp"
#include "mmist/errors.hpp"
#include "mmist/hash.hpp"
#include "mmist/metrics.hpp"
#include "mmist/rng.hpp"
#include "mmist/tabular.hpp"
#include "mmist/types.hpp"

namespace mmist::synth {

struct SynthConfig {
    size_t n_patients = 618;
    size_t latent_dim = 8;
    double class_prior = 0.88;  // P(survived)
    Eigen::VectorXd delta;      // class mean shift in latent space

    std::array<Eigen::MatrixXd, kNumModalities> loadings;  // D_m x k
    std::array<double, kNumModalities> noise_sigma{1.0, 1.0, 1.0, 1.0};
    std::array<double, kNumModalities> missing_rate{0.60, 0.92, 0.0, 0.0};

    double genomics_rate = 0.74;  // drives tabular.csv emission only
    int bag_min = 1;
    int bag_max = 3;
    double test_fraction = 0.2;
    uint64_t seed = 0;

    nlohmann::ordered_json echo;  // the JSON this config was built from

    void validate() const {
        if (n_patients == 0 || latent_dim == 0) throw InvalidConfig("empty cohort or latent");
        if (!(class_prior > 0.0 && class_prior < 1.0))
            throw InvalidConfig("class_prior must be in (0,1)");
        if (size_t(delta.size()) != latent_dim) throw InvalidConfig("delta dim != latent_dim");
        for (Modality m : kAllModalities) {
            const int i = int(m);
            if (missing_rate[i] < 0.0 || missing_rate[i] > 1.0)
                throw InvalidConfig("missing rate out of [0,1]");
            if (noise_sigma[i] < 0.0) throw InvalidConfig("negative noise sigma");
            if (size_t(loadings[i].rows()) != kModalityDims[i] ||
                size_t(loadings[i].cols()) != latent_dim)
                throw InvalidConfig(std::string("loading matrix shape mismatch for ") +
                                    modality_name(m));
        }
        if (missing_rate[int(Modality::WSI)] != 0.0 ||
            missing_rate[int(Modality::CLINGEN)] != 0.0)
            throw InvalidConfig("WSI and CLINGEN must never be missing");
        if (bag_min < 1 || bag_max < bag_min) throw InvalidConfig("bad bag size range");
        if (!(genomics_rate >= 0.0 && genomics_rate <= 1.0))
            throw InvalidConfig("genomics_rate out of [0,1]");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw InvalidConfig("test_fraction out of (0,1)");
    }
};

// Loading matrix with orthonormal columns scaled per latent coordinate,
// derived deterministically from the loading seed.
inline Eigen::MatrixXd make_loading(size_t dim, const std::vector<double>& scales,
                                    uint64_t loading_seed, int modality_index) {
    Rng rng(loading_seed ^ (0xA5A5A5A5ULL * uint64_t(modality_index + 1)));
    const auto k = Eigen::Index(scales.size());
    Eigen::MatrixXd g(Eigen::Index(dim), k);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < k; ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), k);
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::Index imax = 0;
        q.col(c).cwiseAbs().maxCoeff(&imax);
        if (q(imax, c) < 0) q.col(c) = -q.col(c);
        q.col(c) *= scales[size_t(c)];
    }
    return q;
}

// Builds a config from its JSON form (the schema of configs/default.json).
inline SynthConfig config_from_json(const nlohmann::ordered_json& j) {
    SynthConfig cfg;
    cfg.echo = j;
    try {
        cfg.n_patients = j.at("n_patients").get<size_t>();
        cfg.latent_dim = j.at("latent_dim").get<size_t>();
        cfg.class_prior = j.at("class_prior").get<double>();
        const auto delta_v = j.at("delta").get<std::vector<double>>();
        cfg.delta = Eigen::Map<const Eigen::VectorXd>(delta_v.data(), Eigen::Index(delta_v.size()));
        cfg.seed = j.at("seed").get<uint64_t>();
        const uint64_t loading_seed = j.value("loading_seed", uint64_t(0xBEEF));
        for (Modality m : kAllModalities) {
            const auto& mj = j.at("modalities").at(modality_name(m));
            const int i = int(m);
            cfg.noise_sigma[i] = mj.at("noise_sigma").get<double>();
            cfg.missing_rate[i] = mj.at("missing_rate").get<double>();
            const auto scales = mj.at("scales").get<std::vector<double>>();
            if (scales.size() != cfg.latent_dim)
                throw InvalidConfig(std::string("scales length != latent_dim for ") +
                                    modality_name(m));
            cfg.loadings[i] = make_loading(kModalityDims[i], scales, loading_seed, i);
        }
        const auto bag = j.at("bag_size").get<std::vector<int>>();
        if (bag.size() != 2) throw InvalidConfig("bag_size must be [min,max]");
        cfg.bag_min = bag[0];
        cfg.bag_max = bag[1];
        cfg.genomics_rate = j.value("genomics_rate", 0.74);
        cfg.test_fraction = j.value("test_fraction", 0.2);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("bad synth config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// Hidden ground truth kept alongside the emitted cohort; absent modalities
// carry one sampled instance so reconstruction quality can be scored.
struct GeneratedPatient {
    int y = 1;
    Eigen::VectorXd z;
    ModalityMask mask;
    std::array<std::vector<FeatureVector>, kNumModalities> true_instances;
};

struct GeneratedCohort {
    Cohort cohort;
    std::vector<GeneratedPatient> truth;  // parallel to cohort.patients
};

inline GeneratedCohort generate(const SynthConfig& cfg) {
    cfg.validate();
    const Rng root(cfg.seed);

    GeneratedCohort out;
    out.cohort.modality_dims = kModalityDims;

    std::vector<int> labels;

    for (size_t pi = 0; pi < cfg.n_patients; ++pi) {
        Rng rng = root.substream(pi);

        GeneratedPatient gp;
        gp.y = rng.bernoulli(cfg.class_prior) ? 1 : 0;
        gp.z = Eigen::VectorXd(Eigen::Index(cfg.latent_dim));
        for (Eigen::Index i = 0; i < gp.z.size(); ++i)
            gp.z(i) = rng.normal() + (gp.y == 1 ? cfg.delta(i) : 0.0);

        PatientRecord p;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "P%05zu", pi);
        p.patient_id = buf;
        p.label_12mo = gp.y;
        labels.push_back(gp.y);

        for (Modality m : kAllModalities) {
            const int mi = int(m);
            const bool present = !rng.bernoulli(cfg.missing_rate[mi]);
            gp.mask.at(m) = present;
            const bool imaging = m != Modality::CLINGEN;
            const int bag_size =
                present ? (imaging ? cfg.bag_min + int(rng.below(uint64_t(cfg.bag_max - cfg.bag_min + 1)))
                                   : 1)
                        : 1;  // one hidden instance for absent modalities

            const Eigen::VectorXd mean = cfg.loadings[mi] * gp.z;
            for (int b = 0; b < bag_size; ++b) {
                FeatureVector v(kModalityDims[mi]);
                for (size_t i = 0; i < v.size(); ++i)
                    v[i] = float(mean(Eigen::Index(i)) + cfg.noise_sigma[mi] * rng.normal());
                gp.true_instances[mi].push_back(std::move(v));
            }
            if (present) {
                FeatureBag bag;
                bag.modality = m;
                for (int b = 0; b < bag_size; ++b) {
                    bag.instances.push_back(gp.true_instances[mi][size_t(b)]);
                    bag.instance_ids.push_back(std::string(modality_name(m)) + "_" +
                                               std::to_string(b));
                }
                p.bag(m) = std::move(bag);
            }
        }

        // Tabular fields exercise the real-data encode path; they carry no
        // class signal, the synthetic CLINGEN vector does.
        const bool has_genomics = rng.bernoulli(cfg.genomics_rate);
        for (const auto& v : tabular::schema()) {
            if (tabular::is_gene(v.name)) {
                if (has_genomics) {
                    if (!p.genomics_raw) p.genomics_raw.emplace();
                    (*p.genomics_raw)[v.name] = v.levels[rng.below(v.levels.size())];
                }
            } else {
                p.clinical_raw[v.name] = v.levels[rng.below(v.levels.size())];
            }
        }

        out.cohort.patients.push_back(std::move(p));
        out.truth.push_back(std::move(gp));
    }

    const auto is_test =
        stratified_test_assignment(labels, cfg.test_fraction, root.substream(cfg.n_patients).next_u64());
    for (size_t i = 0; i < cfg.n_patients; ++i)
        out.cohort.patients[i].split = is_test[i] ? Split::TEST : Split::TRAIN;

    return out;
}

// Writes manifest.csv, tabular.csv, feature files, and ledger.json under dir.
inline nlohmann::ordered_json write_cohort(const GeneratedCohort& gc, const SynthConfig& cfg,
                                           const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "features");

    std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
    manifest << kManifestHeader << "\n";
    std::ofstream tab(dir / "tabular.csv", std::ios::binary);
    tab << kTabularHeader << "\n";

    std::vector<std::string> feature_files;
    for (const auto& p : gc.cohort.patients) {
        for (Modality m : kAllModalities) {
            const auto& bag = p.bag(m);
            if (!bag) continue;
            for (size_t b = 0; b < bag->instances.size(); ++b) {
                const std::string rel = "features/" + p.patient_id + "_" +
                                        bag->instance_ids[b] + ".mmfv";
                write_feature_file(dir / rel, bag->instances[b]);
                feature_files.push_back(rel);
                manifest << p.patient_id << ',' << split_name(p.split) << ',' << p.label_12mo
                         << ',' << modality_name(m) << ',' << bag->instance_ids[b] << ',' << rel
                         << "\n";
            }
        }
        for (const auto& v : tabular::schema()) {
            if (tabular::is_gene(v.name)) {
                if (p.genomics_raw && p.genomics_raw->count(v.name))
                    tab << p.patient_id << ',' << v.name << ',' << p.genomics_raw->at(v.name)
                        << "\n";
            } else {
                tab << p.patient_id << ',' << v.name << ',' << p.clinical_raw.at(v.name) << "\n";
            }
        }
    }
    manifest.close();
    tab.close();

    // Ledger: generator bookkeeping + content hashes of everything emitted.
    const CohortSummary s = cohort_summary(gc.cohort);
    const auto row_json = [](const CohortSummary::Row& r) {
        nlohmann::ordered_json j;
        j["patients"] = r.patients;
        for (Modality m : kAllModalities) j[modality_label(m)] = r.with_modality[int(m)];
        j["Genomics"] = r.with_genomics;
        j["survived"] = r.survived;
        return j;
    };
    nlohmann::ordered_json ledger;
    ledger["config"] = cfg.echo.is_null() ? nlohmann::ordered_json{{"seed", cfg.seed}} : cfg.echo;
    ledger["counts"] = {{"train", row_json(s.train)}, {"test", row_json(s.test)},
                        {"total", row_json(s.total)}};
    nlohmann::ordered_json files;
    uint64_t combined = 0xcbf29ce484222325ULL;
    for (const char* name : {"manifest.csv", "tabular.csv"}) {
        const uint64_t h = hash_file(dir / name);
        files[name] = hash_hex(h);
        combined = fnv1a64(&h, sizeof(h), combined);
    }
    for (const auto& rel : feature_files) {
        const uint64_t h = hash_file(dir / rel);
        files[rel] = hash_hex(h);
        combined = fnv1a64(&h, sizeof(h), combined);
    }
    ledger["files"] = std::move(files);
    ledger["combined_hash"] = hash_hex(combined);

    std::ofstream lf(dir / "ledger.json", std::ios::binary);
    lf << ledger.dump(2) << "\n";
    return ledger;
}

// ---------------------------------------------------------------------------
// Bayes oracle.
//
// For a mask S with per-modality bag sizes n_m, the stacked observation
// x = A z + e has covariance Sigma = A A^T + N with N diagonal
// (sigma_m^2 / n_m per row, bag means). The survival log-odds are
//   score(x) = logit(pi) - 0.5 d^T A^T Sigma^-1 A d + x^T Sigma^-1 A d
// computed through the Woodbury identity so everything stays k-dimensional.

struct BayesRule {
    std::array<Eigen::VectorXd, kNumModalities> w;  // per-modality weight block
    double bias = 0.0;
    // score distribution given z:  score = bias + a.z + Normal(0, noise_sd)
    Eigen::VectorXd a;
    double noise_sd = 0.0;
};

inline BayesRule bayes_rule(const SynthConfig& cfg, const ModalityMask& mask,
                            const std::array<int, kNumModalities>& bag_counts = {1, 1, 1, 1}) {
    if (mask.count() == 0) throw InvalidConfig("bayes_rule: empty mask");
    const auto k = Eigen::Index(cfg.latent_dim);

    // Accumulate A^T N^-1 A and keep per-modality pieces.
    Eigen::MatrixXd atna = Eigen::MatrixXd::Zero(k, k);
    for (Modality m : kAllModalities) {
        const int i = int(m);
        if (!mask[m]) continue;
        const double var = cfg.noise_sigma[i] * cfg.noise_sigma[i] / double(bag_counts[i]);
        if (var <= 0.0)
            throw SingularCovariance(std::string("zero noise variance for ") + modality_name(m));
        atna.noalias() += cfg.loadings[i].transpose() * cfg.loadings[i] / var;
    }

    const Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(k, k) + atna;
    const Eigen::LLT<Eigen::MatrixXd> llt(inner);
    if (llt.info() != Eigen::Success) throw SingularCovariance("latent normal matrix not SPD");

    // w = Sigma^-1 A delta = N^-1 A (delta - inner^-1 atna delta)
    const Eigen::VectorXd reduced = cfg.delta - llt.solve(atna * cfg.delta);

    BayesRule rule;
    rule.a = Eigen::VectorXd::Zero(k);
    double noise_var = 0.0;
    double half_quad = 0.0;  // delta^T A^T Sigma^-1 A delta
    for (Modality m : kAllModalities) {
        const int i = int(m);
        if (!mask[m]) continue;
        const double var = cfg.noise_sigma[i] * cfg.noise_sigma[i] / double(bag_counts[i]);
        rule.w[i] = cfg.loadings[i] * reduced / var;
        rule.a.noalias() += cfg.loadings[i].transpose() * rule.w[i];
        noise_var += rule.w[i].squaredNorm() * var;
    }
    half_quad = rule.a.dot(cfg.delta);
    rule.noise_sd = std::sqrt(noise_var);
    rule.bias = std::log(cfg.class_prior / (1.0 - cfg.class_prior)) - 0.5 * half_quad;
    return rule;
}

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Exact survival posterior for one patient's observed (bag-mean) vectors.
inline double bayes_posterior(const std::map<Modality, FeatureVector>& observed,
                              const ModalityMask& mask, const SynthConfig& cfg,
                              const std::array<int, kNumModalities>& bag_counts = {1, 1, 1, 1}) {
    for (Modality m : kAllModalities) {
        const bool have = observed.count(m) > 0;
        if (have != mask[m])
            throw MaskMismatch(std::string("observed/mask disagree on ") + modality_name(m));
    }
    const BayesRule rule = bayes_rule(cfg, mask, bag_counts);
    double score = rule.bias;
    for (const auto& [m, v] : observed) {
        const auto& w = rule.w[int(m)];
        if (Eigen::Index(v.size()) != w.size())
            throw DimMismatch(std::string("bad dim for ") + modality_name(m));
        for (Eigen::Index i = 0; i < w.size(); ++i) score += w(i) * double(v[size_t(i)]);
    }
    return sigmoid(score);
}

// BAcc of thresholding the Bayes score, with the threshold chosen to
// maximize BAcc on an independent Monte-Carlo sample of the same size.
// Score sampling uses score = bias + a.z + noise, which is the exact
// distribution of the full-vector score.
inline double oracle_bacc(const SynthConfig& cfg, const ModalityMask& mask, size_t n_mc,
                          uint64_t seed) {
    std::map<std::array<int, kNumModalities>, BayesRule> rules;
    Rng rng(seed);

    const auto draw_scores = [&](std::vector<double>& scores, std::vector<int>& ys) {
        scores.resize(n_mc);
        ys.resize(n_mc);
        for (size_t s = 0; s < n_mc; ++s) {
            std::array<int, kNumModalities> counts = {1, 1, 1, 1};
            for (Modality m : kImagingModalities)
                if (mask[m])
                    counts[int(m)] =
                        cfg.bag_min + int(rng.below(uint64_t(cfg.bag_max - cfg.bag_min + 1)));
            auto it = rules.find(counts);
            if (it == rules.end()) it = rules.emplace(counts, bayes_rule(cfg, mask, counts)).first;
            const BayesRule& rule = it->second;

            const int y = rng.bernoulli(cfg.class_prior) ? 1 : 0;
            double score = rule.bias;
            for (Eigen::Index i = 0; i < rule.a.size(); ++i)
                score += rule.a(i) * (rng.normal() + (y == 1 ? cfg.delta(i) : 0.0));
            score += rule.noise_sd * rng.normal();
            scores[s] = score;
            ys[s] = y;
        }
    };

    std::vector<double> tune_scores, eval_scores;
    std::vector<int> tune_y, eval_y;
    draw_scores(tune_scores, tune_y);
    draw_scores(eval_scores, eval_y);

    // Sweep candidate thresholds over the tuning sample.
    std::vector<size_t> order(n_mc);
    for (size_t i = 0; i < n_mc; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return tune_scores[a] < tune_scores[b]; });
    double n1 = 0, n0 = 0;
    for (int y : tune_y) (y == 1 ? n1 : n0) += 1;
    // Predict 1 for score > t. Start with t = -inf: all predicted 1.
    double tp = n1, tn = 0;
    double best_bacc = 0.5 * (tp / n1 + tn / n0);
    double best_t = tune_scores[order[0]] - 1.0;
    for (size_t i = 0; i < n_mc; ++i) {
        if (tune_y[order[i]] == 1) tp -= 1;
        else tn += 1;
        const double bacc = 0.5 * (tp / n1 + tn / n0);
        if (bacc > best_bacc) {
            best_bacc = bacc;
            best_t = tune_scores[order[i]];
        }
    }

    std::vector<int> preds(n_mc), labels(n_mc);
    for (size_t i = 0; i < n_mc; ++i) {
        preds[i] = eval_scores[i] > best_t ? 1 : 0;
        labels[i] = eval_y[i];
    }
    return balanced_accuracy(preds, labels);
}

// Closed-form ceiling for fixed bag counts: with score | y Gaussian with
// shared variance, the best-threshold BAcc is Phi(separation / 2).
inline double closed_form_bacc(const SynthConfig& cfg, const ModalityMask& mask,
                               const std::array<int, kNumModalities>& bag_counts = {1, 1, 1, 1}) {
    const BayesRule rule = bayes_rule(cfg, mask, bag_counts);
    const double var = rule.a.squaredNorm() + rule.noise_sd * rule.noise_sd;
    if (var <= 0.0) return 0.5;
    const double sep = rule.a.dot(cfg.delta) / std::sqrt(var);
    return 0.5 * std::erfc(-sep / 2.0 / std::numbers::sqrt2);
}

struct OracleReport {
    double bayes_bacc = 0.5;
};

inline ModalityMask mask_of(std::initializer_list<Modality> mods) {
    ModalityMask mk;
    for (Modality m : mods) mk.at(m) = true;
    return mk;
}

} // namespace mmist::synth
