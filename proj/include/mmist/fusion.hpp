#pragma once

// Per-modality baseline classifiers and the four fusion strategies:
// late weighted-sum (weights = each baseline's train BAcc), late learned
// weights (masked softmax), and early fusion via masked mean or zero-filled
// concatenation of common-dimension projections.

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmist/cohort_io.hpp"
#include "mmist/errors.hpp"
#include "mmist/metrics.hpp"
#include "mmist/mil.hpp"
#include "mmist/nn.hpp"
#include "mmist/recon.hpp"
#include "mmist/types.hpp"

namespace mmist::fusion {

inline constexpr size_t kProjectionDim = 128;

inline nn::TrainConfig default_fusion_config(uint64_t seed) {
    nn::TrainConfig cfg;
    cfg.oversample_factor = 6;
    cfg.noise_sigma = 0.01;
    cfg.seed = seed;
    return cfg;
}

inline std::vector<size_t> baseline_hidden(Modality m) {
    return m == Modality::WSI ? std::vector<size_t>{512, 256, 128}
                              : std::vector<size_t>{256, 128};
}

struct BaselineClassifier {
    Modality modality = Modality::CT;
    nn::ModelF head;  // sigmoid output, dim 1
    double train_bacc = 0.0;
};

inline double baseline_prob(const BaselineClassifier& b, const FeatureVector& x) {
    return double(b.head.forward(x)[0]);
}

// Trains on the single MIL-selected instance per train patient having the
// modality; the recorded train BAcc becomes the weighted-sum weight.
inline BaselineClassifier baseline_train(const Cohort& cohort, const mil::SelectionMap& selections,
                                         Modality modality, const nn::TrainConfig& cfg) {
    std::vector<nn::Sample> dataset;
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TRAIN) continue;
        const FeatureVector* v = mil::selected_vector(p, modality, selections);
        if (!v) continue;
        dataset.push_back({*v, {float(p.label_12mo)}, p.label_12mo});
    }
    if (dataset.empty())
        throw EmptyModality(std::string("no training samples for ") + modality_name(modality));

    Rng rng(cfg.seed ^ (0x1234567ULL * (uint64_t(modality) + 1)));
    BaselineClassifier b;
    b.modality = modality;
    b.head = nn::make_mlp(kModalityDims[int(modality)], baseline_hidden(modality), 1,
                          nn::Activation::Sigmoid, rng);
    nn::train(b.head, dataset, nn::LossKind::WeightedBce, cfg);

    std::vector<int> preds, labels;
    for (const auto& s : dataset) {
        preds.push_back(double(b.head.forward(s.x)[0]) > 0.5 ? 1 : 0);
        labels.push_back(s.label);
    }
    b.train_bacc = balanced_accuracy(preds, labels);
    return b;
}

// Eq-style weighted sum over present modalities.
inline double late_ws_predict(const std::map<Modality, double>& probs,
                              const std::array<double, kNumModalities>& weights,
                              const ModalityMask& mask) {
    double num = 0.0, den = 0.0;
    for (Modality m : kAllModalities) {
        if (!mask[m]) continue;
        const auto it = probs.find(m);
        if (it == probs.end())
            throw MaskMismatch(std::string("no probability for present ") + modality_name(m));
        num += weights[int(m)] * it->second;
        den += weights[int(m)];
    }
    if (den == 0.0) throw AllMasked("weighted sum denominator is zero");
    return num / den;
}

// Softmax of theta restricted to present modalities, then the weighted sum.
inline double late_lw_predict(const std::map<Modality, double>& probs,
                              const std::array<double, kNumModalities>& theta,
                              const ModalityMask& mask) {
    if (mask.count() == 0) throw AllMasked("all modalities masked");
    double zmax = -std::numeric_limits<double>::infinity();
    for (Modality m : kAllModalities)
        if (mask[m]) zmax = std::max(zmax, theta[int(m)]);
    double den = 0.0, num = 0.0;
    for (Modality m : kAllModalities) {
        if (!mask[m]) continue;
        const auto it = probs.find(m);
        if (it == probs.end())
            throw MaskMismatch(std::string("no probability for present ") + modality_name(m));
        const double e = std::exp(theta[int(m)] - zmax);
        den += e;
        num += e * it->second;
    }
    return num / den;
}

struct LateLwSample {
    std::map<Modality, double> probs;
    ModalityMask mask;
    int label = 0;
};

// Full-batch gradient descent on the four weight logits.
inline std::array<double, kNumModalities> train_lw(const std::vector<LateLwSample>& samples,
                                                   const nn::TrainConfig& cfg) {
    if (samples.empty()) throw EmptyCohort("train_lw: no samples");
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    const auto [w0, w1] = nn::detail::resolve_class_weights(labels, cfg);

    std::array<double, kNumModalities> theta{};
    std::array<double, kNumModalities> m_adam{}, v_adam{};
    for (int step = 1; step <= cfg.epochs * 4; ++step) {
        std::array<double, kNumModalities> grad{};
        for (const auto& s : samples) {
            // Recompute softmax pieces for the gradient.
            double zmax = -std::numeric_limits<double>::infinity();
            for (Modality m : kAllModalities)
                if (s.mask[m]) zmax = std::max(zmax, theta[int(m)]);
            double den = 0.0;
            std::array<double, kNumModalities> e{};
            for (Modality m : kAllModalities)
                if (s.mask[m]) den += e[int(m)] = std::exp(theta[int(m)] - zmax);
            double p = 0.0;
            for (Modality m : kAllModalities)
                if (s.mask[m]) p += (e[int(m)] / den) * s.probs.at(m);
            const double g = nn::weighted_bce_grad(p, s.label, w0, w1) / double(samples.size());
            for (Modality m : kAllModalities)
                if (s.mask[m])
                    grad[int(m)] += g * (e[int(m)] / den) * (s.probs.at(m) - p);
        }
        for (int i = 0; i < kNumModalities; ++i) {
            m_adam[i] = 0.9 * m_adam[i] + 0.1 * grad[i];
            v_adam[i] = 0.999 * v_adam[i] + 0.001 * grad[i] * grad[i];
            const double mh = m_adam[i] / (1.0 - std::pow(0.9, step));
            const double vh = v_adam[i] / (1.0 - std::pow(0.999, step));
            theta[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    return theta;
}

enum class CombineMode { Mean, Concat };

struct EarlyFusionModel {
    std::array<nn::ModelF, kNumModalities> projections;  // dim_m -> d, relu
    CombineMode mode = CombineMode::Mean;
    nn::ModelF head;  // sigmoid output, dim 1
};

inline EarlyFusionModel make_early_model(CombineMode mode, Rng& rng,
                                         const std::array<size_t, kNumModalities>& dims =
                                             kModalityDims) {
    EarlyFusionModel m;
    m.mode = mode;
    for (Modality mod : kAllModalities)
        m.projections[int(mod)] =
            nn::make_mlp(dims[int(mod)], {}, kProjectionDim, nn::Activation::Relu, rng);
    const size_t head_in =
        mode == CombineMode::Concat ? kNumModalities * kProjectionDim : kProjectionDim;
    m.head = nn::make_mlp(head_in, {128}, 1, nn::Activation::Sigmoid, rng);
    return m;
}

// mean: elementwise mean over present modalities; concat: fixed-order
// concatenation with zero blocks in absent slots.
inline FeatureVector early_combine(const std::array<const FeatureVector*, kNumModalities>& projected,
                                   const ModalityMask& mask, CombineMode mode) {
    size_t d = 0;
    for (Modality m : kAllModalities)
        if (mask[m] && projected[int(m)]) d = projected[int(m)]->size();
    if (mode == CombineMode::Mean) {
        if (mask.count() == 0) throw AllMasked("masked mean over no modalities");
        FeatureVector out(d, 0.0f);
        int n = 0;
        for (Modality m : kAllModalities) {
            if (!mask[m]) continue;
            const auto* v = projected[int(m)];
            if (!v || v->size() != d) throw DimMismatch("early_combine: projection dim mismatch");
            for (size_t i = 0; i < d; ++i) out[i] += (*v)[i];
            ++n;
        }
        for (auto& x : out) x /= float(n);
        return out;
    }
    FeatureVector out(kNumModalities * d, 0.0f);
    for (Modality m : kAllModalities) {
        if (!mask[m]) continue;
        const auto* v = projected[int(m)];
        if (!v || v->size() != d) throw DimMismatch("early_combine: projection dim mismatch");
        for (size_t i = 0; i < d; ++i) out[size_t(int(m)) * d + i] = (*v)[i];
    }
    return out;
}

struct FusionSample {
    std::array<FeatureVector, kNumModalities> slots;  // zeros where absent
    ModalityMask mask;
    int label = 0;
    std::string patient_id;
};

inline std::vector<FusionSample> build_fusion_samples(const Cohort& cohort,
                                                      const mil::SelectionMap& selections,
                                                      Split split,
                                                      const recon::ReconModel* recon_model) {
    std::vector<FusionSample> out;
    for (const auto& p : cohort.patients) {
        if (p.split != split) continue;
        FusionSample s;
        s.patient_id = p.patient_id;
        s.label = p.label_12mo;
        s.mask = modality_mask(p);
        std::array<const FeatureVector*, kNumModalities> feats{};
        for (Modality m : kAllModalities)
            if (s.mask[m]) feats[int(m)] = mil::selected_vector(p, m, selections);
        auto block = recon::assemble_input(feats, s.mask, cohort.modality_dims);
        if (recon_model) {
            s.slots = recon::impute(*recon_model, block);
            s.mask = ModalityMask::all_present();
        } else {
            s.slots = std::move(block.slots);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline double predict_early(const EarlyFusionModel& model, const FusionSample& s) {
    std::array<FeatureVector, kNumModalities> proj;
    std::array<const FeatureVector*, kNumModalities> proj_ptr{};
    for (Modality m : kAllModalities) {
        const int i = int(m);
        if (!s.mask[m]) continue;
        proj[i] = model.projections[i].forward(s.slots[i]);
        proj_ptr[i] = &proj[i];
    }
    const FeatureVector combined = early_combine(proj_ptr, s.mask, model.mode);
    return double(model.head.forward(combined)[0]);
}

struct EarlyTrainResult {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int epochs_run = 0;
};

// End-to-end training of projections + head with weighted BCE. Gaussian
// noise goes on present input slots only.
inline EarlyTrainResult train_early(EarlyFusionModel& model,
                                    const std::vector<FusionSample>& samples,
                                    const nn::TrainConfig& cfg) {
    using Matrix = Eigen::MatrixXf;
    if (samples.empty()) throw EmptyCohort("train_early: no samples");

    Rng rng(cfg.seed);

    std::vector<size_t> train_idx, val_idx;
    {
        std::vector<int> labels;
        for (const auto& s : samples) labels.push_back(s.label);
        size_t counts[2] = {0, 0};
        for (int l : labels) counts[l]++;
        bool carved = false;
        if (cfg.val_fraction > 0 && cfg.patience > 0 && samples.size() >= 10 && counts[0] >= 4 &&
            counts[1] >= 4) {
            const auto is_val = stratified_test_assignment(labels, cfg.val_fraction, rng.next_u64());
            for (size_t i = 0; i < samples.size(); ++i)
                (is_val[i] ? val_idx : train_idx).push_back(i);
            carved = !val_idx.empty() && !train_idx.empty();
        }
        if (!carved) {
            train_idx.clear();
            val_idx.clear();
            for (size_t i = 0; i < samples.size(); ++i) train_idx.push_back(i);
        }
    }

    std::vector<int> train_labels;
    for (size_t i : train_idx) train_labels.push_back(samples[i].label);
    const auto [w0, w1] = nn::detail::resolve_class_weights(train_labels, cfg);
    const auto epoch_base = nn::detail::oversampled_indices(train_labels, cfg.oversample_factor);

    std::array<nn::detail::OptimState<float>, kNumModalities> proj_state{
        nn::detail::OptimState<float>(model.projections[0]),
        nn::detail::OptimState<float>(model.projections[1]),
        nn::detail::OptimState<float>(model.projections[2]),
        nn::detail::OptimState<float>(model.projections[3])};
    nn::detail::OptimState<float> head_state(model.head);

    const size_t d = kProjectionDim;
    const bool concat = model.mode == CombineMode::Concat;

    const auto batch_pass = [&](const std::vector<size_t>& idx, bool with_noise, bool update) {
        const Eigen::Index n = Eigen::Index(idx.size());
        std::array<Matrix, kNumModalities> slots;
        std::array<std::vector<Matrix>, kNumModalities> proj_acts;
        Matrix combined = Matrix::Zero(Eigen::Index(concat ? kNumModalities * d : d), n);
        std::vector<int> n_present(size_t(n), 0);
        for (Eigen::Index j = 0; j < n; ++j)
            n_present[size_t(j)] = samples[idx[size_t(j)]].mask.count();

        for (Modality m : kAllModalities) {
            const int mi = int(m);
            const auto dim = model.projections[mi].input_dim();
            slots[mi] = Matrix::Zero(dim, n);
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& s = samples[idx[size_t(j)]];
                if (!s.mask[Modality(mi)]) continue;
                for (Eigen::Index i = 0; i < dim; ++i) {
                    double v = double(s.slots[mi][size_t(i)]);
                    if (with_noise && cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
                    slots[mi](i, j) = float(v);
                }
            }
            proj_acts[mi] = nn::detail::forward_cached(model.projections[mi], slots[mi]);
            const Matrix& pm = proj_acts[mi].back();
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& s = samples[idx[size_t(j)]];
                if (!s.mask[Modality(mi)]) continue;
                if (concat)
                    combined.block(Eigen::Index(size_t(mi) * d), j, Eigen::Index(d), 1) = pm.col(j);
                else
                    combined.col(j) += pm.col(j) / float(n_present[size_t(j)]);
            }
        }

        const auto head_acts = nn::detail::forward_cached(model.head, combined);
        const Matrix& probs = head_acts.back();
        double loss = 0.0;
        Matrix dprob(1, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const int y = samples[idx[size_t(j)]].label;
            loss += nn::weighted_bce(double(probs(0, j)), y, w0, w1);
            dprob(0, j) = float(nn::weighted_bce_grad(double(probs(0, j)), y, w0, w1) / double(n));
        }
        loss /= double(n);

        if (update) {
            const Matrix dcombined =
                nn::detail::backprop(model.head, combined, head_acts, dprob, head_state);
            for (Modality m : kAllModalities) {
                const int mi = int(m);
                Matrix dproj = Matrix::Zero(Eigen::Index(d), n);
                for (Eigen::Index j = 0; j < n; ++j) {
                    const auto& s = samples[idx[size_t(j)]];
                    if (!s.mask[Modality(mi)]) continue;
                    if (concat)
                        dproj.col(j) =
                            dcombined.block(Eigen::Index(size_t(mi) * d), j, Eigen::Index(d), 1);
                    else
                        dproj.col(j) = dcombined.col(j) / float(n_present[size_t(j)]);
                }
                nn::detail::backprop(model.projections[mi], slots[mi], proj_acts[mi], dproj,
                                     proj_state[mi]);
            }
            for (Modality m : kAllModalities)
                proj_state[int(m)].apply(model.projections[int(m)], cfg.optimizer,
                                         cfg.learning_rate);
            head_state.apply(model.head, cfg.optimizer, cfg.learning_rate);
        }
        return loss;
    };

    EarlyTrainResult result;
    EarlyFusionModel best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = epoch_base;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t presented = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            std::vector<size_t> idx;
            for (size_t b = start; b < end; ++b) idx.push_back(train_idx[order[b]]);
            const double batch_loss = batch_pass(idx, true, true);
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite fusion loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(start / size_t(cfg.batch_size)));
            epoch_loss += batch_loss * double(idx.size());
            presented += idx.size();
        }
        result.train_loss.push_back(epoch_loss / double(presented));
        result.epochs_run = epoch + 1;

        if (!val_idx.empty()) {
            const double vl = batch_pass(val_idx, false, false);
            result.val_loss.push_back(vl);
            if (vl < best_val - 1e-9) {
                best_val = vl;
                best = model;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                model = best;
                break;
            }
        }
    }
    if (!val_idx.empty() && best_val < std::numeric_limits<double>::infinity()) model = best;
    return result;
}

} // namespace mmist::fusion
