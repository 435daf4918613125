#pragma once

// Cross-modal encoder-decoder for missing-modality latent reconstruction.
// Missing modality slots enter as zeros; per-modality encoders feed a
// cross-modal layer whose output is decoded back to every modality's native
// dimension. At inference only the vectors for absent modalities are kept.

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mmist/cohort_io.hpp"
#include "mmist/errors.hpp"
#include "mmist/mil.hpp"
#include "mmist/nn.hpp"
#include "mmist/types.hpp"

namespace mmist::recon {

inline constexpr size_t kLatentDim = 128;
inline constexpr double kDefaultDropProb = 0.25;

struct ReconModel {
    std::array<nn::ModelF, kNumModalities> encoders;  // dim_m -> 128 -> 128
    nn::ModelF cross;                                 // 4*128 -> 128
    std::array<nn::ModelF, kNumModalities> decoders;  // 128 -> 128 -> dim_m

    size_t modality_dim(Modality m) const { return size_t(encoders[int(m)].input_dim()); }
};

inline ReconModel make_recon_model(Rng& rng,
                                   const std::array<size_t, kNumModalities>& dims = kModalityDims) {
    ReconModel model;
    for (Modality m : kAllModalities) {
        const int i = int(m);
        model.encoders[i] = nn::make_mlp(dims[i], {kLatentDim}, kLatentDim,
                                         nn::Activation::Relu, rng);
        model.decoders[i] = nn::make_mlp(kLatentDim, {kLatentDim}, dims[i],
                                         nn::Activation::Identity, rng);
    }
    model.cross = nn::make_mlp(kNumModalities * kLatentDim, {}, kLatentDim,
                               nn::Activation::Relu, rng);
    return model;
}

enum class Provenance { Reconstructed, Generated };

struct ReconOutput {
    std::array<FeatureVector, kNumModalities> vectors;
    std::array<Provenance, kNumModalities> provenance{};
};

// One patient's per-modality slot vectors; absent slots are all-zero.
struct InputBlock {
    std::array<FeatureVector, kNumModalities> slots;
    ModalityMask mask;
};

inline InputBlock assemble_input(const std::array<const FeatureVector*, kNumModalities>& features,
                                 const ModalityMask& mask,
                                 const std::array<size_t, kNumModalities>& dims = kModalityDims) {
    InputBlock block;
    block.mask = mask;
    for (Modality m : kAllModalities) {
        const int i = int(m);
        if (mask[m] != (features[i] != nullptr))
            throw MaskMismatch(std::string("feature/mask disagree on ") + modality_name(m));
        if (features[i]) {
            if (features[i]->size() != dims[i])
                throw DimMismatch(std::string("bad dim for ") + modality_name(m));
            block.slots[i] = *features[i];
        } else {
            block.slots[i].assign(dims[i], 0.0f);
        }
    }
    return block;
}

namespace detail {

using Matrix = Eigen::MatrixXf;

// Batched forward through the whole model; keeps every cached activation so
// training can backprop. Columns are patients.
struct ForwardCache {
    std::array<Matrix, kNumModalities> enc_in;
    std::array<std::vector<Matrix>, kNumModalities> enc_acts;
    Matrix concat;
    std::vector<Matrix> cross_acts;
    std::array<std::vector<Matrix>, kNumModalities> dec_acts;
};

inline ForwardCache forward_batch(const ReconModel& model,
                                  const std::array<Matrix, kNumModalities>& slots) {
    ForwardCache c;
    const Eigen::Index n = slots[0].cols();
    c.concat.resize(Eigen::Index(kNumModalities * kLatentDim), n);
    for (Modality m : kAllModalities) {
        const int i = int(m);
        c.enc_in[i] = slots[i];
        c.enc_acts[i] = nn::detail::forward_cached(model.encoders[i], slots[i]);
        c.concat.middleRows(Eigen::Index(i * kLatentDim), Eigen::Index(kLatentDim)) =
            c.enc_acts[i].back();
    }
    c.cross_acts = nn::detail::forward_cached(model.cross, c.concat);
    for (Modality m : kAllModalities) {
        const int i = int(m);
        c.dec_acts[i] = nn::detail::forward_cached(model.decoders[i], c.cross_acts.back());
    }
    return c;
}

} // namespace detail

inline ReconOutput recon_forward(const ReconModel& model, const InputBlock& input) {
    std::array<detail::Matrix, kNumModalities> slots;
    for (Modality m : kAllModalities) {
        const int i = int(m);
        const auto& v = input.slots[i];
        if (v.size() != model.modality_dim(m))
            throw DimMismatch(std::string("recon_forward: bad dim for ") + modality_name(m));
        slots[i].resize(Eigen::Index(v.size()), 1);
        for (size_t j = 0; j < v.size(); ++j) slots[i](Eigen::Index(j), 0) = v[j];
    }
    const auto cache = detail::forward_batch(model, slots);
    ReconOutput out;
    for (Modality m : kAllModalities) {
        const int i = int(m);
        const auto& col = cache.dec_acts[i].back();
        out.vectors[i].resize(size_t(col.rows()));
        for (Eigen::Index j = 0; j < col.rows(); ++j) out.vectors[i][size_t(j)] = col(j, 0);
        out.provenance[i] = input.mask[Modality(i)] ? Provenance::Reconstructed
                                                    : Provenance::Generated;
    }
    return out;
}

// Present modalities keep their original vectors bit-identically; absent
// ones receive the generated vectors.
inline std::array<FeatureVector, kNumModalities> impute(const ReconModel& model,
                                                        const InputBlock& input) {
    ReconOutput out = recon_forward(model, input);
    std::array<FeatureVector, kNumModalities> completed;
    for (Modality m : kAllModalities) {
        const int i = int(m);
        completed[i] = input.mask[m] ? input.slots[i] : std::move(out.vectors[i]);
    }
    return completed;
}

struct ReconSample {
    InputBlock block;
    int label = 0;
};

inline std::vector<ReconSample> build_recon_samples(const Cohort& cohort,
                                                    const mil::SelectionMap& selections,
                                                    Split split) {
    std::vector<ReconSample> out;
    for (const auto& p : cohort.patients) {
        if (p.split != split) continue;
        const ModalityMask mask = modality_mask(p);
        std::array<const FeatureVector*, kNumModalities> feats{};
        for (Modality m : kAllModalities)
            if (mask[m]) feats[int(m)] = mil::selected_vector(p, m, selections);
        out.push_back({assemble_input(feats, mask, cohort.modality_dims), p.label_12mo});
    }
    return out;
}

struct ReconTrainResult {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::array<double, kNumModalities> per_modality_mse{};  // on the training samples
    int epochs_run = 0;
};

// Per-dimension MSE of the model's reconstruction against the true vectors,
// restricted to modalities present in each sample's mask.
inline std::array<double, kNumModalities> recon_mse(const ReconModel& model,
                                                    const std::vector<ReconSample>& samples) {
    std::array<double, kNumModalities> total{};
    std::array<size_t, kNumModalities> count{};
    for (const auto& s : samples) {
        const ReconOutput out = recon_forward(model, s.block);
        for (Modality m : kAllModalities) {
            const int i = int(m);
            if (!s.block.mask[m]) continue;
            double mse = 0.0;
            for (size_t j = 0; j < s.block.slots[i].size(); ++j) {
                const double d = double(out.vectors[i][j]) - double(s.block.slots[i][j]);
                mse += d * d;
            }
            total[i] += mse / double(s.block.slots[i].size());
            count[i]++;
        }
    }
    for (int i = 0; i < kNumModalities; ++i)
        total[i] = count[i] ? total[i] / double(count[i]) : std::numeric_limits<double>::quiet_NaN();
    return total;
}

// Modality dropout is only applied to samples that are missing at most one
// modality; dropping from sparser samples would leave too little context.
inline bool dropout_eligible(const ModalityMask& mask) {
    return mask.count() >= kNumModalities - 1;
}

// Training: masked per-modality MSE (per-dim averaged, summed over present
// modalities), 6x minority oversampling, Gaussian noise on present inputs,
// and modality dropout for samples with at most one modality missing.
inline ReconTrainResult train_recon(ReconModel& model, const std::vector<ReconSample>& samples,
                                    const nn::TrainConfig& cfg,
                                    double drop_prob = kDefaultDropProb) {
    using detail::Matrix;
    if (samples.empty()) throw EmptyCohort("train_recon: no samples");

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
    const auto epoch_base = nn::detail::oversampled_indices(train_labels, cfg.oversample_factor);

    // One optimizer state per submodel.
    std::array<nn::detail::OptimState<float>, kNumModalities> enc_state{
        nn::detail::OptimState<float>(model.encoders[0]),
        nn::detail::OptimState<float>(model.encoders[1]),
        nn::detail::OptimState<float>(model.encoders[2]),
        nn::detail::OptimState<float>(model.encoders[3])};
    nn::detail::OptimState<float> cross_state(model.cross);
    std::array<nn::detail::OptimState<float>, kNumModalities> dec_state{
        nn::detail::OptimState<float>(model.decoders[0]),
        nn::detail::OptimState<float>(model.decoders[1]),
        nn::detail::OptimState<float>(model.decoders[2]),
        nn::detail::OptimState<float>(model.decoders[3])};

    // Masked loss over a batch; writes gradients when state pointers given.
    const auto batch_pass = [&](const std::vector<size_t>& idx,
                                const std::vector<ModalityMask>& input_masks,
                                bool with_noise, bool update) {
        const Eigen::Index n = Eigen::Index(idx.size());
        std::array<Matrix, kNumModalities> slots;
        for (Modality m : kAllModalities) {
            const int mi = int(m);
            const size_t dim = model.modality_dim(m);
            slots[mi] = Matrix::Zero(Eigen::Index(dim), n);
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& s = samples[idx[size_t(j)]];
                if (!input_masks[size_t(j)][m]) continue;  // zero slot
                for (size_t i = 0; i < dim; ++i) {
                    double v = double(s.block.slots[mi][i]);
                    if (with_noise && cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
                    slots[mi](Eigen::Index(i), j) = float(v);
                }
            }
        }

        auto cache = detail::forward_batch(model, slots);

        // Loss: sum over modalities present in the TRUE mask of per-dim MSE,
        // averaged over the batch.
        double loss = 0.0;
        std::array<Matrix, kNumModalities> dout;
        for (Modality m : kAllModalities) {
            const int mi = int(m);
            const Matrix& out = cache.dec_acts[mi].back();
            dout[mi] = Matrix::Zero(out.rows(), out.cols());
            const double dinv = 1.0 / double(out.rows());
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& s = samples[idx[size_t(j)]];
                if (!s.block.mask[m]) continue;  // absent in truth: no supervision
                double l = 0.0;
                for (Eigen::Index i = 0; i < out.rows(); ++i) {
                    const double diff = double(out(i, j)) - double(s.block.slots[mi][size_t(i)]);
                    l += diff * diff;
                    dout[mi](i, j) = float(2.0 * diff * dinv / double(n));
                }
                loss += l * dinv;
            }
        }
        loss /= double(n);

        if (update) {
            // Decoders feed the shared cross output; sum their input deltas.
            Matrix dcross_out = Matrix::Zero(Eigen::Index(kLatentDim), n);
            for (Modality m : kAllModalities) {
                const int mi = int(m);
                dcross_out += nn::detail::backprop(model.decoders[mi], cache.cross_acts.back(),
                                                   cache.dec_acts[mi], dout[mi], dec_state[mi]);
            }
            const Matrix dconcat = nn::detail::backprop(model.cross, cache.concat,
                                                        cache.cross_acts, dcross_out, cross_state);
            for (Modality m : kAllModalities) {
                const int mi = int(m);
                const Matrix dslice =
                    dconcat.middleRows(Eigen::Index(size_t(mi) * kLatentDim),
                                       Eigen::Index(kLatentDim));
                nn::detail::backprop(model.encoders[mi], cache.enc_in[mi], cache.enc_acts[mi],
                                     dslice, enc_state[mi]);
            }
            for (Modality m : kAllModalities) {
                enc_state[int(m)].apply(model.encoders[int(m)], cfg.optimizer, cfg.learning_rate);
                dec_state[int(m)].apply(model.decoders[int(m)], cfg.optimizer, cfg.learning_rate);
            }
            cross_state.apply(model.cross, cfg.optimizer, cfg.learning_rate);
        }
        return loss;
    };

    const auto eval_loss = [&](const std::vector<size_t>& idx) {
        std::vector<ModalityMask> masks;
        for (size_t i : idx) masks.push_back(samples[i].block.mask);
        return batch_pass(idx, masks, false, false);
    };

    ReconTrainResult result;
    ReconModel best = model;
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
            std::vector<ModalityMask> input_masks;
            for (size_t b = start; b < end; ++b) {
                const size_t si = train_idx[order[b]];
                idx.push_back(si);
                ModalityMask im = samples[si].block.mask;
                // Dropout only for samples with at most one modality missing:
                // zero exactly one additional present modality.
                if (dropout_eligible(im) && rng.bernoulli(drop_prob)) {
                    std::vector<Modality> present;
                    for (Modality m : kAllModalities)
                        if (im[m]) present.push_back(m);
                    im.at(present[rng.below(present.size())]) = false;
                }
                input_masks.push_back(im);
            }
            const double batch_loss = batch_pass(idx, input_masks, true, true);
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite recon loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(start / size_t(cfg.batch_size)));
            epoch_loss += batch_loss * double(idx.size());
            presented += idx.size();
        }
        result.train_loss.push_back(epoch_loss / double(presented));
        result.epochs_run = epoch + 1;

        if (!val_idx.empty()) {
            const double vl = eval_loss(val_idx);
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

    std::vector<ReconSample> train_samples;
    for (size_t i : train_idx) train_samples.push_back(samples[i]);
    result.per_modality_mse = recon_mse(model, train_samples);
    return result;
}

inline nn::ModelBundle to_bundle(const ReconModel& model, nlohmann::ordered_json meta) {
    nn::ModelBundle b;
    for (Modality m : kAllModalities)
        b.models.emplace_back(std::string("enc_") + modality_name(m), model.encoders[int(m)]);
    b.models.emplace_back("cross", model.cross);
    for (Modality m : kAllModalities)
        b.models.emplace_back(std::string("dec_") + modality_name(m), model.decoders[int(m)]);
    b.meta = std::move(meta);
    return b;
}

inline ReconModel from_bundle(const nn::ModelBundle& b) {
    ReconModel model;
    for (Modality m : kAllModalities) {
        model.encoders[int(m)] = b.find(std::string("enc_") + modality_name(m));
        model.decoders[int(m)] = b.find(std::string("dec_") + modality_name(m));
    }
    model.cross = b.find("cross");
    return model;
}

} // namespace mmist::recon
