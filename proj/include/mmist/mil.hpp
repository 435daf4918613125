#pragma once

// Patient-level multiple instance learning. A per-modality MLP scores each
// instance; max-pooling gives the bag probability and the argmax instance is
// the patient's selected scan/WSI. Ties break to the smallest index.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mmist/cohort_io.hpp"
#include "mmist/errors.hpp"
#include "mmist/nn.hpp"
#include "mmist/types.hpp"

namespace mmist::mil {

struct MilModel {
    Modality modality = Modality::CT;
    nn::ModelF scorer;  // sigmoid output, dim 1
};

inline std::vector<size_t> mil_hidden(Modality m) {
    return m == Modality::WSI ? std::vector<size_t>{512, 256, 128}
                              : std::vector<size_t>{256, 128};
}

inline nn::TrainConfig default_mil_config(Modality m, uint64_t seed) {
    nn::TrainConfig cfg;
    cfg.oversample_factor = (m == Modality::MRI) ? 16 : 8;
    cfg.noise_sigma = 0.01;
    cfg.seed = seed;
    return cfg;
}

inline MilModel make_mil_model(Modality m, Rng& rng) {
    return {m, nn::make_mlp(kModalityDims[int(m)], mil_hidden(m), 1, nn::Activation::Sigmoid,
                            rng)};
}

struct BagScore {
    double bag_prob = 0.0;
    size_t argmax_index = 0;
};

inline BagScore mil_forward(const MilModel& model, const FeatureBag& bag) {
    if (bag.modality != model.modality)
        throw DimMismatch("mil_forward: bag modality does not match model");
    BagScore best{-1.0, 0};
    using Matrix = Eigen::MatrixXf;
    Matrix x(Eigen::Index(bag.instances[0].size()), Eigen::Index(bag.instances.size()));
    for (size_t j = 0; j < bag.instances.size(); ++j) {
        if (bag.instances[j].size() != size_t(model.scorer.input_dim()))
            throw DimMismatch("mil_forward: instance dim mismatch");
        for (size_t i = 0; i < bag.instances[j].size(); ++i)
            x(Eigen::Index(i), Eigen::Index(j)) = bag.instances[j][i];
    }
    const Matrix probs = model.scorer.forward(x);
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        const double p = double(probs(0, j));
        if (p > best.bag_prob) best = {p, size_t(j)};
    }
    return best;
}

struct MilTrainResult {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int epochs_run = 0;
};

// Weighted BCE on the bag probability; the gradient flows through the
// argmax instance only.
inline MilTrainResult train_mil(MilModel& model, const Cohort& cohort,
                                const nn::TrainConfig& cfg) {
    using Matrix = Eigen::MatrixXf;
    const Modality mod = model.modality;

    struct Bag {
        const FeatureBag* bag;
        int label;
    };
    std::vector<Bag> bags;
    for (const auto& p : cohort.patients) {
        if (p.split != Split::TRAIN) continue;
        const auto& b = p.bag(mod);
        if (b && !b->instances.empty()) bags.push_back({&*b, p.label_12mo});
    }
    if (bags.empty())
        throw EmptyModality(std::string("no training bags for ") + modality_name(mod));

    Rng rng(cfg.seed);

    std::vector<size_t> train_idx, val_idx;
    {
        std::vector<int> labels;
        for (const auto& b : bags) labels.push_back(b.label);
        size_t counts[2] = {0, 0};
        for (int l : labels) counts[l]++;
        bool carved = false;
        if (cfg.val_fraction > 0 && cfg.patience > 0 && bags.size() >= 10 && counts[0] >= 4 &&
            counts[1] >= 4) {
            const auto is_val = stratified_test_assignment(labels, cfg.val_fraction, rng.next_u64());
            for (size_t i = 0; i < bags.size(); ++i) (is_val[i] ? val_idx : train_idx).push_back(i);
            carved = !val_idx.empty() && !train_idx.empty();
        }
        if (!carved) {
            train_idx.clear();
            val_idx.clear();
            for (size_t i = 0; i < bags.size(); ++i) train_idx.push_back(i);
        }
    }

    std::vector<int> train_labels;
    for (size_t i : train_idx) train_labels.push_back(bags[i].label);
    const auto [w0, w1] = nn::detail::resolve_class_weights(train_labels, cfg);
    const auto epoch_base = nn::detail::oversampled_indices(train_labels, cfg.oversample_factor);

    nn::detail::OptimState<float> state(model.scorer);
    MilTrainResult result;

    const auto val_loss = [&]() {
        double total = 0.0;
        for (size_t i : val_idx) {
            const double p = mil_forward(model, *bags[i].bag).bag_prob;
            total += nn::weighted_bce(p, bags[i].label, w0, w1);
        }
        return total / double(val_idx.size());
    };

    nn::ModelF best = model.scorer;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = epoch_base;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t presented = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            const size_t n_bags = end - start;

            // Flatten instances of the batch into one matrix.
            size_t total_inst = 0;
            for (size_t b = start; b < end; ++b)
                total_inst += bags[train_idx[order[b]]].bag->instances.size();
            Matrix x(model.scorer.input_dim(), Eigen::Index(total_inst));
            std::vector<std::pair<size_t, size_t>> ranges(n_bags);  // [begin,end) columns
            std::vector<int> labels(n_bags);
            size_t col = 0;
            for (size_t b = start; b < end; ++b) {
                const auto& bag = *bags[train_idx[order[b]]].bag;
                ranges[b - start].first = col;
                for (const auto& inst : bag.instances) {
                    for (size_t i = 0; i < inst.size(); ++i) {
                        double v = double(inst[i]);
                        if (cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
                        x(Eigen::Index(i), Eigen::Index(col)) = float(v);
                    }
                    ++col;
                }
                ranges[b - start].second = col;
                labels[b - start] = bags[train_idx[order[b]]].label;
            }

            const auto acts = nn::detail::forward_cached(model.scorer, x);
            const Matrix& probs = acts.back();
            Matrix dout = Matrix::Zero(1, Eigen::Index(total_inst));
            double batch_loss = 0.0;
            for (size_t b = 0; b < n_bags; ++b) {
                size_t arg = ranges[b].first;
                double maxp = -1.0;
                for (size_t j = ranges[b].first; j < ranges[b].second; ++j) {
                    const double p = double(probs(0, Eigen::Index(j)));
                    if (p > maxp) {
                        maxp = p;
                        arg = j;
                    }
                }
                batch_loss += nn::weighted_bce(maxp, labels[b], w0, w1);
                dout(0, Eigen::Index(arg)) =
                    float(nn::weighted_bce_grad(maxp, labels[b], w0, w1) / double(n_bags));
            }
            batch_loss /= double(n_bags);
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite MIL loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(start / size_t(cfg.batch_size)));
            nn::detail::backprop(model.scorer, x, acts, dout, state);
            state.apply(model.scorer, cfg.optimizer, cfg.learning_rate);
            epoch_loss += batch_loss * double(n_bags);
            presented += n_bags;
        }
        result.train_loss.push_back(epoch_loss / double(presented));
        result.epochs_run = epoch + 1;

        if (!val_idx.empty()) {
            const double vl = val_loss();
            result.val_loss.push_back(vl);
            if (vl < best_val - 1e-9) {
                best_val = vl;
                best = model.scorer;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                model.scorer = best;
                break;
            }
        }
    }
    if (!val_idx.empty() && best_val < std::numeric_limits<double>::infinity())
        model.scorer = best;
    return result;
}

struct Selection {
    std::string patient_id;
    Modality modality = Modality::CT;
    std::string instance_id;
    size_t instance_index = 0;
    double bag_prob = std::numeric_limits<double>::quiet_NaN();
    bool bypassed = false;  // singleton bags skip the model
};

using SelectionMap = std::map<std::string, std::map<Modality, Selection>>;

inline SelectionMap select_best(const Cohort& cohort,
                                const std::map<Modality, const MilModel*>& models) {
    SelectionMap out;
    for (const auto& p : cohort.patients) {
        for (Modality m : kImagingModalities) {
            const auto& bag = p.bag(m);
            if (!bag || bag->instances.empty()) continue;
            Selection sel;
            sel.patient_id = p.patient_id;
            sel.modality = m;
            if (bag->instances.size() == 1) {
                sel.instance_index = 0;
                sel.bypassed = true;
                const auto it = models.find(m);
                if (it != models.end() && it->second)
                    sel.bag_prob = mil_forward(*it->second, *bag).bag_prob;
            } else {
                const auto it = models.find(m);
                if (it == models.end() || !it->second)
                    throw MissingDependency(std::string("no MIL model for multi-instance bag of ") +
                                            modality_name(m));
                const BagScore score = mil_forward(*it->second, *bag);
                sel.instance_index = score.argmax_index;
                sel.bag_prob = score.bag_prob;
            }
            sel.instance_id = bag->instance_ids[sel.instance_index];
            out[p.patient_id][m] = std::move(sel);
        }
    }
    return out;
}

// The single feature vector a downstream stage consumes for a modality;
// CLINGEN bags are always singletons and need no selection.
inline const FeatureVector* selected_vector(const PatientRecord& p, Modality m,
                                            const SelectionMap& selections) {
    const auto& bag = p.bag(m);
    if (!bag || bag->instances.empty()) return nullptr;
    if (m == Modality::CLINGEN) return &bag->instances[0];
    const auto pit = selections.find(p.patient_id);
    if (pit == selections.end()) return nullptr;
    const auto mit = pit->second.find(m);
    if (mit == pit->second.end()) return nullptr;
    return &bag->instances[mit->second.instance_index];
}

inline void write_selections(const std::filesystem::path& path, const SelectionMap& sel) {
    std::ofstream out(path, std::ios::binary);
    out << "patient_id,modality,instance_id,bag_prob,bypassed\n";
    char buf[64];
    for (const auto& [pid, mods] : sel)
        for (const auto& [m, s] : mods) {
            if (std::isnan(s.bag_prob)) buf[0] = '\0';
            else std::snprintf(buf, sizeof(buf), "%.9g", s.bag_prob);
            out << pid << ',' << modality_name(m) << ',' << s.instance_id << ',' << buf << ','
                << (s.bypassed ? 1 : 0) << "\n";
        }
}

inline SelectionMap read_selections(const std::filesystem::path& path, const Cohort& cohort) {
    std::map<std::string, const PatientRecord*> by_id;
    for (const auto& p : cohort.patients) by_id[p.patient_id] = &p;

    SelectionMap out;
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 5) throw Error("bad selections row: " + line);
        Selection s;
        s.patient_id = f[0];
        s.modality = modality_from_name(f[1]);
        s.instance_id = f[2];
        s.bag_prob = f[3].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[3]);
        s.bypassed = f[4] == "1";
        const auto pit = by_id.find(s.patient_id);
        if (pit == by_id.end()) throw Error("selections reference unknown patient " + s.patient_id);
        const auto& bag = pit->second->bag(s.modality);
        if (!bag) throw Error("selections reference missing bag for " + s.patient_id);
        const auto iit = std::find(bag->instance_ids.begin(), bag->instance_ids.end(), s.instance_id);
        if (iit == bag->instance_ids.end())
            throw Error("selections reference unknown instance " + s.instance_id);
        s.instance_index = size_t(iit - bag->instance_ids.begin());
        out[s.patient_id][s.modality] = std::move(s);
    }
    return out;
}

} // namespace mmist::mil
