#pragma once

// Shared training substrate: dense feed-forward nets, weighted BCE / MSE,
// minority-class oversampling, Gaussian input noise, seed-deterministic
// training, finite-difference gradient checking, and model serialization.
//
// Layers are templated on the scalar type; training runs in float, the
// gradient checker instantiates double.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmist/errors.hpp"
#include "mmist/metrics.hpp"
#include "mmist/rng.hpp"
#include "mmist/types.hpp"

namespace mmist::nn {

enum class Activation { Relu, Sigmoid, Identity };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "identity") return Activation::Identity;
    throw Error("unknown activation '" + s + "'");
}

inline constexpr double kProbEps = 1e-7;

inline double weighted_bce(double p, int y, double w0, double w1) {
    p = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return y == 1 ? -w1 * std::log(p) : -w0 * std::log(1.0 - p);
}

// d(weighted_bce)/dp at the clamped point; zero in the clamp's flat region.
inline double weighted_bce_grad(double p, int y, double w0, double w1) {
    if (p < kProbEps || p > 1.0 - kProbEps) return 0.0;
    return y == 1 ? -w1 / p : w0 / (1.0 - p);
}

template <typename Scalar>
struct DenseLayer {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix weights;  // out x in
    Vector bias;
    Activation act = Activation::Relu;

    Eigen::Index in_dim() const { return weights.cols(); }
    Eigen::Index out_dim() const { return weights.rows(); }

    // Columns are samples.
    Matrix forward(const Matrix& x) const {
        Matrix pre = (weights * x).colwise() + bias;
        apply_activation(pre);
        return pre;
    }

    void apply_activation(Matrix& pre) const {
        switch (act) {
            case Activation::Relu:
                pre = pre.cwiseMax(Scalar(0));
                break;
            case Activation::Sigmoid:
                // Elementwise std::exp: SIMD exp gives position-dependent
                // low bits, which would break permutation equivariance.
                for (Eigen::Index c = 0; c < pre.cols(); ++c)
                    for (Eigen::Index r = 0; r < pre.rows(); ++r)
                        pre(r, c) = Scalar(1) / (Scalar(1) + std::exp(-pre(r, c)));
                break;
            case Activation::Identity:
                break;
        }
    }

    // d(post)/d(pre) expressed through the post-activation value.
    Matrix activation_grad(const Matrix& post) const {
        switch (act) {
            case Activation::Relu:
                return (post.array() > Scalar(0)).template cast<Scalar>().matrix();
            case Activation::Sigmoid:
                return (post.array() * (Scalar(1) - post.array())).matrix();
            case Activation::Identity:
                return Matrix::Ones(post.rows(), post.cols());
        }
        return {};
    }
};

template <typename Scalar>
struct FeedForwardModel {
    using Matrix = typename DenseLayer<Scalar>::Matrix;
    using Vector = typename DenseLayer<Scalar>::Vector;

    std::vector<DenseLayer<Scalar>> layers;

    Eigen::Index input_dim() const { return layers.front().in_dim(); }
    Eigen::Index output_dim() const { return layers.back().out_dim(); }

    Matrix forward(const Matrix& x) const {
        if (x.rows() != input_dim())
            throw DimMismatch("forward: input dim " + std::to_string(x.rows()) + " != " +
                              std::to_string(input_dim()));
        Matrix h = x;
        for (const auto& layer : layers) h = layer.forward(h);
        return h;
    }

    FeatureVector forward(const FeatureVector& x) const {
        Matrix in(x.size(), 1);
        for (size_t i = 0; i < x.size(); ++i) in(Eigen::Index(i), 0) = Scalar(x[i]);
        const Matrix out = forward(in);
        FeatureVector res(size_t(out.rows()));
        for (Eigen::Index i = 0; i < out.rows(); ++i) res[size_t(i)] = float(out(i, 0));
        return res;
    }

    template <typename Other>
    FeedForwardModel<Other> cast() const {
        FeedForwardModel<Other> m;
        for (const auto& l : layers)
            m.layers.push_back({l.weights.template cast<Other>(), l.bias.template cast<Other>(),
                                l.act});
        return m;
    }
};

using ModelF = FeedForwardModel<float>;
using ModelD = FeedForwardModel<double>;

// Uniform fan-in parameter init.
template <typename Scalar = float>
FeedForwardModel<Scalar> make_mlp(size_t input_dim, const std::vector<size_t>& hidden,
                                  size_t output_dim, Activation out_act, Rng& rng,
                                  Activation hidden_act = Activation::Relu) {
    FeedForwardModel<Scalar> m;
    std::vector<size_t> dims = {input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        DenseLayer<Scalar> l;
        l.weights.resize(Eigen::Index(dims[i + 1]), Eigen::Index(dims[i]));
        l.bias = DenseLayer<Scalar>::Vector::Zero(Eigen::Index(dims[i + 1]));
        const double bound = 1.0 / std::sqrt(double(dims[i]));
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
                l.weights(r, c) = Scalar((rng.uniform() * 2.0 - 1.0) * bound);
        l.act = (i + 2 == dims.size()) ? out_act : hidden_act;
        m.layers.push_back(std::move(l));
    }
    return m;
}

enum class LossKind { WeightedBce, Mse };

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    int oversample_factor = 1;
    double class_weight0 = 0.0;  // 0 = inverse class frequency, mean-normalized
    double class_weight1 = 0.0;
    double noise_sigma = 0.0;
    uint64_t seed = 0;
    int patience = 20;
    double val_fraction = 0.1;

    nlohmann::ordered_json to_json() const {
        return {{"epochs", epochs},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"},
                {"oversample_factor", oversample_factor},
                {"class_weight0", class_weight0},
                {"class_weight1", class_weight1},
                {"noise_sigma", noise_sigma},
                {"seed", seed},
                {"patience", patience},
                {"val_fraction", val_fraction}};
    }
};

struct Sample {
    FeatureVector x;
    std::vector<float> target;
    int label = 0;  // class label, drives oversampling and class weights
};

struct TrainResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch, empty if no validation carve
    int epochs_run = 0;
};

namespace detail {

// Gradient buffers + Adam state for one model.
template <typename Scalar>
struct OptimState {
    using Matrix = typename DenseLayer<Scalar>::Matrix;
    using Vector = typename DenseLayer<Scalar>::Vector;
    struct PerLayer {
        Matrix gw, mw, vw;
        Vector gb, mb, vb;
    };
    std::vector<PerLayer> layers;
    long step = 0;

    explicit OptimState(const FeedForwardModel<Scalar>& m) {
        for (const auto& l : m.layers) {
            PerLayer p;
            p.gw = Matrix::Zero(l.weights.rows(), l.weights.cols());
            p.mw = p.gw;
            p.vw = p.gw;
            p.gb = Vector::Zero(l.bias.size());
            p.mb = p.gb;
            p.vb = p.gb;
            layers.push_back(std::move(p));
        }
    }

    void apply(FeedForwardModel<Scalar>& m, Optimizer opt, double lr) {
        ++step;
        for (size_t i = 0; i < m.layers.size(); ++i) {
            auto& l = m.layers[i];
            auto& s = layers[i];
            if (opt == Optimizer::Sgd) {
                l.weights -= Scalar(lr) * s.gw;
                l.bias -= Scalar(lr) * s.gb;
            } else {
                const Scalar b1 = Scalar(0.9), b2 = Scalar(0.999), eps = Scalar(1e-8);
                const Scalar corr1 = Scalar(1) - Scalar(std::pow(0.9, double(step)));
                const Scalar corr2 = Scalar(1) - Scalar(std::pow(0.999, double(step)));
                s.mw = b1 * s.mw + (Scalar(1) - b1) * s.gw;
                s.vw = (b2 * s.vw.array() + (Scalar(1) - b2) * s.gw.array().square()).matrix();
                s.mb = b1 * s.mb + (Scalar(1) - b1) * s.gb;
                s.vb = (b2 * s.vb.array() + (Scalar(1) - b2) * s.gb.array().square()).matrix();
                l.weights.array() -=
                    Scalar(lr) * (s.mw.array() / corr1) /
                    ((s.vw.array() / corr2).sqrt() + eps);
                l.bias.array() -=
                    Scalar(lr) * (s.mb.array() / corr1) /
                    ((s.vb.array() / corr2).sqrt() + eps);
            }
        }
    }
};

// Forward pass keeping per-layer post-activations, then backprop.
// `dout` is dL/d(output) with any batch averaging already folded in.
// Gradients are written to `state`; returns dL/d(input).
template <typename Scalar>
typename DenseLayer<Scalar>::Matrix backprop(
    FeedForwardModel<Scalar>& model, const typename DenseLayer<Scalar>::Matrix& x,
    const std::vector<typename DenseLayer<Scalar>::Matrix>& activations,
    const typename DenseLayer<Scalar>::Matrix& dout, OptimState<Scalar>& state) {
    using Matrix = typename DenseLayer<Scalar>::Matrix;
    Matrix delta = dout;
    for (size_t li = model.layers.size(); li-- > 0;) {
        auto& layer = model.layers[li];
        const Matrix& post = activations[li];
        const Matrix& input = (li == 0) ? x : activations[li - 1];
        delta = delta.cwiseProduct(layer.activation_grad(post));
        state.layers[li].gw.noalias() = delta * input.transpose();
        state.layers[li].gb = delta.rowwise().sum();
        delta = (layer.weights.transpose() * delta).eval();
    }
    return delta;
}

template <typename Scalar>
std::vector<typename DenseLayer<Scalar>::Matrix> forward_cached(
    const FeedForwardModel<Scalar>& model, const typename DenseLayer<Scalar>::Matrix& x) {
    std::vector<typename DenseLayer<Scalar>::Matrix> acts;
    acts.reserve(model.layers.size());
    auto h = x;
    for (const auto& layer : model.layers) {
        h = layer.forward(h);
        acts.push_back(h);
    }
    return acts;
}

// Minority examples appear oversample_factor times per epoch; ties in class
// frequency mean no oversampling.
inline std::vector<size_t> oversampled_indices(const std::vector<int>& labels,
                                               int oversample_factor) {
    size_t counts[2] = {0, 0};
    for (int l : labels) counts[l]++;
    int minority = -1;
    if (counts[0] != counts[1] && counts[0] > 0 && counts[1] > 0)
        minority = counts[0] < counts[1] ? 0 : 1;
    std::vector<size_t> idx;
    for (size_t i = 0; i < labels.size(); ++i) {
        const int reps = (int(labels[i]) == minority) ? oversample_factor : 1;
        for (int r = 0; r < reps; ++r) idx.push_back(i);
    }
    return idx;
}

inline std::pair<double, double> resolve_class_weights(const std::vector<int>& labels,
                                                       const TrainConfig& cfg) {
    if (cfg.class_weight0 > 0 && cfg.class_weight1 > 0)
        return {cfg.class_weight0, cfg.class_weight1};
    double counts[2] = {0, 0};
    for (int l : labels) counts[l]++;
    if (counts[0] == 0 || counts[1] == 0) return {1.0, 1.0};
    const double n = double(labels.size());
    double w0 = n / (2.0 * counts[0]);
    double w1 = n / (2.0 * counts[1]);
    const double mean = (w0 + w1) / 2.0;
    return {w0 / mean, w1 / mean};
}

} // namespace detail

// Per-sample loss and dL/d(p) for one output column; dL already includes
// the 1/batch factor supplied by the caller.
struct LossEval {
    double loss = 0.0;
};

template <typename Scalar>
double batch_loss_and_grad(LossKind loss, const typename DenseLayer<Scalar>::Matrix& out,
                           const std::vector<const std::vector<float>*>& targets,
                           const std::vector<int>& labels, double w0, double w1,
                           typename DenseLayer<Scalar>::Matrix& dout) {
    const Eigen::Index n = out.cols();
    dout.resize(out.rows(), n);
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (loss == LossKind::WeightedBce) {
            const double p = double(out(0, j));
            const int y = labels[size_t(j)];
            total += weighted_bce(p, y, w0, w1);
            dout(0, j) = Scalar(weighted_bce_grad(p, y, w0, w1) / double(n));
        } else {
            const auto& t = *targets[size_t(j)];
            const double d = double(out.rows());
            double l = 0.0;
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                const double diff = double(out(i, j)) - double(t[size_t(i)]);
                l += diff * diff;
                dout(i, j) = Scalar(2.0 * diff / d / double(n));
            }
            total += l / d;
        }
    }
    return total / double(n);
}

template <typename Scalar>
TrainResult train(FeedForwardModel<Scalar>& model, const std::vector<Sample>& dataset,
                  LossKind loss, const TrainConfig& cfg) {
    using Matrix = typename DenseLayer<Scalar>::Matrix;
    if (dataset.empty()) throw EmptyCohort("train: empty dataset");

    Rng rng(cfg.seed);

    // Stratified validation carve for early stopping. Skipped when either
    // class is too small to spare a patient.
    std::vector<size_t> train_idx, val_idx;
    {
        std::vector<int> labels;
        for (const auto& s : dataset) labels.push_back(s.label);
        bool carved = false;
        if (cfg.val_fraction > 0 && cfg.patience > 0 && dataset.size() >= 10) {
            size_t counts[2] = {0, 0};
            for (int l : labels) counts[l]++;
            const bool two_class = counts[0] > 0 && counts[1] > 0;
            if (!two_class || (counts[0] >= 4 && counts[1] >= 4)) {
                try {
                    const auto is_val =
                        stratified_test_assignment(labels, cfg.val_fraction, rng.next_u64());
                    for (size_t i = 0; i < dataset.size(); ++i)
                        (is_val[i] ? val_idx : train_idx).push_back(i);
                    carved = !val_idx.empty() && !train_idx.empty();
                } catch (const DegenerateClass&) {
                    carved = false;
                }
            }
        }
        if (!carved) {
            train_idx.clear();
            val_idx.clear();
            for (size_t i = 0; i < dataset.size(); ++i) train_idx.push_back(i);
        }
    }

    std::vector<int> train_labels;
    for (size_t i : train_idx) train_labels.push_back(dataset[i].label);
    const auto [w0, w1] = detail::resolve_class_weights(train_labels, cfg);
    const auto epoch_base = detail::oversampled_indices(train_labels, cfg.oversample_factor);

    detail::OptimState<Scalar> state(model);
    TrainResult result;

    const auto eval_split = [&](const std::vector<size_t>& idx) {
        if (idx.empty()) return 0.0;
        Matrix x(model.input_dim(), Eigen::Index(idx.size()));
        std::vector<const std::vector<float>*> targets(idx.size());
        std::vector<int> labels(idx.size());
        for (size_t j = 0; j < idx.size(); ++j) {
            const auto& s = dataset[idx[j]];
            for (size_t i = 0; i < s.x.size(); ++i) x(Eigen::Index(i), Eigen::Index(j)) = Scalar(s.x[i]);
            targets[j] = &s.target;
            labels[j] = s.label;
        }
        const Matrix out = model.forward(x);
        Matrix dout;
        return batch_loss_and_grad<Scalar>(loss, out, targets, labels, w0, w1, dout);
    };

    FeedForwardModel<Scalar> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = epoch_base;  // local indices into train_idx
        rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t presentations = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            const Eigen::Index n = Eigen::Index(end - start);
            Matrix x(model.input_dim(), n);
            std::vector<const std::vector<float>*> targets(size_t(n), nullptr);
            std::vector<int> labels(size_t(n), 0);
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& s = dataset[train_idx[order[start + size_t(j)]]];
                if (Eigen::Index(s.x.size()) != model.input_dim())
                    throw DimMismatch("train: sample dim " + std::to_string(s.x.size()));
                for (size_t i = 0; i < s.x.size(); ++i) {
                    double v = double(s.x[i]);
                    if (cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
                    x(Eigen::Index(i), j) = Scalar(v);
                }
                targets[size_t(j)] = &s.target;
                labels[size_t(j)] = s.label;
            }
            const auto acts = detail::forward_cached(model, x);
            Matrix dout;
            const double batch_loss = batch_loss_and_grad<Scalar>(loss, acts.back(), targets,
                                                                  labels, w0, w1, dout);
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(start / size_t(cfg.batch_size)));
            detail::backprop(model, x, acts, dout, state);
            state.apply(model, cfg.optimizer, cfg.learning_rate);
            epoch_loss += batch_loss * double(n);
            presentations += size_t(n);
        }
        result.train_loss.push_back(epoch_loss / double(presentations));
        result.epochs_run = epoch + 1;

        if (!val_idx.empty()) {
            const double vl = eval_split(val_idx);
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

// Max relative error between analytic gradients and central finite
// differences over every parameter of the model.
template <typename Scalar>
double grad_check(const FeedForwardModel<Scalar>& model_in, LossKind loss, const Sample& sample,
                  double w0 = 1.0, double w1 = 1.0, double step = 1e-5) {
    ModelD model = model_in.template cast<double>();
    using Matrix = DenseLayer<double>::Matrix;

    Matrix x(sample.x.size(), 1);
    for (size_t i = 0; i < sample.x.size(); ++i) x(Eigen::Index(i), 0) = double(sample.x[i]);
    const std::vector<const std::vector<float>*> targets = {&sample.target};
    const std::vector<int> labels = {sample.label};

    const auto loss_at = [&](const ModelD& m) {
        Matrix dout;
        return batch_loss_and_grad<double>(loss, m.forward(x), targets, labels, w0, w1, dout);
    };

    detail::OptimState<double> state(model);
    const auto acts = detail::forward_cached(model, x);
    Matrix dout;
    batch_loss_and_grad<double>(loss, acts.back(), targets, labels, w0, w1, dout);
    detail::backprop(model, x, acts, dout, state);

    double max_err = 0.0;
    const auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + step;
        const double lp = loss_at(model);
        param = saved - step;
        const double lm = loss_at(model);
        param = saved;
        const double numeric = (lp - lm) / (2.0 * step);
        const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
    };
    for (size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
                check(l.weights(r, c), state.layers[li].gw(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            check(l.bias(r), state.layers[li].gb(r));
    }
    return max_err;
}

// ---------------------------------------------------------------------------
// Serialization: "MMNN" container holding named models plus a JSON header.
// Payload is raw float32 little-endian, row-major weights then bias, in
// layer order, in model order.

inline constexpr unsigned char kModelMagic[5] = {0x4D, 0x4D, 0x4E, 0x4E, 0x01};

struct ModelBundle {
    std::vector<std::pair<std::string, ModelF>> models;
    nlohmann::ordered_json meta;  // schema version, train config echo, etc.

    const ModelF& find(const std::string& name) const {
        for (const auto& [n, m] : models)
            if (n == name) return m;
        throw MissingModel("model '" + name + "' not in bundle");
    }
};

inline void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
    nlohmann::ordered_json header;
    header["format"] = "mmnn-v1";
    header["meta"] = bundle.meta;
    auto& models_j = header["models"] = nlohmann::ordered_json::array();
    for (const auto& [name, m] : bundle.models) {
        nlohmann::ordered_json mj;
        mj["name"] = name;
        auto& layers_j = mj["layers"] = nlohmann::ordered_json::array();
        for (const auto& l : m.layers)
            layers_j.push_back({{"in", l.in_dim()},
                                {"out", l.out_dim()},
                                {"act", activation_name(l.act)}});
        models_j.push_back(std::move(mj));
    }
    const std::string header_s = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for write: " + path.string());
    out.write(reinterpret_cast<const char*>(kModelMagic), 5);
    const uint32_t len = uint32_t(header_s.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header_s.data(), std::streamsize(header_s.size()));
    for (const auto& [name, m] : bundle.models) {
        for (const auto& l : m.layers) {
            for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
                    const float v = l.weights(r, c);
                    out.write(reinterpret_cast<const char*>(&v), 4);
                }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
                const float v = l.bias(r);
                out.write(reinterpret_cast<const char*>(&v), 4);
            }
        }
    }
    if (!out) throw Error("write failed: " + path.string());
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingModel("cannot open model file: " + path.string());
    unsigned char magic[5];
    in.read(reinterpret_cast<char*>(magic), 5);
    if (in.gcount() != 5 || std::memcmp(magic, kModelMagic, 5) != 0)
        throw MissingModel("bad model magic in " + path.string());
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (in.gcount() != 4) throw MissingModel("truncated model header in " + path.string());
    std::string header_s(len, '\0');
    in.read(header_s.data(), std::streamsize(len));
    if (uint32_t(in.gcount()) != len)
        throw MissingModel("truncated model header in " + path.string());

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(header_s);
    } catch (const nlohmann::json::exception&) {
        throw MissingModel("corrupt model header in " + path.string());
    }
    if (header.value("format", "") != "mmnn-v1")
        throw MissingModel("unsupported model format in " + path.string());

    ModelBundle bundle;
    bundle.meta = header["meta"];
    for (const auto& mj : header["models"]) {
        ModelF m;
        for (const auto& lj : mj["layers"]) {
            DenseLayer<float> l;
            l.weights.resize(lj["out"].get<Eigen::Index>(), lj["in"].get<Eigen::Index>());
            l.bias.resize(lj["out"].get<Eigen::Index>());
            l.act = activation_from_name(lj["act"].get<std::string>());
            for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
                    float v;
                    in.read(reinterpret_cast<char*>(&v), 4);
                    if (in.gcount() != 4)
                        throw MissingModel("truncated payload in " + path.string());
                    l.weights(r, c) = v;
                }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
                float v;
                in.read(reinterpret_cast<char*>(&v), 4);
                if (in.gcount() != 4) throw MissingModel("truncated payload in " + path.string());
                l.bias(r) = v;
            }
            m.layers.push_back(std::move(l));
        }
        bundle.models.emplace_back(mj["name"].get<std::string>(), std::move(m));
    }
    return bundle;
}

} // namespace mmist::nn
