#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiarag/binary_io.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/error.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/random.hpp"

namespace eiarag {

/// Two rectified hidden layers and one logistic output unit. Matrices are
/// row-major: w1 is h1 x d, w2 is h2 x h1, w3 is 1 x h2.
template <typename T>
struct MlpParams {
    std::size_t d = 0, h1 = 0, h2 = 0;
    std::vector<T> w1, b1, w2, b2, w3, b3;

    MlpParams() = default;
    MlpParams(std::size_t d_, std::size_t h1_, std::size_t h2_)
        : d(d_), h1(h1_), h2(h2_), w1(h1_ * d_), b1(h1_), w2(h2_ * h1_), b2(h2_), w3(h2_), b3(1) {}

    /// Visits every parameter block in serialization order.
    template <typename Fn>
    void for_each_block(Fn&& fn) {
        fn(w1), fn(b1), fn(w2), fn(b2), fn(w3), fn(b3);
    }
    template <typename Fn>
    void for_each_block(Fn&& fn) const {
        fn(w1), fn(b1), fn(w2), fn(b2), fn(w3), fn(b3);
    }

    std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size(); }

    template <typename U>
    MlpParams<U> cast() const {
        MlpParams<U> out(d, h1, h2);
        auto copy = [](const std::vector<T>& from, std::vector<U>& to) {
            for (std::size_t i = 0; i < from.size(); ++i) to[i] = static_cast<U>(from[i]);
        };
        copy(w1, out.w1), copy(b1, out.b1), copy(w2, out.w2), copy(b2, out.b2), copy(w3, out.w3), copy(b3, out.b3);
        return out;
    }

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct ModelMetadata {
    std::uint64_t seed = 0;
    std::uint32_t best_epoch = 1;
    std::int32_t layer = 1;
    double validation_accuracy = 0.0;

    friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

struct ClassifierModel {
    MlpParams<float> params;
    ModelMetadata meta;

    std::size_t input_dim() const { return params.d; }

    friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;
};

template <typename T>
T logistic(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

/// log(1 + e^z) without overflow.
template <typename T>
T softplus(T z) {
    return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
struct ForwardTrace {
    std::vector<T> a1, h1, a2, h2;
    T logit{};
};

template <typename T>
ForwardTrace<T> forward_trace(const MlpParams<T>& p, std::span<const T> x) {
    ForwardTrace<T> t;
    t.a1.assign(p.h1, T(0));
    t.h1.assign(p.h1, T(0));
    for (std::size_t i = 0; i < p.h1; ++i) {
        T s = p.b1[i];
        const T* row = &p.w1[i * p.d];
        for (std::size_t j = 0; j < p.d; ++j) s += row[j] * x[j];
        t.a1[i] = s;
        t.h1[i] = std::max(s, T(0));
    }
    t.a2.assign(p.h2, T(0));
    t.h2.assign(p.h2, T(0));
    for (std::size_t i = 0; i < p.h2; ++i) {
        T s = p.b2[i];
        const T* row = &p.w2[i * p.h1];
        for (std::size_t j = 0; j < p.h1; ++j) s += row[j] * t.h1[j];
        t.a2[i] = s;
        t.h2[i] = std::max(s, T(0));
    }
    T z = p.b3[0];
    for (std::size_t j = 0; j < p.h2; ++j) z += p.w3[j] * t.h2[j];
    t.logit = z;
    return t;
}

template <typename T>
T predict_logit(const MlpParams<T>& p, std::span<const T> x) {
    return forward_trace(p, x).logit;
}

/// Mean binary cross-entropy over a batch and its exact gradient.
template <typename T>
T loss_and_gradient(const MlpParams<T>& p, const std::vector<std::span<const T>>& xs, std::span<const int> ys,
                    MlpParams<T>& grad) {
    grad = MlpParams<T>(p.d, p.h1, p.h2);
    const T inv_n = T(1) / static_cast<T>(xs.size());
    T loss = T(0);
    std::vector<T> da2(p.h2), da1(p.h1);
    for (std::size_t n = 0; n < xs.size(); ++n) {
        const auto& x = xs[n];
        const auto t = forward_trace(p, x);
        const T y = static_cast<T>(ys[n]);
        loss += softplus(t.logit) - y * t.logit;
        const T dz = (logistic(t.logit) - y) * inv_n;

        grad.b3[0] += dz;
        for (std::size_t j = 0; j < p.h2; ++j) {
            grad.w3[j] += dz * t.h2[j];
            da2[j] = t.a2[j] > T(0) ? dz * p.w3[j] : T(0);
            grad.b2[j] += da2[j];
        }
        std::fill(da1.begin(), da1.end(), T(0));
        for (std::size_t i = 0; i < p.h2; ++i) {
            if (da2[i] == T(0)) continue;
            T* grow = &grad.w2[i * p.h1];
            const T* wrow = &p.w2[i * p.h1];
            for (std::size_t j = 0; j < p.h1; ++j) {
                grow[j] += da2[i] * t.h1[j];
                da1[j] += wrow[j] * da2[i];
            }
        }
        for (std::size_t i = 0; i < p.h1; ++i) {
            if (t.a1[i] <= T(0)) continue;
            grad.b1[i] += da1[i];
            T* grow = &grad.w1[i * p.d];
            for (std::size_t j = 0; j < p.d; ++j) grow[j] += da1[i] * x[j];
        }
    }
    return loss * inv_n;
}

// ---------------------------------------------------------------------------

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline ClassifierModel init_model(std::size_t d, std::size_t h1, std::size_t h2, std::uint64_t seed) {
    if (d < 1 || h1 < 1 || h2 < 1) throw ValidationError("layer sizes must be at least 1");
    ClassifierModel m;
    m.params = MlpParams<float>(d, h1, h2);
    m.meta.seed = seed;
    Rng rng(seed);
    auto fill = [&](std::vector<float>& w, std::size_t fan_in, std::size_t fan_out) {
        const auto limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
        for (auto& x : w) x = std::clamp(static_cast<float>(rng.uniform(-limit, limit)), -limit, limit);
    };
    fill(m.params.w1, d, h1);
    fill(m.params.w2, h1, h2);
    fill(m.params.w3, h2, 1);
    return m;
}

inline void check_dim(const ClassifierModel& model, std::size_t dim) {
    if (dim != model.params.d) {
        throw ValidationError("embedding dimension " + std::to_string(dim) + " does not match model input " +
                              std::to_string(model.params.d));
    }
}

/// Probability that retrieval is needed.
inline float forward(const ClassifierModel& model, std::span<const float> x) {
    check_dim(model, x.size());
    return logistic(predict_logit(model.params, x));
}

inline float forward(const ClassifierModel& model, const SentenceEmbedding& x) {
    return forward(model, std::span<const float>(x.values));
}

inline int decide(const ClassifierModel& model, const SentenceEmbedding& x, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie strictly between 0 and 1");
    return static_cast<double>(forward(model, x)) >= threshold ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 1e-3;
    int max_epochs = 50;
    std::size_t batch_size = 32;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ValidationError("learning_rate must be finite and non-negative");
        }
        if (max_epochs < 1) throw ValidationError("max_epochs must be at least 1");
        if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Epoch 0 records the untrained model.
struct TrainingLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 1;
    double best_val_accuracy = 0.0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::vector<std::string> warnings;

    friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

inline nlohmann::json to_json(const TrainingLog& log) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    }
    return {{"epochs", epochs},          {"best_epoch", log.best_epoch}, {"best_val_accuracy", log.best_val_accuracy},
            {"train_size", log.train_size}, {"val_size", log.val_size},  {"warnings", log.warnings}};
}

/// Seeded validation split, stratified by label. Returns (train, val) indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const std::vector<int>& labels,
                                                                                       double val_fraction, Rng& rng) {
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] ? 1 : 0].push_back(i);
    std::vector<std::size_t> val_take(2);
    for (int c = 0; c < 2; ++c) {
        rng.shuffle(by_class[c]);
        val_take[c] = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(by_class[c].size())));
        // keep at least one training example of each class that has two or more
        if (val_take[c] >= by_class[c].size() && by_class[c].size() >= 2) val_take[c] = by_class[c].size() - 1;
    }
    if (val_take[0] + val_take[1] == 0) {
        const int big = by_class[1].size() > by_class[0].size() ? 1 : 0;
        if (by_class[big].size() >= 2) val_take[big] = 1;
    }
    std::vector<std::size_t> train, val;
    for (int c = 0; c < 2; ++c) {
        for (std::size_t k = 0; k < by_class[c].size(); ++k) (k < val_take[c] ? val : train).push_back(by_class[c][k]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

namespace detail {

inline double accuracy_on(const MlpParams<float>& p, const std::vector<std::span<const float>>& xs,
                          const std::vector<int>& ys, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t hits = 0;
    for (auto i : idx) {
        const int pred = predict_logit(p, xs[i]) >= 0.0f ? 1 : 0;
        hits += pred == ys[i];
    }
    return static_cast<double>(hits) / static_cast<double>(idx.size());
}

inline double mean_loss(const MlpParams<float>& p, const std::vector<std::span<const float>>& xs,
                        const std::vector<int>& ys, const std::vector<std::size_t>& idx) {
    double total = 0.0;
    for (auto i : idx) {
        const float z = predict_logit(p, xs[i]);
        total += static_cast<double>(softplus(z) - static_cast<float>(ys[i]) * z);
    }
    return total / static_cast<double>(idx.size());
}

}  // namespace detail

/// Mini-batch Adam on binary cross-entropy. After every epoch the model is
/// scored on the validation split; the parameters of the first epoch reaching
/// the best validation accuracy are returned.
inline std::pair<ClassifierModel, TrainingLog> train(const ClassifierModel& initial, const LabeledSet& data,
                                                     const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() < 2) throw ValidationError("training needs at least 2 labeled examples");

    std::vector<std::span<const float>> xs;
    std::vector<int> ys;
    for (const auto& ex : data.examples) {
        check_dim(initial, ex.embedding.values.size());
        xs.emplace_back(ex.embedding.values);
        ys.push_back(ex.label);
    }

    Rng rng(mix_seed(cfg.seed, 0x7EA1));
    auto [train_idx, val_idx] = stratified_split(ys, cfg.val_fraction, rng);
    TrainingLog log;
    log.train_size = train_idx.size();
    log.val_size = val_idx.size();
    const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;

    ClassifierModel model = initial;
    model.meta.seed = initial.meta.seed;
    if (!data.examples.empty()) model.meta.layer = data.examples.front().embedding.layer;

    const auto positives = static_cast<std::size_t>(
        std::count_if(train_idx.begin(), train_idx.end(), [&](std::size_t i) { return ys[i] == 1; }));
    if (positives == 0 || positives == train_idx.size()) {
        // constant prior: every weight zero, output bias at the clamped class log-odds
        const double prior = std::clamp(static_cast<double>(positives) / static_cast<double>(train_idx.size()), 1e-6,
                                        1.0 - 1e-6);
        model.params.for_each_block([](std::vector<float>& w) { std::fill(w.begin(), w.end(), 0.0f); });
        model.params.b3[0] = static_cast<float>(std::log(prior / (1.0 - prior)));
        log.warnings.push_back("training data has a single class; returning constant-prior model");
        const double acc = detail::accuracy_on(model.params, xs, ys, eval_idx);
        log.epochs.push_back({0, detail::mean_loss(model.params, xs, ys, train_idx), acc});
        log.epochs.push_back({1, log.epochs.front().train_loss, acc});
        log.best_epoch = 1;
        log.best_val_accuracy = acc;
        model.meta.best_epoch = 1;
        model.meta.validation_accuracy = acc;
        return {model, log};
    }

    auto& params = model.params;
    MlpParams<float> m1(params.d, params.h1, params.h2), m2(params.d, params.h1, params.h2), grad;
    const auto lr = static_cast<float>(cfg.learning_rate);
    const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const auto eps = static_cast<float>(cfg.epsilon);

    log.epochs.push_back({0, detail::mean_loss(params, xs, ys, train_idx), detail::accuracy_on(params, xs, ys, eval_idx)});
    MlpParams<float> best = params;
    double best_acc = -1.0;
    int best_epoch = 1;
    std::uint64_t step = 0;
    std::vector<std::size_t> order = train_idx;
    std::vector<std::span<const float>> batch_x;
    std::vector<int> batch_y;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto stop = std::min(order.size(), start + cfg.batch_size);
            batch_x.clear();
            batch_y.clear();
            for (auto k = start; k < stop; ++k) {
                batch_x.push_back(xs[order[k]]);
                batch_y.push_back(ys[order[k]]);
            }
            const float batch_loss = loss_and_gradient(params, batch_x, batch_y, grad);
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(step + 1) + " (learning_rate " + std::to_string(cfg.learning_rate) +
                                    ")");
            }
            ++step;
            const float c1 = 1.0f - std::pow(b1, static_cast<float>(step));
            const float c2 = 1.0f - std::pow(b2, static_cast<float>(step));
            auto update = [&](std::vector<float>& w, std::vector<float>& g, std::vector<float>& m, std::vector<float>& v) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                    w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                }
            };
            update(params.w1, grad.w1, m1.w1, m2.w1);
            update(params.b1, grad.b1, m1.b1, m2.b1);
            update(params.w2, grad.w2, m1.w2, m2.w2);
            update(params.b2, grad.b2, m1.b2, m2.b2);
            update(params.w3, grad.w3, m1.w3, m2.w3);
            update(params.b3, grad.b3, m1.b3, m2.b3);
        }
        const double loss = detail::mean_loss(params, xs, ys, train_idx);
        if (!std::isfinite(loss)) throw TrainingError("non-finite training loss after epoch " + std::to_string(epoch));
        const double acc = detail::accuracy_on(params, xs, ys, eval_idx);
        log.epochs.push_back({epoch, loss, acc});
        if (acc > best_acc) {
            best_acc = acc;
            best_epoch = epoch;
            best = params;
        }
    }

    model.params = std::move(best);
    model.meta.best_epoch = static_cast<std::uint32_t>(best_epoch);
    model.meta.validation_accuracy = best_acc;
    log.best_epoch = best_epoch;
    log.best_val_accuracy = best_acc;
    return {model, log};
}

// ---------------------------------------------------------------------------
// Model file: "EIMC", u32 version, u32 d, u32 h1, u32 h2, u64 seed, u32 best_epoch,
// i32 layer, f64 validation accuracy, then f32 arrays W1, b1, W2, b2, W3, b3.

inline constexpr std::uint32_t kModelVersion = 1;

inline std::vector<char> serialize_model(const ClassifierModel& m) {
    io::ByteWriter w;
    w.magic("EIMC");
    w.put(kModelVersion);
    w.put(static_cast<std::uint32_t>(m.params.d));
    w.put(static_cast<std::uint32_t>(m.params.h1));
    w.put(static_cast<std::uint32_t>(m.params.h2));
    w.put(m.meta.seed);
    w.put(m.meta.best_epoch);
    w.put(m.meta.layer);
    w.put(m.meta.validation_accuracy);
    m.params.for_each_block([&](const std::vector<float>& block) {
        for (float x : block) w.put(x);
    });
    return w.bytes();
}

inline void save_model(const ClassifierModel& m, const std::string& path) {
    const auto bytes = serialize_model(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ClassifierModel deserialize_model(std::vector<char> bytes) {
    io::ByteReader r(std::move(bytes), /*truncation_is_format=*/true);
    if (r.size() < 4 || !r.magic_matches("EIMC")) throw FormatError("not a classifier model file (bad magic)");
    if (const auto v = r.get<std::uint32_t>(); v != kModelVersion) {
        throw FormatError("model file version " + std::to_string(v) + " unsupported (expected " +
                          std::to_string(kModelVersion) + ")");
    }
    const std::uint64_t d = r.get<std::uint32_t>(), h1 = r.get<std::uint32_t>(), h2 = r.get<std::uint32_t>();
    ClassifierModel m;
    m.meta.seed = r.get<std::uint64_t>();
    m.meta.best_epoch = r.get<std::uint32_t>();
    m.meta.layer = r.get<std::int32_t>();
    m.meta.validation_accuracy = r.get<double>();
    if (d == 0 || h1 == 0 || h2 == 0) throw FormatError("model dimensions must be positive");
    const std::uint64_t floats = h1 * d + h1 + h2 * h1 + h2 + h2 + 1;
    if (floats * 4 != r.remaining()) {
        throw FormatError("model payload is " + std::to_string(r.remaining()) + " bytes, dimensions imply " +
                          std::to_string(floats * 4));
    }
    m.params = MlpParams<float>(d, h1, h2);
    m.params.for_each_block([&](std::vector<float>& block) {
        for (auto& x : block) {
            x = r.get<float>();
            if (!std::isfinite(x)) throw FormatError("non-finite parameter in model file");
        }
    });
    return m;
}

inline ClassifierModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open model file '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(std::move(bytes));
}

}  // namespace eiarag
