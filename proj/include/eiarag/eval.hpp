#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "eiarag/classifier.hpp"
#include "eiarag/concurrency.hpp"
#include "eiarag/dataset.hpp"
#include "eiarag/error.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/pipeline.hpp"
#include "eiarag/routers.hpp"

namespace eiarag {

/// 2x2 outcome counts: (retrieved?, correct?).
struct Quadrants {
    std::size_t retrieved_correct = 0;
    std::size_t retrieved_wrong = 0;
    std::size_t skipped_correct = 0;
    std::size_t skipped_wrong = 0;

    std::size_t total() const { return retrieved_correct + retrieved_wrong + skipped_correct + skipped_wrong; }
    std::size_t retrieved() const { return retrieved_correct + retrieved_wrong; }
    std::size_t correct() const { return retrieved_correct + skipped_correct; }

    friend bool operator==(const Quadrants&, const Quadrants&) = default;
};

inline double percent(std::size_t part, std::size_t n) {
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(n);
}

struct EvalReport {
    std::string policy;
    std::string dataset;
    double acc_percent = 0.0;
    double por_percent = 0.0;
    double mean_decision_ms = 0.0;
    double mean_end_to_end_ms = 0.0;
    Quadrants quadrants;
    std::size_t n = 0;
    std::size_t generation_calls_total = 0;
    std::size_t skipped = 0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"policy", r.policy},
            {"dataset", r.dataset},
            {"acc_percent", r.acc_percent},
            {"por_percent", r.por_percent},
            {"mean_decision_latency_ms", r.mean_decision_ms},
            {"mean_end_to_end_latency_ms", r.mean_end_to_end_ms},
            {"quadrants",
             {{"retrieved_correct", r.quadrants.retrieved_correct},
              {"retrieved_wrong", r.quadrants.retrieved_wrong},
              {"skipped_correct", r.quadrants.skipped_correct},
              {"skipped_wrong", r.quadrants.skipped_wrong}}},
            {"n", r.n},
            {"generation_calls_total", r.generation_calls_total},
            {"skipped", r.skipped}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.policy = j.at("policy").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.acc_percent = j.at("acc_percent").get<double>();
    r.por_percent = j.at("por_percent").get<double>();
    r.mean_decision_ms = j.at("mean_decision_latency_ms").get<double>();
    r.mean_end_to_end_ms = j.at("mean_end_to_end_latency_ms").get<double>();
    const auto& q = j.at("quadrants");
    r.quadrants = {q.at("retrieved_correct").get<std::size_t>(), q.at("retrieved_wrong").get<std::size_t>(),
                   q.at("skipped_correct").get<std::size_t>(), q.at("skipped_wrong").get<std::size_t>()};
    r.n = j.at("n").get<std::size_t>();
    r.generation_calls_total = j.at("generation_calls_total").get<std::size_t>();
    r.skipped = j.value("skipped", std::size_t{0});
    return r;
}

/// Throws if the report's ACC/POR disagree with its quadrant counts.
inline void check_report_identities(const EvalReport& r) {
    if (r.quadrants.total() != r.n) throw ValidationError("quadrant counts do not sum to n");
    if (percent(r.quadrants.correct(), r.n) != r.acc_percent) throw ValidationError("acc_percent disagrees with quadrants");
    if (percent(r.quadrants.retrieved(), r.n) != r.por_percent) throw ValidationError("por_percent disagrees with quadrants");
}

/// Methods,ACC(%),POR(%) table.
inline std::string reports_csv(const std::vector<EvalReport>& reports) {
    std::ostringstream out;
    out << "Methods,ACC(%),POR(%)\n" << std::fixed << std::setprecision(2);
    for (const auto& r : reports) out << r.policy << ',' << r.acc_percent << ',' << r.por_percent << '\n';
    return out.str();
}

struct EvalConfig {
    GenerationConfig generation;
    bool strip_punctuation = false;
    bool strict = false;
    std::size_t workers = 1;
};

struct QueryOutcome {
    RoutingDecision decision;
    GenerationOutcome generation;
    bool correct = false;
    std::chrono::nanoseconds end_to_end{0};
};

/// Route, optionally retrieve, generate and score one query.
inline QueryOutcome run_query(const Router& router, const QueryRecord& q, const Backends& b, const EvalConfig& cfg,
                              Clock& clock) {
    QueryOutcome out;
    const auto start = clock.now();
    out.decision = router.route(q);
    const auto decided = clock.now();
    out.decision.decision_latency = decided - start;
    out.generation = answer_with(q, out.decision.retrieve, b, cfg.generation);
    out.correct = answer_correct(out.generation.completion, q.answers, cfg.strip_punctuation);
    out.end_to_end = clock.now() - start;
    return out;
}

inline EvalReport evaluate(const Router& router, const QuerySet& test, const Backends& b, const EvalConfig& cfg,
                           Clock& clock) {
    struct Slot {
        std::optional<QueryOutcome> outcome;
        std::string error;
    };
    auto slots = parallel_map<Slot>(test.size(), cfg.workers, [&](std::size_t i) {
        Slot s;
        try {
            s.outcome = run_query(router, test[i], b, cfg, clock);
        } catch (const Error& e) {
            if (cfg.strict) throw;
            s.error = "query '" + test[i].id + "': " + e.what();
        }
        return s;
    });

    EvalReport r;
    r.policy = router.name();
    r.dataset = test.name();
    std::chrono::nanoseconds decision_sum{0}, total_sum{0};
    for (const auto& s : slots) {
        if (!s.outcome) {
            ++r.skipped;
            std::clog << "[eiarag] eval skipped " << s.error << '\n';
            continue;
        }
        const auto& o = *s.outcome;
        ++r.n;
        auto& cell = o.decision.retrieve ? (o.correct ? r.quadrants.retrieved_correct : r.quadrants.retrieved_wrong)
                                         : (o.correct ? r.quadrants.skipped_correct : r.quadrants.skipped_wrong);
        ++cell;
        r.generation_calls_total += static_cast<std::size_t>(o.decision.generation_calls_used) + 1;
        decision_sum += std::chrono::duration_cast<std::chrono::nanoseconds>(o.decision.decision_latency);
        total_sum += o.end_to_end;
    }
    r.acc_percent = percent(r.quadrants.correct(), r.n);
    r.por_percent = percent(r.quadrants.retrieved(), r.n);
    if (r.n > 0) {
        const auto n = static_cast<double>(r.n);
        r.mean_decision_ms = static_cast<double>(decision_sum.count()) / n / 1e6;
        r.mean_end_to_end_ms = static_cast<double>(total_sum.count()) / n / 1e6;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Layer sweep

struct ClassifierShape {
    std::size_t h1 = 256;
    std::size_t h2 = 64;
};

struct SweepInputs {
    const QuerySet& train;
    const QuerySet& test;
    /// Labels (and their correctness bits) do not depend on the layer; only
    /// the embeddings are recomputed per layer.
    const LabeledSet& labels;
    const Backends& backends;
    ClassifierShape shape;
    TrainConfig train_config;
    EmbeddingConfig embedding;
    EvalConfig eval;
    double threshold = 0.5;
};

struct LayerResult {
    int layer = 0;
    double acc_percent = 0.0;
    double por_percent = 0.0;
    double val_accuracy = 0.0;
};

/// Re-embeds the labeled questions at `layer`.
inline LabeledSet relabel_at_layer(const LabeledSet& labels, const QuerySet& queries, const EmbeddingProvider& provider,
                                   int layer, bool include_bos) {
    std::unordered_map<std::string, const QueryRecord*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;
    LabeledSet out = labels;
    for (auto& ex : out.examples) {
        auto it = by_id.find(ex.query_id);
        if (it == by_id.end()) throw ValidationError("labeled query '" + ex.query_id + "' missing from training set");
        ex.embedding = sentence_embedding(it->second->question, layer, provider, include_bos, ex.query_id);
    }
    return out;
}

/// Trains and evaluates one embedding-informed router per layer under
/// identical seeds and splits.
inline std::vector<LayerResult> sweep_layers(const std::vector<int>& layers, const SweepInputs& in, Clock& clock) {
    const auto& provider = in.backends.embedder;
    for (int layer : layers) {
        if (layer < 0 || layer > provider.max_layer()) {
            throw ValidationError("layer " + std::to_string(layer) + " unsupported: provider exposes layers 0.." +
                                  std::to_string(provider.max_layer()));
        }
    }
    std::vector<LayerResult> rows;
    for (int layer : layers) {
        const auto data = relabel_at_layer(in.labels, in.train, provider, layer, in.embedding.include_bos);
        auto model = init_model(provider.dim(), in.shape.h1, in.shape.h2, in.train_config.seed);
        auto [trained, log] = train(model, data, in.train_config);
        EmbeddingConfig emb = in.embedding;
        emb.layer = layer;
        EmbeddingRouter router(trained, provider, in.threshold, emb);
        const auto report = evaluate(router, in.test, in.backends, in.eval, clock);
        rows.push_back({layer, report.acc_percent, report.por_percent, log.best_val_accuracy});
    }
    return rows;
}

inline std::string layers_csv(const std::vector<LayerResult>& rows) {
    std::ostringstream out;
    out << "layer,acc_percent,por_percent,val_accuracy\n" << std::setprecision(17);
    for (const auto& r : rows) out << r.layer << ',' << r.acc_percent << ',' << r.por_percent << ',' << r.val_accuracy << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// 2-D projection for visual inspection

struct VizRow {
    std::string query_id;
    double x = 0.0;
    double y = 0.0;
    std::optional<double> log_freq;
    std::optional<std::string> relation;
};

/// Projects rows onto their top-2 principal components. Returns an n x 2
/// matrix; each component's first nonzero loading is made positive. Rows
/// with zero total variance project to the origin.
inline Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& data, bool* degenerate = nullptr) {
    const Eigen::Index n = data.rows(), d = data.cols();
    const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, 2);
    if (degenerate) *degenerate = false;
    if (centered.squaredNorm() == 0.0) {
        if (degenerate) *degenerate = true;
        return out;
    }
    Eigen::MatrixXd components(d, 2);
    if (d <= n) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered / static_cast<double>(n - 1));
        for (int k = 0; k < 2; ++k) {
            components.col(k) = k < d ? Eigen::VectorXd(eig.eigenvectors().col(d - 1 - k)) : Eigen::VectorXd::Zero(d);
        }
    } else {
        // same eigenvectors via the n x n Gram matrix when the dimension is large
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered * centered.transpose());
        for (int k = 0; k < 2; ++k) {
            Eigen::VectorXd v = k < n ? Eigen::VectorXd(centered.transpose() * eig.eigenvectors().col(n - 1 - k))
                                      : Eigen::VectorXd::Zero(d);
            const double norm = v.norm();
            components.col(k) = norm > 1e-12 ? Eigen::VectorXd(v / norm) : Eigen::VectorXd::Zero(d);
        }
    }
    for (int k = 0; k < 2; ++k) {
        for (Eigen::Index i = 0; i < d; ++i) {
            const double v = components(i, k);
            if (std::abs(v) > 1e-12) {
                if (v < 0) components.col(k) *= -1.0;
                break;
            }
        }
    }
    out = centered * components;
    return out;
}

inline std::vector<VizRow> emit_viz(const std::vector<SentenceEmbedding>& embeddings, const QuerySet& queries,
                                    std::vector<std::string>* warnings = nullptr) {
    if (embeddings.size() < 2) throw ValidationError("visualization needs at least 2 embeddings");
    std::unordered_map<std::string, const QueryRecord*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;
    const auto d = embeddings.front().values.size();
    Eigen::MatrixXd data(static_cast<Eigen::Index>(embeddings.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].values.size() != d) throw ValidationError("embeddings differ in dimension");
        if (!by_id.count(embeddings[i].query_id)) {
            throw ValidationError("embedding '" + embeddings[i].query_id + "' has no matching query");
        }
        for (std::size_t c = 0; c < d; ++c) data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = embeddings[i].values[c];
    }
    bool degenerate = false;
    const auto xy = pca_2d(data, &degenerate);
    if (degenerate) {
        const std::string msg = "all embeddings are identical; projecting every row to the origin";
        std::clog << "[eiarag] warning: " << msg << '\n';
        if (warnings) warnings->push_back(msg);
    }
    std::vector<VizRow> rows;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const auto* q = by_id.at(embeddings[i].query_id);
        VizRow row{q->id, xy(static_cast<Eigen::Index>(i), 0), xy(static_cast<Eigen::Index>(i), 1), std::nullopt, q->relation};
        if (q->entity_freq) row.log_freq = std::log1p(*q->entity_freq);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
}

}  // namespace detail

/// Header `query_id,x,y,log_freq,relation`; missing values are empty fields.
inline std::string viz_csv(const std::vector<VizRow>& rows) {
    std::ostringstream out;
    out << "query_id,x,y,log_freq,relation\n" << std::setprecision(10);
    for (const auto& r : rows) {
        out << detail::csv_field(r.query_id) << ',' << r.x << ',' << r.y << ',';
        if (r.log_freq) out << *r.log_freq;
        out << ',';
        if (r.relation) out << detail::csv_field(*r.relation);
        out << '\n';
    }
    return out.str();
}

}  // namespace eiarag
