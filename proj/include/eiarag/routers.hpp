#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiarag/classifier.hpp"
#include "eiarag/concurrency.hpp"
#include "eiarag/dataset.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/error.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/llm.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

struct RoutingDecision {
    bool retrieve = false;
    std::optional<double> score;
    std::string policy;
    std::chrono::nanoseconds decision_latency{0};
    int generation_calls_used = 0;
};

/// A retrieve/skip policy. Routers are immutable once built and may be
/// called concurrently.
class Router {
public:
    virtual ~Router() = default;
    virtual std::string name() const = 0;
    virtual RoutingDecision route(const QueryRecord& q) const = 0;
};

inline RoutingDecision route_none(const QueryRecord&) { return {false, std::nullopt, "none"}; }
inline RoutingDecision route_all(const QueryRecord&) { return {true, std::nullopt, "all"}; }

class NoRetrievalRouter final : public Router {
public:
    std::string name() const override { return "none"; }
    RoutingDecision route(const QueryRecord& q) const override { return route_none(q); }
};

class FullRetrievalRouter final : public Router {
public:
    std::string name() const override { return "all"; }
    RoutingDecision route(const QueryRecord& q) const override { return route_all(q); }
};

// ---------------------------------------------------------------------------
// Oracle

inline RoutingDecision route_oracle(const QueryRecord&, const std::optional<Correctness>& c) {
    if (!c) throw ValidationError("oracle routing needs both correctness bits for the query");
    return {c->retrieval_helps(), std::nullopt, "oracle"};
}

class OracleRouter final : public Router {
public:
    explicit OracleRouter(std::map<std::string, Correctness> annotations) : annotations_(std::move(annotations)) {}

    std::string name() const override { return "oracle"; }

    RoutingDecision route(const QueryRecord& q) const override {
        auto it = annotations_.find(q.id);
        if (it == annotations_.end()) throw ValidationError("no correctness annotation for query '" + q.id + "'");
        return route_oracle(q, it->second);
    }

private:
    std::map<std::string, Correctness> annotations_;
};

// ---------------------------------------------------------------------------
// Frequency thresholds

struct FrequencyThresholds {
    std::map<std::string, double> by_relation;
    double fallback = std::numeric_limits<double>::infinity();

    double threshold_for(const std::optional<std::string>& relation) const {
        if (relation) {
            if (auto it = by_relation.find(*relation); it != by_relation.end()) return it->second;
        }
        return fallback;
    }
};

namespace detail {

struct FreqOutcome {
    double freq;
    Correctness c;
};

/// Best threshold for "retrieve iff freq < t" over the distinct frequencies
/// plus -inf and +inf; ties go to the smaller threshold.
inline std::pair<double, std::size_t> best_threshold(std::vector<FreqOutcome> rows) {
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.freq < b.freq; });
    // accuracy(t) = #fr_correct among freq < t + #nr_correct among freq >= t, swept in one pass
    std::size_t correct = 0;
    for (const auto& r : rows) correct += r.c.nr_correct;
    double best_t = -std::numeric_limits<double>::infinity();
    std::size_t best_correct = correct;
    std::size_t i = 0;
    while (i < rows.size()) {
        const double t = rows[i].freq;
        // moving the threshold up to t retrieves nothing new, so accuracy at t equals the running count
        if (correct > best_correct) {
            best_correct = correct;
            best_t = t;
        }
        while (i < rows.size() && rows[i].freq == t) {
            correct = correct - rows[i].c.nr_correct + rows[i].c.fr_correct;
            ++i;
        }
    }
    if (correct > best_correct) {
        best_correct = correct;
        best_t = std::numeric_limits<double>::infinity();
    }
    return {best_t, best_correct};
}

}  // namespace detail

/// Per-relation brute-force search. `fallback` is fitted on all rows pooled.
/// Queries lacking a frequency or an annotation are ignored.
inline FrequencyThresholds fit_frequency_thresholds(const QuerySet& train,
                                                    const std::map<std::string, Correctness>& correctness) {
    std::map<std::string, std::vector<detail::FreqOutcome>> groups;
    std::vector<detail::FreqOutcome> pooled;
    for (const auto& q : train) {
        if (!q.entity_freq) continue;
        auto it = correctness.find(q.id);
        if (it == correctness.end()) continue;
        detail::FreqOutcome row{*q.entity_freq, it->second};
        pooled.push_back(row);
        if (q.relation) groups[*q.relation].push_back(row);
    }
    if (pooled.empty()) {
        throw ValidationError(
            "no training query carries both an entity frequency and a correctness annotation; "
            "frequency-threshold routing is not applicable to this dataset");
    }
    FrequencyThresholds out;
    for (auto& [relation, rows] : groups) out.by_relation[relation] = detail::best_threshold(std::move(rows)).first;
    out.fallback = detail::best_threshold(std::move(pooled)).first;
    return out;
}

inline FrequencyThresholds fit_frequency_thresholds(const QuerySet& train, const LabeledSet& labels) {
    return fit_frequency_thresholds(train, correctness_of(labels));
}

inline RoutingDecision route_frequency(const QueryRecord& q, const FrequencyThresholds& thresholds) {
    if (!q.entity_freq) throw ValidationError("query '" + q.id + "' has no entity frequency");
    const double t = thresholds.threshold_for(q.relation);
    return {*q.entity_freq < t, *q.entity_freq, "darag"};
}

class FrequencyRouter final : public Router {
public:
    explicit FrequencyRouter(FrequencyThresholds t) : thresholds_(std::move(t)) {}
    std::string name() const override { return "darag"; }
    RoutingDecision route(const QueryRecord& q) const override { return route_frequency(q, thresholds_); }
    const FrequencyThresholds& thresholds() const { return thresholds_; }

private:
    FrequencyThresholds thresholds_;
};

namespace detail {

inline nlohmann::json threshold_value(double t) {
    if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
    return t;
}

inline double threshold_from(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw FormatError("threshold must be a number, \"inf\" or \"-inf\"");
}

}  // namespace detail

/// `{"<relation>": number, ..., "default": number}`; infinities are written
/// as the strings "inf" / "-inf".
inline nlohmann::json to_json(const FrequencyThresholds& t) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [rel, v] : t.by_relation) j[rel] = detail::threshold_value(v);
    j["default"] = detail::threshold_value(t.fallback);
    return j;
}

inline FrequencyThresholds thresholds_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("default")) throw FormatError("thresholds file needs a \"default\" entry");
    FrequencyThresholds t;
    for (const auto& [key, value] : j.items()) {
        if (key == "default") {
            t.fallback = detail::threshold_from(value);
        } else {
            t.by_relation[key] = detail::threshold_from(value);
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Prompting routers

enum class PromptVariant { Vanilla, Taare };

struct DecisionPrompts {
    std::string vanilla =
        "Decide whether answering the question below requires looking up external information, or whether "
        "you already know the answer. Reply with Yes if retrieval is needed and No otherwise.\n"
        "Question: {question}\n"
        "Retrieval needed:";
    std::string taare =
        "Today's date is {date}. Some questions depend on recent events or facts that may have changed after "
        "your training data was collected. Decide whether answering the question below requires looking up "
        "external information. Reply with Yes if retrieval is needed and No otherwise.\n"
        "Question: {question}\n"
        "Retrieval needed:";

    const std::string& for_variant(PromptVariant v) const { return v == PromptVariant::Taare ? taare : vanilla; }
};

/// Fills `{question}` and `{date}`.
inline std::string render_decision_prompt(const std::string& tmpl, const std::string& question, const std::string& date) {
    return text::replace_all(text::replace_all(tmpl, "{date}", date), "{question}", question);
}

/// Retrieve unless the first standalone "yes"/"no" word is "no".
inline bool parse_retrieval_answer(std::string_view completion) {
    const auto words = text::tokenize(completion);
    for (const auto& w : words) {
        if (w == "yes") return true;
        if (w == "no") return false;
    }
    return true;
}

inline constexpr int kDecisionMaxNewTokens = 5;

inline RoutingDecision route_prompted(const QueryRecord& q, GenerationClient& client, PromptVariant variant,
                                      Clock& clock, const DecisionPrompts& prompts = {},
                                      int max_new_tokens = kDecisionMaxNewTokens) {
    const auto prompt = render_decision_prompt(prompts.for_variant(variant), q.question, clock.today());
    const auto reply = client.generate(prompt, max_new_tokens);
    RoutingDecision d;
    d.retrieve = parse_retrieval_answer(reply);
    d.policy = variant == PromptVariant::Taare ? "parag-taare" : "parag-vanilla";
    d.generation_calls_used = 1;
    return d;
}

class PromptRouter final : public Router {
public:
    PromptRouter(GenerationClient& client, PromptVariant variant, Clock& clock, DecisionPrompts prompts = {},
                 int max_new_tokens = kDecisionMaxNewTokens)
        : client_(client), variant_(variant), clock_(clock), prompts_(std::move(prompts)), max_new_tokens_(max_new_tokens) {}

    std::string name() const override { return variant_ == PromptVariant::Taare ? "parag-taare" : "parag-vanilla"; }

    RoutingDecision route(const QueryRecord& q) const override {
        return route_prompted(q, client_, variant_, clock_, prompts_, max_new_tokens_);
    }

private:
    GenerationClient& client_;
    PromptVariant variant_;
    Clock& clock_;
    DecisionPrompts prompts_;
    int max_new_tokens_;
};

// ---------------------------------------------------------------------------
// Embedding-informed router

inline RoutingDecision route_embedding(const QueryRecord& q, const ClassifierModel& model,
                                       const EmbeddingProvider& provider, double threshold = 0.5,
                                       const EmbeddingConfig& emb = {}) {
    if (provider.dim() != model.input_dim()) {
        throw ValidationError("provider dimension " + std::to_string(provider.dim()) + " does not match model input " +
                              std::to_string(model.input_dim()));
    }
    const auto x = sentence_embedding(q.question, emb.layer, provider, emb.include_bos, q.id);
    const double p = forward(model, x);
    RoutingDecision d;
    d.retrieve = decide(model, x, threshold) == 1;
    d.score = p;
    d.policy = "ei";
    return d;
}

class EmbeddingRouter final : public Router {
public:
    EmbeddingRouter(const ClassifierModel& model, const EmbeddingProvider& provider, double threshold = 0.5,
                    EmbeddingConfig emb = {})
        : model_(model), provider_(provider), threshold_(threshold), emb_(emb) {
        if (provider.dim() != model.input_dim()) {
            throw ValidationError("provider dimension " + std::to_string(provider.dim()) +
                                  " does not match model input " + std::to_string(model.input_dim()));
        }
        if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie strictly between 0 and 1");
    }

    std::string name() const override { return "ei"; }

    RoutingDecision route(const QueryRecord& q) const override {
        return route_embedding(q, model_, provider_, threshold_, emb_);
    }

private:
    const ClassifierModel& model_;
    const EmbeddingProvider& provider_;
    double threshold_;
    EmbeddingConfig emb_;
};

}  // namespace eiarag
