#pragma once

#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "eiarag/concurrency.hpp"
#include "eiarag/dataset.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/error.hpp"
#include "eiarag/pipeline.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

/// True iff some gold answer, lowercased and whitespace-collapsed, occurs in
/// the equally normalized prediction.
inline bool answer_correct(std::string_view prediction, const std::vector<std::string>& answers,
                           bool strip_punctuation = false) {
    if (answers.empty()) throw ValidationError("answer list is empty");
    const auto pred = text::normalize_answer(prediction, strip_punctuation);
    for (const auto& a : answers) {
        const auto gold = text::normalize_answer(a, strip_punctuation);
        if (!gold.empty() && pred.find(gold) != std::string::npos) return true;
    }
    return false;
}

/// Outcome of answering one question both ways.
struct Correctness {
    bool nr_correct = false;  ///< correct without retrieval
    bool fr_correct = false;  ///< correct with retrieval

    bool retrieval_helps() const { return fr_correct && !nr_correct; }

    friend bool operator==(const Correctness&, const Correctness&) = default;
};

struct LabeledExample {
    std::string query_id;
    SentenceEmbedding embedding;
    int label = 0;
    bool nr_correct = false;
    bool fr_correct = false;

    friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct LabeledSet {
    std::vector<LabeledExample> examples;

    std::size_t size() const { return examples.size(); }

    friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

struct LabelConfig {
    GenerationConfig generation;
    EmbeddingConfig embedding;
    bool strip_punctuation = false;
    /// Abort on the first backend failure instead of skipping the query.
    bool strict = false;
    std::size_t workers = 1;
};

struct LabelSummary {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t skipped = 0;
    std::vector<std::string> skip_reasons;
};

/// Answers `q` without and with retrieval (exactly two generation calls).
inline Correctness annotate_query(const QueryRecord& q, const Backends& b, const LabelConfig& cfg) {
    const auto nr = answer_with(q, false, b, cfg.generation);
    const auto fr = answer_with(q, true, b, cfg.generation);
    return {answer_correct(nr.completion, q.answers, cfg.strip_punctuation),
            answer_correct(fr.completion, q.answers, cfg.strip_punctuation)};
}

/// Label is 1 exactly when retrieval turns a wrong answer into a right one.
inline LabeledExample make_label(const QueryRecord& q, const Backends& b, const LabelConfig& cfg) {
    try {
        const auto c = annotate_query(q, b, cfg);
        LabeledExample ex;
        ex.query_id = q.id;
        ex.nr_correct = c.nr_correct;
        ex.fr_correct = c.fr_correct;
        ex.label = c.retrieval_helps() ? 1 : 0;
        ex.embedding = sentence_embedding(q.question, cfg.embedding.layer, b.embedder, cfg.embedding.include_bos, q.id);
        return ex;
    } catch (const QueryError&) {
        throw;
    } catch (const Error& e) {
        throw QueryError(q.id, e.what());
    }
}

namespace detail {

template <typename T, typename Fn>
std::vector<T> run_skipping(const QuerySet& queries, const LabelConfig& cfg, LabelSummary& summary, Fn&& fn) {
    struct Slot {
        std::optional<T> value;
        std::string error;
    };
    auto slots = parallel_map<Slot>(queries.size(), cfg.workers, [&](std::size_t i) {
        Slot s;
        try {
            s.value = fn(queries[i]);
        } catch (const QueryError& e) {
            if (cfg.strict) throw;
            s.error = e.what();
        }
        return s;
    });
    std::vector<T> out;
    for (auto& s : slots) {
        if (s.value) {
            out.push_back(std::move(*s.value));
        } else {
            ++summary.skipped;
            summary.skip_reasons.push_back(s.error);
            std::clog << "[eiarag] skipped " << s.error << '\n';
        }
    }
    return out;
}

}  // namespace detail

inline LabeledSet build_labeled_set(const QuerySet& train, const Backends& b, const LabelConfig& cfg,
                                    LabelSummary* summary_out = nullptr) {
    if (train.empty()) throw ValidationError("cannot label an empty training set");
    if (cfg.embedding.layer < 0 || cfg.embedding.layer > b.embedder.max_layer()) {
        throw ValidationError("layer " + std::to_string(cfg.embedding.layer) + " unsupported: provider exposes layers 0.." +
                              std::to_string(b.embedder.max_layer()));
    }
    LabelSummary summary;
    LabeledSet set;
    set.examples = detail::run_skipping<LabeledExample>(train, cfg, summary,
                                                        [&](const QueryRecord& q) { return make_label(q, b, cfg); });
    if (set.examples.empty()) throw Error("labeling", "every query failed during labeling");
    for (const auto& ex : set.examples) (ex.label ? summary.positives : summary.negatives)++;
    if (summary_out) *summary_out = std::move(summary);
    return set;
}

/// Correctness of both paths for every query (the oracle's annotation pass).
inline std::map<std::string, Correctness> annotate_query_set(const QuerySet& queries, const Backends& b,
                                                             const LabelConfig& cfg, LabelSummary* summary_out = nullptr) {
    LabelSummary summary;
    using Pair = std::pair<std::string, Correctness>;
    auto rows = detail::run_skipping<Pair>(queries, cfg, summary, [&](const QueryRecord& q) {
        try {
            return Pair{q.id, annotate_query(q, b, cfg)};
        } catch (const QueryError&) {
            throw;
        } catch (const Error& e) {
            throw QueryError(q.id, e.what());
        }
    });
    if (summary_out) *summary_out = std::move(summary);
    return {rows.begin(), rows.end()};
}

inline std::map<std::string, Correctness> correctness_of(const LabeledSet& set) {
    std::map<std::string, Correctness> out;
    for (const auto& ex : set.examples) out[ex.query_id] = {ex.nr_correct, ex.fr_correct};
    return out;
}

// LabeledSet persistence: JSONL rows plus an embedding cache keyed by query_id.

inline void save_labeled_set(const LabeledSet& set, const std::string& jsonl_path, const std::string& cache_path) {
    std::vector<nlohmann::json> rows;
    std::vector<SentenceEmbedding> embeddings;
    for (const auto& ex : set.examples) {
        rows.push_back({{"query_id", ex.query_id}, {"label", ex.label}, {"nr_correct", ex.nr_correct},
                        {"fr_correct", ex.fr_correct}});
        embeddings.push_back(ex.embedding);
        embeddings.back().query_id = ex.query_id;
    }
    write_jsonl(jsonl_path, rows);
    write_embedding_cache(embeddings, cache_path);
}

inline std::vector<std::pair<std::string, Correctness>> load_label_rows(const std::string& jsonl_path,
                                                                         std::vector<int>* labels = nullptr) {
    std::vector<std::pair<std::string, Correctness>> rows;
    for_each_jsonl(jsonl_path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            const auto label = j.at("label").get<int>();
            Correctness c{j.at("nr_correct").get<bool>(), j.at("fr_correct").get<bool>()};
            if (label != (c.retrieval_helps() ? 1 : 0)) throw ParseError("label disagrees with correctness bits", line);
            rows.emplace_back(j.at("query_id").get<std::string>(), c);
            if (labels) labels->push_back(label);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line);
        }
    });
    return rows;
}

inline LabeledSet load_labeled_set(const std::string& jsonl_path, const std::string& cache_path) {
    std::vector<int> labels;
    const auto rows = load_label_rows(jsonl_path, &labels);
    const auto cache = read_embedding_cache(cache_path);
    std::unordered_map<std::string, const SentenceEmbedding*> by_id;
    for (const auto& e : cache.records) by_id[e.query_id] = &e;
    LabeledSet set;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& [id, c] = rows[i];
        if (!seen.insert(id).second) throw ValidationError("duplicate query_id '" + id + "' in labeled set");
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ValidationError("no cached embedding for labeled query '" + id + "'");
        set.examples.push_back({id, *it->second, labels[i], c.nr_correct, c.fr_correct});
    }
    return set;
}

}  // namespace eiarag
