#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "eiarag/dataset.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/error.hpp"
#include "eiarag/random.hpp"
#include "eiarag/retrieval.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

/// Greedy text-generation backend. `generate` counts every call, so the
/// number of LLM invocations made by any policy is observable.
class GenerationClient {
public:
    virtual ~GenerationClient() = default;

    virtual std::string name() const = 0;

    std::string generate(const std::string& prompt, int max_new_tokens) {
        if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be at least 1");
        calls_.fetch_add(1, std::memory_order_relaxed);
        return complete(prompt, max_new_tokens);
    }

    std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }

protected:
    virtual std::string complete(const std::string& prompt, int max_new_tokens) = 0;

private:
    std::atomic<std::uint64_t> calls_{0};
};

inline std::string generate(GenerationClient& client, const std::string& prompt, int max_new_tokens) {
    return client.generate(prompt, max_new_tokens);
}

/// Keeps the first `max_words` whitespace-separated words.
inline std::string truncate_words(std::string_view s, int max_words) {
    const auto words = text::split_whitespace(s);
    std::string out;
    for (std::size_t i = 0; i < words.size() && i < static_cast<std::size_t>(max_words); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

/// Answers from a table keyed on the FNV-1a hash of the full prompt, falling
/// back to a fixed string or a callback.
class StubGenerationClient final : public GenerationClient {
public:
    using Responder = std::function<std::string(const std::string& prompt)>;

    explicit StubGenerationClient(std::string fallback = "I don't know.") : fallback_(std::move(fallback)) {}
    explicit StubGenerationClient(Responder responder) : responder_(std::move(responder)) {}

    void set(const std::string& prompt, std::string answer) { table_[fnv1a(prompt)] = std::move(answer); }

    std::string name() const override { return "stub"; }

protected:
    std::string complete(const std::string& prompt, int max_new_tokens) override {
        if (auto it = table_.find(fnv1a(prompt)); it != table_.end()) return truncate_words(it->second, max_new_tokens);
        return truncate_words(responder_ ? responder_(prompt) : fallback_, max_new_tokens);
    }

private:
    std::unordered_map<std::uint64_t, std::string> table_;
    std::string fallback_;
    Responder responder_;
};

// ---------------------------------------------------------------------------
// Prompts

struct Exemplar {
    std::string question;
    std::string answer;

    friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

enum class PassagePlacement { BeforeExemplars, AfterExemplars };

struct PromptSpec {
    std::vector<Exemplar> exemplars;
    std::vector<Passage> passages;
    std::string question;
    int max_new_tokens = 32;
    PassagePlacement placement = PassagePlacement::BeforeExemplars;
};

namespace detail {

inline std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\r', ' ');
    return out;
}

}  // namespace detail

/// Context lines, `Q: <q> A: <a>` exemplar lines, then the open `Q: <question> A:`.
inline std::string build_prompt(const PromptSpec& spec) {
    std::string out;
    auto line = [&](const std::string& s) {
        out += s;
        out += '\n';
    };
    auto passages = [&] {
        for (const auto& p : spec.passages) line("Context: " + detail::one_line(p.text));
    };
    if (spec.placement == PassagePlacement::BeforeExemplars) passages();
    for (const auto& ex : spec.exemplars) {
        line("Q: " + detail::one_line(ex.question) + " A: " + detail::one_line(ex.answer));
    }
    if (spec.placement == PassagePlacement::AfterExemplars) passages();
    out += "Q: " + detail::one_line(spec.question) + " A:";
    return out;
}

/// Few-shot exemplar choice. For a question with a relation, one exemplar is
/// drawn for every other relation present in the pool; otherwise `shots`
/// exemplars are drawn from the whole pool. Draws depend only on the seed, so
/// every question (and every backend) sees the same exemplar for a relation.
/// The question itself is never its own exemplar.
class ExemplarSelector {
public:
    ExemplarSelector() = default;

    ExemplarSelector(const QuerySet& pool, std::size_t shots, std::uint64_t seed) : shots_(shots) {
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng(seed).shuffle(order);
        for (auto i : order) {
            const auto& r = pool[i];
            Entry e{r.id, {r.question, r.answers.front()}};
            global_.push_back(e);
            if (r.relation) by_relation_[*r.relation].push_back(e);
        }
    }

    std::vector<Exemplar> select(const QueryRecord& q) const {
        std::vector<Exemplar> out;
        if (q.relation && !by_relation_.empty()) {
            for (const auto& t : kRelationTemplates) {
                if (out.size() >= shots_) break;
                if (t.relation == *q.relation) continue;
                auto it = by_relation_.find(std::string(t.relation));
                if (it == by_relation_.end()) continue;
                for (const auto& e : it->second) {
                    if (e.id != q.id) {
                        out.push_back(e.exemplar);
                        break;
                    }
                }
            }
            return out;
        }
        for (const auto& e : global_) {
            if (out.size() >= shots_) break;
            if (e.id != q.id) out.push_back(e.exemplar);
        }
        return out;
    }

private:
    struct Entry {
        std::string id;
        Exemplar exemplar;
    };
    std::size_t shots_ = 15;
    std::vector<Entry> global_;
    std::unordered_map<std::string, std::vector<Entry>> by_relation_;
};

// ---------------------------------------------------------------------------
// Stub world: a synthetic universe with known per-query behavior.

struct StubQuery {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    bool knows_parametric = false;
    bool answer_in_corpus = false;
    std::optional<double> entity_freq;
    std::optional<std::string> relation;

    bool retrieval_helps() const { return answer_in_corpus && !knows_parametric; }
};

struct StubWorldSpec {
    std::vector<StubQuery> queries;
    std::uint64_t seed = 0;
    std::size_t dim = 16;
    int max_layer = 4;
    double noise = 1.0;
    /// Magnitude of the two signal coordinates (0: knows_parametric, 1: answer_in_corpus).
    double signal_strength = 1.5;
    int signal_min_layer = 1;
    /// Probability that the stub's yes/no self-assessment is inverted.
    double decision_flip = 0.15;
    std::string wrong_answer = "I am not sure.";
};

/// Generation stub driven by the world description: QA prompts (`Q: ... A:` last
/// line) are answered correctly without context iff knows_parametric and
/// with context iff answer_in_corpus. Any other prompt is treated as a
/// retrieval-necessity question about the query text it mentions.
class StubWorldClient final : public GenerationClient {
public:
    explicit StubWorldClient(const StubWorldSpec& spec)
        : queries_(spec.queries), seed_(spec.seed), flip_(spec.decision_flip), wrong_(spec.wrong_answer) {
        for (std::size_t i = 0; i < queries_.size(); ++i) by_question_[queries_[i].question] = i;
    }

    std::string name() const override { return "stub-world"; }

    /// The yes/no verdict the stub gives when asked whether `q` needs retrieval.
    bool says_retrieve(const StubQuery& q) const {
        const bool flip = Rng(mix_seed(seed_ ^ 0xD1CE, fnv1a(q.id))).bernoulli(flip_);
        return (!q.knows_parametric) != flip;
    }

protected:
    std::string complete(const std::string& prompt, int max_new_tokens) override {
        const auto last_break = prompt.rfind('\n');
        const std::string_view last = std::string_view(prompt).substr(last_break == std::string::npos ? 0 : last_break + 1);
        if (last.starts_with("Q: ") && last.ends_with(" A:")) {
            const auto question = std::string(last.substr(3, last.size() - 6));
            auto it = by_question_.find(question);
            if (it == by_question_.end()) return truncate_words(wrong_, max_new_tokens);
            const auto& q = queries_[it->second];
            const bool has_context = prompt.starts_with("Context: ") || prompt.find("\nContext: ") != std::string::npos;
            const bool correct = has_context ? q.answer_in_corpus : q.knows_parametric;
            return truncate_words(correct ? q.answers.front() + "." : wrong_, max_new_tokens);
        }
        const StubQuery* best = nullptr;
        for (const auto& q : queries_) {
            if (prompt.find(q.question) != std::string::npos && (!best || q.question.size() > best->question.size())) {
                best = &q;
            }
        }
        const bool yes = best ? says_retrieve(*best) : true;
        return truncate_words(yes ? "Yes, retrieval is needed." : "No, I can answer directly.", max_new_tokens);
    }

private:
    std::vector<StubQuery> queries_;
    std::unordered_map<std::string, std::size_t> by_question_;
    std::uint64_t seed_;
    double flip_;
    std::string wrong_;
};

struct StubWorld {
    std::unique_ptr<StubWorldClient> client;
    std::unique_ptr<StubEmbeddingProvider> embedder;
    std::vector<Passage> corpus;
    QuerySet queries;
};

inline QueryRecord to_record(const StubQuery& q) {
    QueryRecord r;
    r.id = q.id;
    r.question = q.question;
    r.answers = q.answers;
    r.entity_freq = q.entity_freq;
    r.relation = q.relation;
    return r;
}

inline StubWorld make_stub_world(const StubWorldSpec& spec) {
    StubWorld world;
    world.client = std::make_unique<StubWorldClient>(spec);
    StubEmbeddingProvider::Options opts;
    opts.dim = spec.dim;
    opts.max_layer = spec.max_layer;
    opts.seed = spec.seed;
    opts.noise = spec.noise;
    opts.signal_min_layer = spec.signal_min_layer;
    world.embedder = std::make_unique<StubEmbeddingProvider>(opts);
    if (spec.dim < 2) throw ValidationError("stub world needs at least 2 embedding dimensions");

    std::vector<QueryRecord> records;
    for (const auto& q : spec.queries) {
        std::vector<float> signal(spec.dim, 0.0f);
        const auto a = static_cast<float>(spec.signal_strength);
        signal[0] = q.knows_parametric ? a : -a;
        signal[1] = q.answer_in_corpus ? a : -a;
        world.embedder->set_signal(q.question, std::move(signal));

        Passage p;
        p.doc_id = "doc-" + q.id;
        p.text = q.answer_in_corpus ? q.question + " Answer: " + q.answers.front() + "."
                                    : q.question + " No answer is recorded here.";
        world.corpus.push_back(std::move(p));
        records.push_back(to_record(q));
    }
    world.queries = QuerySet("stub-world", std::move(records));
    return world;
}

inline StubQuery stub_query_from_json(const nlohmann::json& j) {
    auto r = record_from_json(j);
    StubQuery q;
    q.id = r.id;
    q.question = r.question;
    q.answers = r.answers;
    q.entity_freq = r.entity_freq;
    q.relation = r.relation;
    auto flag = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_boolean()) {
            throw std::invalid_argument(std::string("missing boolean field '") + key + "'");
        }
        return j[key].get<bool>();
    };
    q.knows_parametric = flag("knows_parametric");
    q.answer_in_corpus = flag("answer_in_corpus");
    return q;
}

inline nlohmann::json to_json(const StubQuery& q) {
    auto j = to_json(to_record(q));
    j["knows_parametric"] = q.knows_parametric;
    j["answer_in_corpus"] = q.answer_in_corpus;
    return j;
}

/// Stub world JSONL: {"id", "question", "answers", "knows_parametric",
/// "answer_in_corpus"} plus the optional QueryRecord fields.
inline std::vector<StubQuery> load_stub_world(const std::string& path) {
    std::vector<StubQuery> queries;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
        try {
            queries.push_back(stub_query_from_json(j));
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line);
        }
    });
    return queries;
}

inline void save_stub_world(const std::vector<StubQuery>& queries, const std::string& path) {
    std::vector<nlohmann::json> rows;
    for (const auto& q : queries) rows.push_back(to_json(q));
    write_jsonl(path, rows);
}

struct SynthesisOptions {
    std::size_t n = 200;
    std::uint64_t seed = 0;
    double p_knows = 0.5;
    double p_in_corpus = 0.7;
    /// Attach relations and entity frequencies that track knows_parametric.
    bool entity_centric = true;
};

/// Random world: each query draws its two flags independently. With
/// `entity_centric`, known entities get frequencies around 10^4 and unknown
/// ones around 10^2 (log-normal spread), mimicking the popularity signal.
inline std::vector<StubQuery> synthesize_stub_queries(const SynthesisOptions& opts) {
    Rng rng(opts.seed);
    std::vector<StubQuery> out;
    out.reserve(opts.n);
    for (std::size_t i = 0; i < opts.n; ++i) {
        StubQuery q;
        q.id = "q" + std::to_string(i);
        const auto& tmpl = kRelationTemplates[rng.below(kRelationTemplates.size())];
        const auto subject = "Entity" + std::to_string(i) + "x" + std::to_string(rng.below(100000));
        q.knows_parametric = rng.bernoulli(opts.p_knows);
        q.answer_in_corpus = rng.bernoulli(opts.p_in_corpus);
        q.answers = {"answer" + std::to_string(i) + "z" + std::to_string(rng.below(100000))};
        const double log10_freq = (q.knows_parametric ? 4.0 : 2.0) + 0.6 * rng.normal();
        if (opts.entity_centric) {
            q.question = render_template(tmpl.relation, subject);
            q.relation = std::string(tmpl.relation);
            q.entity_freq = std::round(std::pow(10.0, log10_freq));
        } else {
            q.question = "Which item is paired with " + subject + " in record " + std::to_string(i) + "?";
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace eiarag
