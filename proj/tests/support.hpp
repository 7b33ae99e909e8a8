#pragma once

// Independent oracles and fixtures shared by the unit suite and the
// acceptance runner. Nothing here may call into the code path it checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "eiarag/classifier.hpp"
#include "eiarag/eval.hpp"
#include "eiarag/labeler.hpp"
#include "eiarag/llm.hpp"
#include "eiarag/retrieval.hpp"
#include "eiarag/routers.hpp"

namespace eiarag::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("eiarag-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

// ---------------------------------------------------------------------------
// Stub worlds

inline StubWorldSpec synthetic_world(std::size_t n, std::uint64_t seed, bool entity_centric = true) {
    SynthesisOptions opts;
    opts.n = n;
    opts.seed = seed;
    opts.entity_centric = entity_centric;
    StubWorldSpec spec;
    spec.queries = synthesize_stub_queries(opts);
    spec.seed = seed;
    return spec;
}

/// A stub world wired into Backends. Not movable: Backends holds references.
struct Harness {
    StubWorld world;
    Bm25Index index;
    ExemplarSelector selector;
    Backends backends;

    explicit Harness(const StubWorldSpec& spec, std::size_t shots = 15, std::uint64_t exemplar_seed = 0)
        : world(make_stub_world(spec)),
          index(build_index(world.corpus)),
          selector(world.queries, shots, exemplar_seed),
          backends{*world.client, *world.embedder, index, selector} {}

    Harness(const Harness&) = delete;
    Harness& operator=(const Harness&) = delete;
};

/// Subset of `all` whose ids appear in `ids`, in the order of `all`.
inline QuerySet subset(const QuerySet& all, const std::set<std::string>& ids, std::string name) {
    std::vector<QueryRecord> out;
    for (const auto& q : all) {
        if (ids.count(q.id)) out.push_back(q);
    }
    return QuerySet(std::move(name), std::move(out));
}

/// Ground truth straight from the world spec.
inline std::map<std::string, Correctness> truth_of(const StubWorldSpec& spec) {
    std::map<std::string, Correctness> out;
    for (const auto& q : spec.queries) out[q.id] = {q.knows_parametric, q.answer_in_corpus};
    return out;
}

// ---------------------------------------------------------------------------
// BM25 by the textbook formula, recomputed from raw documents per query.

inline std::map<std::string, double> bm25_direct(const std::vector<Passage>& corpus, const std::string& query,
                                                 double k1 = 1.2, double b = 0.75) {
    std::vector<std::vector<std::string>> docs;
    double total = 0.0;
    for (const auto& p : corpus) {
        docs.push_back(text::tokenize(p.text));
        total += static_cast<double>(docs.back().size());
    }
    const double n = static_cast<double>(docs.size());
    const double avgdl = total / n;
    std::map<std::string, double> scores;
    const auto terms = text::tokenize(query);
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double s = 0.0;
        bool any = false;
        for (const auto& term : terms) {
            double df = 0.0;
            for (const auto& doc : docs) {
                if (std::find(doc.begin(), doc.end(), term) != doc.end()) df += 1.0;
            }
            const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
            if (tf == 0.0) continue;
            any = true;
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            const double dl = static_cast<double>(docs[d].size());
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if (any) scores[corpus[d].doc_id] = s;
    }
    return scores;
}

// ---------------------------------------------------------------------------
// Frequency-threshold brute force: every threshold between, at and beyond the
// observed frequencies.

inline std::vector<double> candidate_thresholds(std::vector<double> freqs) {
    std::sort(freqs.begin(), freqs.end());
    freqs.erase(std::unique(freqs.begin(), freqs.end()), freqs.end());
    std::vector<double> out{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        out.push_back(freqs[i]);
        out.push_back(std::nextafter(freqs[i], std::numeric_limits<double>::infinity()));
        if (i + 1 < freqs.size()) out.push_back(0.5 * (freqs[i] + freqs[i + 1]));
    }
    return out;
}

struct FreqRow {
    double freq;
    bool nr_correct;
    bool fr_correct;
};

inline std::size_t correct_at(const std::vector<FreqRow>& rows, double t) {
    std::size_t hits = 0;
    for (const auto& r : rows) hits += (r.freq < t) ? r.fr_correct : r.nr_correct;
    return hits;
}

inline std::size_t brute_force_best(const std::vector<FreqRow>& rows) {
    std::vector<double> freqs;
    for (const auto& r : rows) freqs.push_back(r.freq);
    std::size_t best = 0;
    for (double t : candidate_thresholds(freqs)) best = std::max(best, correct_at(rows, t));
    return best;
}

// ---------------------------------------------------------------------------
// Linear probe: ridge least squares on +-1 targets, fitted on one half and
// scored on the other.

inline double linear_probe_accuracy(const std::vector<std::vector<float>>& xs, const std::vector<int>& ys) {
    const auto n = static_cast<Eigen::Index>(xs.size());
    const auto d = static_cast<Eigen::Index>(xs.front().size());
    const Eigen::Index half = n / 2;
    Eigen::MatrixXd a(half, d + 1);
    Eigen::VectorXd t(half);
    for (Eigen::Index i = 0; i < half; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) a(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        a(i, d) = 1.0;
        t(i) = ys[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    }
    const Eigen::MatrixXd gram = a.transpose() * a + 1e-6 * Eigen::MatrixXd::Identity(d + 1, d + 1);
    const Eigen::VectorXd w = gram.ldlt().solve(a.transpose() * t);
    std::size_t hits = 0;
    for (Eigen::Index i = half; i < n; ++i) {
        double s = w(d);
        for (Eigen::Index j = 0; j < d; ++j) s += w(j) * xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        hits += (s > 0.0) == (ys[static_cast<std::size_t>(i)] == 1);
    }
    return static_cast<double>(hits) / static_cast<double>(n - half);
}

// ---------------------------------------------------------------------------
// Finite differences on a double-precision model.

inline double gradient_relative_error(const MlpParams<double>& p, const std::vector<std::vector<double>>& xs,
                                      const std::vector<int>& ys, double step = 1e-5) {
    std::vector<std::span<const double>> views(xs.begin(), xs.end());
    MlpParams<double> analytic;
    loss_and_gradient(p, views, std::span<const int>(ys), analytic);
    MlpParams<double> probe = p, scratch;
    std::vector<double> a, num;
    analytic.for_each_block([&](const std::vector<double>& block) { a.insert(a.end(), block.begin(), block.end()); });
    std::vector<std::vector<double>*> blocks;
    probe.for_each_block([&](std::vector<double>& block) { blocks.push_back(&block); });
    for (auto* block : blocks) {
        for (auto& w : *block) {
            const double saved = w;
            w = saved + step;
            const double up = loss_and_gradient(probe, views, std::span<const int>(ys), scratch);
            w = saved - step;
            const double down = loss_and_gradient(probe, views, std::span<const int>(ys), scratch);
            w = saved;
            num.push_back((up - down) / (2.0 * step));
        }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - num[i]) * (a[i] - num[i]);
        na += a[i] * a[i];
        nn += num[i] * num[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// ---------------------------------------------------------------------------
// Wire schemas. Each returns an empty string when valid, else the problem.

inline std::string check_route_schema(const nlohmann::json& j) {
    if (!j.is_object()) return "not an object";
    const std::set<std::string> keys{"retrieve", "score", "policy", "decision_ms"};
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) return "unexpected key " + k;
    }
    if (!j.contains("retrieve") || !j["retrieve"].is_boolean()) return "retrieve must be a bool";
    if (!j.contains("score") || !(j["score"].is_number() || j["score"].is_null())) return "score must be number|null";
    if (!j.contains("policy") || !j["policy"].is_string()) return "policy must be a string";
    if (!j.contains("decision_ms") || !j["decision_ms"].is_number()) return "decision_ms must be a number";
    return {};
}

inline std::string check_answer_schema(const nlohmann::json& j) {
    if (!j.is_object()) return "not an object";
    const std::set<std::string> keys{"answer", "retrieved", "passages", "policy"};
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) return "unexpected key " + k;
    }
    if (!j.contains("answer") || !j["answer"].is_string()) return "answer must be a string";
    if (!j.contains("retrieved") || !j["retrieved"].is_boolean()) return "retrieved must be a bool";
    if (!j.contains("policy") || !j["policy"].is_string()) return "policy must be a string";
    if (!j.contains("passages") || !j["passages"].is_array()) return "passages must be an array";
    for (const auto& p : j["passages"]) {
        if (!p.is_object() || p.size() != 2) return "passage must have exactly doc_id and score";
        if (!p.contains("doc_id") || !p["doc_id"].is_string()) return "passage doc_id must be a string";
        if (!p.contains("score") || !p["score"].is_number()) return "passage score must be a number";
    }
    if (!j["retrieved"].get<bool>() && !j["passages"].empty()) return "passages present without retrieval";
    return {};
}

}  // namespace eiarag::testing
