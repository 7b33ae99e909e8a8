#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "eiarag/binary_io.hpp"
#include "eiarag/dataset.hpp"
#include "eiarag/error.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

struct Passage {
    std::string doc_id;
    std::optional<std::string> title;
    std::string text;

    friend bool operator==(const Passage&, const Passage&) = default;
};

struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct ScoredPassage {
    const Passage* passage;
    double score;
};

inline std::vector<std::string> passage_tokens(const Passage& p) {
    auto tokens = p.title ? text::tokenize(*p.title) : std::vector<std::string>{};
    auto body = text::tokenize(p.text);
    tokens.insert(tokens.end(), body.begin(), body.end());
    return tokens;
}

/// Okapi BM25 over title+text, with the +1-smoothed IDF
/// ln((N - df + 0.5) / (df + 0.5) + 1), which keeps every weight positive.
/// Immutable after construction; concurrent searches are safe.
class Bm25Index {
public:
    static constexpr double kDefaultK1 = 1.2;
    static constexpr double kDefaultB = 0.75;

    Bm25Index() = default;

    Bm25Index(std::vector<Passage> corpus, double k1 = kDefaultK1, double b = kDefaultB)
        : docs_(std::move(corpus)), k1_(k1), b_(b) {
        if (docs_.empty()) throw ValidationError("cannot index an empty corpus");
        if (!(k1_ > 0.0)) throw ValidationError("k1 must be positive");
        if (!(b_ >= 0.0 && b_ <= 1.0)) throw ValidationError("b must lie in [0, 1]");
        std::unordered_set<std::string> ids;
        for (const auto& d : docs_) {
            if (!ids.insert(d.doc_id).second) throw ValidationError("duplicate doc_id '" + d.doc_id + "'");
            if (d.text.empty()) throw ValidationError("passage '" + d.doc_id + "' has empty text");
        }
        doc_lengths_.reserve(docs_.size());
        for (std::uint32_t ord = 0; ord < docs_.size(); ++ord) {
            std::map<std::string, std::uint32_t> tf;
            const auto tokens = passage_tokens(docs_[ord]);
            for (const auto& t : tokens) ++tf[t];
            for (const auto& [term, count] : tf) postings_[term].push_back({ord, count});
            doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        }
        recompute_average();
    }

    std::size_t size() const { return docs_.size(); }
    double k1() const { return k1_; }
    double b() const { return b_; }
    double avg_doc_len() const { return avg_doc_len_; }
    const std::vector<Passage>& passages() const { return docs_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }

    std::size_t document_frequency(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    const std::vector<Posting>* postings(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

    double idf(std::size_t df) const {
        const double n = static_cast<double>(docs_.size());
        const double f = static_cast<double>(df);
        return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
    }

    /// Top-k by score, ties broken by ascending doc_id. Each query token
    /// contributes once per occurrence. Documents sharing no term are omitted.
    std::vector<ScoredPassage> search(std::string_view query, std::size_t k = 5) const {
        if (k < 1) throw ValidationError("k must be at least 1");
        std::unordered_map<std::uint32_t, double> acc;
        for (const auto& term : text::tokenize(query)) {
            const auto* list = postings(term);
            if (!list) continue;
            const double w = idf(list->size());
            for (const auto& p : *list) {
                const double tf = p.tf;
                const double norm = 1.0 - b_ + b_ * static_cast<double>(doc_lengths_[p.doc]) / avg_doc_len_;
                acc[p.doc] += w * tf * (k1_ + 1.0) / (tf + k1_ * norm);
            }
        }
        std::vector<ScoredPassage> hits;
        hits.reserve(acc.size());
        for (const auto& [doc, score] : acc) {
            if (score > 0.0) hits.push_back({&docs_[doc], score});
        }
        auto better = [](const ScoredPassage& a, const ScoredPassage& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.passage->doc_id < b.passage->doc_id;
        };
        const auto keep = std::min(k, hits.size());
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
        hits.resize(keep);
        return hits;
    }

    // "EIBM", u32 version, f64 k1, f64 b, u64 N, per doc (id, has_title, title, text, u32 length),
    // u64 term count, per term (term, u32 posting count, per posting u32 doc, u32 tf).
    void save(const std::string& path) const {
        io::ByteWriter w;
        w.magic("EIBM");
        w.put(kVersion);
        w.put(k1_);
        w.put(b_);
        w.put(static_cast<std::uint64_t>(docs_.size()));
        for (std::size_t i = 0; i < docs_.size(); ++i) {
            const auto& d = docs_[i];
            w.str(d.doc_id);
            w.put(static_cast<std::uint8_t>(d.title ? 1 : 0));
            w.str(d.title.value_or(""));
            w.str(d.text);
            w.put(doc_lengths_[i]);
        }
        std::vector<const std::string*> terms;
        terms.reserve(postings_.size());
        for (const auto& [term, _] : postings_) terms.push_back(&term);
        std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
        w.put(static_cast<std::uint64_t>(terms.size()));
        for (const auto* term : terms) {
            const auto& list = postings_.at(*term);
            w.str(*term);
            w.put(static_cast<std::uint32_t>(list.size()));
            for (const auto& p : list) {
                w.put(p.doc);
                w.put(p.tf);
            }
        }
        w.save(path);
    }

    static Bm25Index load(const std::string& path) {
        auto r = io::ByteReader::from_file(path);
        if (r.size() < 4 || !r.magic_matches("EIBM")) throw FormatError("'" + path + "' is not a BM25 index (bad magic)");
        if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
            throw FormatError("BM25 index version " + std::to_string(v) + " unsupported");
        }
        Bm25Index idx;
        idx.k1_ = r.get<double>();
        idx.b_ = r.get<double>();
        const auto n = r.get<std::uint64_t>();
        if (n == 0 || n > r.remaining()) r.fail("bad document count");
        for (std::uint64_t i = 0; i < n; ++i) {
            Passage p;
            p.doc_id = r.str();
            const bool has_title = r.get<std::uint8_t>() != 0;
            auto title = r.str();
            if (has_title) p.title = std::move(title);
            p.text = r.str();
            idx.docs_.push_back(std::move(p));
            idx.doc_lengths_.push_back(r.get<std::uint32_t>());
        }
        const auto terms = r.get<std::uint64_t>();
        if (terms > r.remaining()) r.fail("bad term count");
        for (std::uint64_t t = 0; t < terms; ++t) {
            auto term = r.str();
            const auto count = r.get<std::uint32_t>();
            if (count > r.remaining() / 8) r.fail("bad posting count");
            auto& list = idx.postings_[term];
            for (std::uint32_t i = 0; i < count; ++i) {
                Posting p{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
                if (p.doc >= n) r.fail("posting references document " + std::to_string(p.doc));
                list.push_back(p);
            }
        }
        if (r.remaining() != 0) r.fail("trailing bytes in index");
        idx.recompute_average();
        return idx;
    }

private:
    static constexpr std::uint32_t kVersion = 1;

    void recompute_average() {
        double total = 0.0;
        for (auto len : doc_lengths_) total += len;
        avg_doc_len_ = total / static_cast<double>(doc_lengths_.size());
        // all-empty documents would make every normalization divide by zero
        if (avg_doc_len_ == 0.0) avg_doc_len_ = 1.0;
    }

    std::vector<Passage> docs_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    double avg_doc_len_ = 0.0;
    double k1_ = kDefaultK1;
    double b_ = kDefaultB;
};

inline Bm25Index build_index(std::vector<Passage> corpus, double k1 = Bm25Index::kDefaultK1,
                             double b = Bm25Index::kDefaultB) {
    return Bm25Index(std::move(corpus), k1, b);
}

inline nlohmann::json to_json(const Passage& p) {
    nlohmann::json j{{"doc_id", p.doc_id}, {"text", p.text}};
    if (p.title) j["title"] = *p.title;
    return j;
}

/// Corpus JSONL: {"doc_id": str, "title": str?, "text": str}.
inline std::vector<Passage> load_corpus(const std::string& path) {
    std::vector<Passage> corpus;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
        if (!j.is_object() || !j.contains("doc_id") || !j["doc_id"].is_string()) {
            throw ParseError("missing string field 'doc_id'", line);
        }
        if (!j.contains("text") || !j["text"].is_string()) throw ParseError("missing string field 'text'", line);
        Passage p{j["doc_id"].get<std::string>(), std::nullopt, j["text"].get<std::string>()};
        if (j.contains("title") && j["title"].is_string()) p.title = j["title"].get<std::string>();
        corpus.push_back(std::move(p));
    });
    return corpus;
}

inline void save_corpus(const std::vector<Passage>& corpus, const std::string& path) {
    std::vector<nlohmann::json> rows;
    for (const auto& p : corpus) rows.push_back(to_json(p));
    write_jsonl(path, rows);
}

}  // namespace eiarag
