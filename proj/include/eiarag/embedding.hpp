#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "eiarag/binary_io.hpp"
#include "eiarag/error.hpp"
#include "eiarag/random.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

/// Per-token hidden vectors of one input at one layer.
struct TokenEmbeddingSequence {
    std::vector<std::vector<float>> vectors;
    int layer = 0;

    std::size_t token_count() const { return vectors.size(); }
};

struct SentenceEmbedding {
    std::vector<float> values;
    int layer = 0;
    std::string query_id;

    std::size_t dim() const { return values.size(); }

    friend bool operator==(const SentenceEmbedding&, const SentenceEmbedding&) = default;
};

struct EmbedRequest {
    std::string text;
    int layer = 1;
    bool include_bos = false;
};

/// Source of per-token embeddings. Layer 0 is the input-embedding lookup,
/// layer 1 the first transformer block. Implementations must be deterministic
/// for a fixed request and safe to call concurrently.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dim() const = 0;
    virtual int max_layer() const = 0;
    virtual TokenEmbeddingSequence embed(const EmbedRequest& request) const = 0;
};

/// Arithmetic mean over tokens. Each column is summed in sorted order so the
/// result is bitwise independent of token order.
inline SentenceEmbedding average_pool(const TokenEmbeddingSequence& seq) {
    if (seq.vectors.empty()) throw ValidationError("cannot pool an empty token sequence (no tokens)");
    const std::size_t d = seq.vectors.front().size();
    if (d == 0) throw ValidationError("token vectors have dimension 0");
    for (const auto& v : seq.vectors) {
        if (v.size() != d) throw ValidationError("token vectors differ in dimension");
    }
    SentenceEmbedding out;
    out.layer = seq.layer;
    out.values.resize(d);
    std::vector<float> column(seq.vectors.size());
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < seq.vectors.size(); ++t) column[t] = seq.vectors[t][c];
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (float x : column) sum += x;
        out.values[c] = static_cast<float>(sum / static_cast<double>(column.size()));
    }
    return out;
}

inline SentenceEmbedding sentence_embedding(std::string_view question, int layer, const EmbeddingProvider& provider,
                                            bool include_bos = false, std::string query_id = {}) {
    if (layer < 0 || layer > provider.max_layer()) {
        throw ValidationError("layer " + std::to_string(layer) + " outside provider range [0, " +
                              std::to_string(provider.max_layer()) + "]");
    }
    auto seq = provider.embed({std::string(question), layer, include_bos});
    if (!seq.vectors.empty() && seq.vectors.front().size() != provider.dim()) {
        throw ValidationError("provider returned dimension " + std::to_string(seq.vectors.front().size()) +
                              ", declared " + std::to_string(provider.dim()));
    }
    seq.layer = layer;
    auto pooled = average_pool(seq);
    for (float x : pooled.values) {
        if (!std::isfinite(x)) throw ValidationError("non-finite value in sentence embedding");
    }
    pooled.query_id = std::move(query_id);
    return pooled;
}

// ---------------------------------------------------------------------------
// Binary cache: "EIAR", u32 version, u32 dim, u32 layer, u64 count, then per
// record u32 id length, id bytes, dim little-endian f32.

inline constexpr std::uint32_t kEmbeddingCacheVersion = 1;

struct EmbeddingCache {
    std::uint32_t dim = 0;
    std::int32_t layer = 0;
    std::vector<SentenceEmbedding> records;
};

inline void write_embedding_cache(const std::vector<SentenceEmbedding>& embeddings, const std::string& path,
                                  std::uint32_t dim_if_empty = 0, std::int32_t layer_if_empty = 0) {
    const std::uint32_t dim =
        embeddings.empty() ? dim_if_empty : static_cast<std::uint32_t>(embeddings.front().values.size());
    const std::int32_t layer = embeddings.empty() ? layer_if_empty : embeddings.front().layer;
    for (const auto& e : embeddings) {
        if (e.values.size() != dim || e.layer != layer) {
            throw ValidationError("all cached embeddings must share dimension and layer");
        }
    }
    io::ByteWriter w;
    w.magic("EIAR");
    w.put(kEmbeddingCacheVersion);
    w.put(dim);
    w.put(static_cast<std::uint32_t>(layer));
    w.put(static_cast<std::uint64_t>(embeddings.size()));
    for (const auto& e : embeddings) {
        w.str(e.query_id);
        for (float x : e.values) w.put(x);
    }
    w.save(path);
}

inline EmbeddingCache read_embedding_cache(const std::string& path) {
    auto r = io::ByteReader::from_file(path);
    if (r.size() < 4 || !r.magic_matches("EIAR")) throw FormatError("'" + path + "' is not an embedding cache (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kEmbeddingCacheVersion) {
        throw FormatError("embedding cache version " + std::to_string(version) + " unsupported");
    }
    EmbeddingCache cache;
    cache.dim = r.get<std::uint32_t>();
    cache.layer = static_cast<std::int32_t>(r.get<std::uint32_t>());
    const auto count = r.get<std::uint64_t>();
    // each record needs at least 4 + 4*dim bytes
    if (count > r.remaining() / (4 + 4ULL * cache.dim)) r.fail("record count exceeds file size");
    cache.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        SentenceEmbedding e;
        e.query_id = r.str();
        e.layer = cache.layer;
        e.values.resize(cache.dim);
        for (auto& x : e.values) x = r.get<float>();
        cache.records.push_back(std::move(e));
    }
    if (r.remaining() != 0) r.fail("trailing bytes after last record");
    return cache;
}

// ---------------------------------------------------------------------------

/// Serves pre-computed sentence embeddings from a cache. A lookup by text is
/// resolved through the id registered for that text; the result is a single
/// "token" so pooling returns the cached vector unchanged.
class CacheEmbeddingProvider final : public EmbeddingProvider {
public:
    CacheEmbeddingProvider(EmbeddingCache cache, const std::vector<std::pair<std::string, std::string>>& text_to_id)
        : dim_(cache.dim), layer_(cache.layer) {
        std::unordered_map<std::string, std::size_t> by_id;
        for (std::size_t i = 0; i < cache.records.size(); ++i) by_id[cache.records[i].query_id] = i;
        for (const auto& [text, id] : text_to_id) {
            if (auto it = by_id.find(id); it != by_id.end()) vectors_[text] = cache.records[it->second].values;
        }
    }

    std::size_t dim() const override { return dim_; }
    int max_layer() const override { return layer_; }

    TokenEmbeddingSequence embed(const EmbedRequest& request) const override {
        if (request.layer != layer_) {
            throw ValidationError("cache holds layer " + std::to_string(layer_) + " only");
        }
        auto it = vectors_.find(request.text);
        if (it == vectors_.end()) throw ValidationError("no cached embedding for text '" + request.text + "'");
        return {{it->second}, layer_};
    }

private:
    std::size_t dim_;
    int layer_;
    std::unordered_map<std::string, std::vector<float>> vectors_;
};

/// Deterministic test double. Each whitespace token maps to seeded Gaussian
/// noise keyed on (text, layer, position); texts registered with a signal
/// vector get that vector added to every token at layers >= signal_min_layer.
/// With include_bos a fixed BOS vector is prepended.
class StubEmbeddingProvider final : public EmbeddingProvider {
public:
    struct Options {
        std::size_t dim = 16;
        int max_layer = 4;
        std::uint64_t seed = 0;
        double noise = 1.0;
        int signal_min_layer = 1;
    };

    explicit StubEmbeddingProvider(Options opts) : opts_(opts) {
        if (opts_.dim == 0) throw ValidationError("stub embedding dimension must be positive");
    }

    /// `signal` must have size dim().
    void set_signal(const std::string& text, std::vector<float> signal) {
        if (signal.size() != opts_.dim) throw ValidationError("signal dimension mismatch");
        signals_[text] = std::move(signal);
    }

    std::size_t dim() const override { return opts_.dim; }
    int max_layer() const override { return opts_.max_layer; }
    std::uint64_t call_count() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

    TokenEmbeddingSequence embed(const EmbedRequest& request) const override {
        {
            std::lock_guard lock(mutex_);
            ++calls_;
        }
        if (request.layer < 0 || request.layer > opts_.max_layer) {
            throw ValidationError("stub provider has no layer " + std::to_string(request.layer));
        }
        auto words = text::split_whitespace(request.text);
        if (words.empty()) words.emplace_back();
        TokenEmbeddingSequence seq;
        seq.layer = request.layer;
        if (request.include_bos) seq.vectors.push_back(noise_vector(mix_seed(opts_.seed, 0xB05), request.layer));
        const auto text_key = fnv1a(request.text);
        const std::vector<float>* signal = nullptr;
        if (request.layer >= opts_.signal_min_layer) {
            if (auto it = signals_.find(request.text); it != signals_.end()) signal = &it->second;
        }
        for (std::size_t t = 0; t < words.size(); ++t) {
            auto v = noise_vector(mix_seed(mix_seed(opts_.seed, text_key), t), request.layer);
            if (signal) {
                for (std::size_t c = 0; c < v.size(); ++c) v[c] += (*signal)[c];
            }
            seq.vectors.push_back(std::move(v));
        }
        return seq;
    }

private:
    std::vector<float> noise_vector(std::uint64_t key, int layer) const {
        Rng rng(mix_seed(key, static_cast<std::uint64_t>(layer)));
        std::vector<float> v(opts_.dim);
        for (auto& x : v) x = static_cast<float>(opts_.noise * rng.normal());
        return v;
    }

    Options opts_;
    std::map<std::string, std::vector<float>> signals_;
    mutable std::mutex mutex_;
    mutable std::uint64_t calls_ = 0;
};

/// Fixed per-token vectors keyed by exact text; used for hand-computed checks.
class TableEmbeddingProvider final : public EmbeddingProvider {
public:
    TableEmbeddingProvider(std::size_t dim, int max_layer) : dim_(dim), max_layer_(max_layer) {}

    void set(const std::string& text, int layer, std::vector<std::vector<float>> vectors) {
        table_[{text, layer}] = std::move(vectors);
    }

    std::size_t dim() const override { return dim_; }
    int max_layer() const override { return max_layer_; }

    TokenEmbeddingSequence embed(const EmbedRequest& request) const override {
        auto it = table_.find({request.text, request.layer});
        if (it == table_.end()) throw ValidationError("no table entry for '" + request.text + "'");
        return {it->second, request.layer};
    }

private:
    std::size_t dim_;
    int max_layer_;
    std::map<std::pair<std::string, int>, std::vector<std::vector<float>>> table_;
};

}  // namespace eiarag
