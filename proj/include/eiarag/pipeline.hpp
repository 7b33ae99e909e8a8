#pragma once

#include <string>
#include <vector>

#include "eiarag/dataset.hpp"
#include "eiarag/embedding.hpp"
#include "eiarag/llm.hpp"
#include "eiarag/retrieval.hpp"

namespace eiarag {

/// Everything a query needs on its way to an answer. Non-owning.
struct Backends {
    GenerationClient& client;
    const EmbeddingProvider& embedder;
    const Bm25Index& index;
    const ExemplarSelector& exemplars;
};

struct GenerationConfig {
    std::size_t top_k = 5;
    int max_new_tokens = 32;
    PassagePlacement placement = PassagePlacement::BeforeExemplars;
};

struct EmbeddingConfig {
    int layer = 1;
    bool include_bos = false;
};

struct GenerationOutcome {
    std::vector<ScoredPassage> passages;
    std::string completion;
};

/// Builds the few-shot prompt (with top-k passages when `retrieve`) and
/// generates once.
inline GenerationOutcome answer_with(const QueryRecord& q, bool retrieve, const Backends& b,
                                     const GenerationConfig& cfg) {
    GenerationOutcome out;
    PromptSpec spec;
    spec.question = q.question;
    spec.exemplars = b.exemplars.select(q);
    spec.max_new_tokens = cfg.max_new_tokens;
    spec.placement = cfg.placement;
    if (retrieve) {
        out.passages = b.index.search(q.question, cfg.top_k);
        for (const auto& hit : out.passages) spec.passages.push_back(*hit.passage);
    }
    out.completion = b.client.generate(build_prompt(spec), cfg.max_new_tokens);
    return out;
}

}  // namespace eiarag
