#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eiarag/error.hpp"
#include "eiarag/random.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

using json = nlohmann::json;

/// One relation template: `[subj]` is replaced with the subject entity.
struct RelationTemplate {
    std::string_view relation;
    std::string_view pattern;
};

/// The sixteen entity-centric relation templates. Mirrored by
/// data/relation_templates.tsv.
inline constexpr std::array<RelationTemplate, 16> kRelationTemplates{{
    {"occupation", "What is [subj]'s occupation?"},
    {"place of birth", "In what city was [subj] born?"},
    {"genre", "What genre is [subj]?"},
    {"father", "Who is the father of [subj]?"},
    {"country", "In what country is [subj]?"},
    {"producer", "Who was the producer of [subj]?"},
    {"director", "Who was the director of [subj]?"},
    {"capital of", "What is [subj] the capital of?"},
    {"screenwriter", "Who was the screenwriter for [subj]?"},
    {"composer", "Who was the composer of [subj]?"},
    {"color", "What color is [subj]?"},
    {"religion", "What is the religion of [subj]?"},
    {"sport", "What sport does [subj] play?"},
    {"author", "Who is the author of [subj]?"},
    {"mother", "Who is the mother of [subj]?"},
    {"capital", "What is the capital of [subj]?"},
}};

inline bool is_known_relation(std::string_view relation) {
    return std::any_of(kRelationTemplates.begin(), kRelationTemplates.end(),
                       [&](const RelationTemplate& t) { return t.relation == relation; });
}

inline std::string valid_relation_list() {
    std::string names;
    for (const auto& t : kRelationTemplates) {
        if (!names.empty()) names += ", ";
        names += t.relation;
    }
    return names;
}

inline std::string render_template(std::string_view relation, std::string_view subject) {
    for (const auto& t : kRelationTemplates) {
        if (t.relation == relation) {
            return text::replace_all(std::string(t.pattern), "[subj]", subject);
        }
    }
    throw ValidationError("unknown relation '" + std::string(relation) +
                          "'; valid relations: " + valid_relation_list());
}

struct QueryRecord {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    std::optional<std::string> entity;
    std::optional<double> entity_freq;
    std::optional<std::string> relation;

    friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

/// Throws ValidationError when `r` violates a record invariant.
inline void validate(const QueryRecord& r) {
    if (r.id.empty()) throw ValidationError("record id is empty");
    if (text::trim(r.question).empty()) throw ValidationError("record '" + r.id + "': question is blank");
    if (r.answers.empty()) throw ValidationError("record '" + r.id + "': answers is empty");
    if (r.relation && !is_known_relation(*r.relation)) {
        throw ValidationError("record '" + r.id + "': unknown relation '" + *r.relation + "'");
    }
    if (r.entity_freq && (!std::isfinite(*r.entity_freq) || *r.entity_freq < 0.0)) {
        throw ValidationError("record '" + r.id + "': entity_freq must be finite and >= 0");
    }
}

/// Immutable, ordered set of records with unique ids.
class QuerySet {
public:
    QuerySet() = default;

    QuerySet(std::string name, std::vector<QueryRecord> records)
        : name_(std::move(name)), records_(std::move(records)) {
        std::unordered_set<std::string> seen;
        for (const auto& r : records_) {
            validate(r);
            if (!seen.insert(r.id).second) throw ValidationError("duplicate id '" + r.id + "'");
        }
    }

    const std::string& name() const { return name_; }
    const std::vector<QueryRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const QueryRecord& operator[](std::size_t i) const { return records_[i]; }
    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }

    const QueryRecord* find(std::string_view id) const {
        for (const auto& r : records_) {
            if (r.id == id) return &r;
        }
        return nullptr;
    }

    friend bool operator==(const QuerySet&, const QuerySet&) = default;

private:
    std::string name_;
    std::vector<QueryRecord> records_;
};

inline json to_json(const QueryRecord& r) {
    json j{{"id", r.id}, {"question", r.question}, {"answers", r.answers}};
    if (r.entity) j["entity"] = *r.entity;
    if (r.entity_freq) j["entity_freq"] = *r.entity_freq;
    if (r.relation) j["relation"] = *r.relation;
    return j;
}

/// Builds a record from a JSON object; throws std::invalid_argument describing
/// the first schema problem.
inline QueryRecord record_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
    auto require_string = [&](const char* key) -> std::string {
        if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
        if (!j[key].is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
        return j[key].get<std::string>();
    };
    QueryRecord r;
    r.id = require_string("id");
    r.question = require_string("question");
    if (!j.contains("answers")) throw std::invalid_argument("missing field 'answers'");
    const auto& answers = j["answers"];
    if (!answers.is_array()) throw std::invalid_argument("field 'answers' must be an array");
    for (const auto& a : answers) {
        if (!a.is_string()) throw std::invalid_argument("answers must be strings");
        r.answers.push_back(a.get<std::string>());
    }
    if (j.contains("entity") && !j["entity"].is_null()) {
        if (!j["entity"].is_string()) throw std::invalid_argument("field 'entity' must be a string");
        r.entity = j["entity"].get<std::string>();
    }
    if (j.contains("entity_freq") && !j["entity_freq"].is_null()) {
        if (!j["entity_freq"].is_number()) throw std::invalid_argument("field 'entity_freq' must be a number");
        r.entity_freq = j["entity_freq"].get<double>();
    }
    if (j.contains("relation") && !j["relation"].is_null()) {
        if (!j["relation"].is_string()) throw std::invalid_argument("field 'relation' must be a string");
        r.relation = j["relation"].get<std::string>();
    }
    return r;
}

/// Calls `fn(json, line_number)` for every non-blank line of a JSONL file.
/// Lines that are not valid JSON raise ParseError with their line number.
template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        fn(j, line_no);
    }
}

inline void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("io", "cannot open '" + path + "' for writing");
    for (const auto& row : rows) out << row.dump() << '\n';
}

inline std::string stem_of(const std::string& path) {
    auto base = path.substr(path.find_last_of('/') == std::string::npos ? 0 : path.find_last_of('/') + 1);
    const auto dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

/// Loads a JSONL query file. Unknown fields are ignored.
inline QuerySet load_query_set(const std::string& path, std::string_view format = "jsonl") {
    if (format != "jsonl") throw ValidationError("unsupported query-set format '" + std::string(format) + "'");
    std::vector<QueryRecord> records;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
        QueryRecord r;
        try {
            r = record_from_json(j);
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), line);
        }
        try {
            validate(r);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line) + ": " + e.what());
        }
        if (!seen.insert(r.id).second) {
            throw ValidationError("line " + std::to_string(line) + ": duplicate id '" + r.id + "'");
        }
        records.push_back(std::move(r));
    });
    return QuerySet(stem_of(path), std::move(records));
}

inline void save_query_set(const QuerySet& set, const std::string& path) {
    std::vector<json> rows;
    rows.reserve(set.size());
    for (const auto& r : set) rows.push_back(to_json(r));
    write_jsonl(path, rows);
}

/// A knowledge triple to be rendered into a question.
struct Triple {
    std::string id;
    std::string subject;
    std::string relation;
    std::vector<std::string> answers;
    std::optional<double> entity_freq;
};

inline QuerySet generate_query_set(std::string name, const std::vector<Triple>& triples) {
    std::vector<QueryRecord> records;
    records.reserve(triples.size());
    for (const auto& t : triples) {
        QueryRecord r;
        r.id = t.id;
        r.question = render_template(t.relation, t.subject);
        r.answers = t.answers;
        r.entity = t.subject;
        r.entity_freq = t.entity_freq;
        r.relation = t.relation;
        records.push_back(std::move(r));
    }
    return QuerySet(std::move(name), std::move(records));
}

struct SplitOptions {
    double train_fraction = 0.75;
    std::uint64_t seed = 0;
    /// Split each relation group separately (records without a relation form one group).
    bool stratify_by_relation = false;
};

struct SplitResult {
    QuerySet train;
    QuerySet test;
    std::string algorithm{Rng::algorithm};
};

namespace detail {

inline std::size_t rounded_share(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace detail

/// Seeded shuffle-and-cut. Train membership is a deterministic function of
/// (records, fraction, seed); both halves keep the original record order.
inline SplitResult split_query_set(const QuerySet& set, const SplitOptions& opts) {
    if (!(opts.train_fraction > 0.0 && opts.train_fraction < 1.0)) {
        throw ValidationError("train_fraction must lie strictly between 0 and 1");
    }
    if (set.empty()) throw ValidationError("cannot split an empty query set");

    std::vector<std::vector<std::size_t>> groups;
    if (opts.stratify_by_relation) {
        std::map<std::string, std::vector<std::size_t>> by_relation;
        for (std::size_t i = 0; i < set.size(); ++i) by_relation[set[i].relation.value_or("")].push_back(i);
        for (auto& [_, idx] : by_relation) groups.push_back(std::move(idx));
    } else {
        groups.emplace_back(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) groups[0][i] = i;
    }

    Rng rng(opts.seed);
    std::vector<bool> in_train(set.size(), false);
    for (auto& idx : groups) {
        rng.shuffle(idx);
        const auto take = detail::rounded_share(opts.train_fraction, idx.size());
        for (std::size_t k = 0; k < take; ++k) in_train[idx[k]] = true;
    }

    std::vector<QueryRecord> train, test;
    for (std::size_t i = 0; i < set.size(); ++i) (in_train[i] ? train : test).push_back(set[i]);
    return {QuerySet(set.name() + ".train", std::move(train)), QuerySet(set.name() + ".test", std::move(test)),
            std::string(Rng::algorithm)};
}

}  // namespace eiarag
