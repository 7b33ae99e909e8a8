#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eiarag/error.hpp"
#include "eiarag/text.hpp"

namespace eiarag {

// ---------------------------------------------------------------------------
// TOML subset: [table] / [a.b] headers, key = value lines, # comments, basic
// and literal strings, integers, floats (incl. inf/nan), booleans and
// single-line arrays. Parsed into a JSON object tree.

namespace toml_detail {

class Parser {
public:
    Parser(std::string_view src, std::size_t line) : src_(src), line_(line) {}

    nlohmann::json value() {
        skip_ws();
        if (at_end()) fail("expected a value");
        const char c = src_[pos_];
        if (c == '"') return basic_string();
        if (c == '\'') return literal_string();
        if (c == '[') return array();
        return scalar();
    }

    void expect_end() {
        skip_ws();
        if (!at_end() && src_[pos_] != '#') fail("unexpected trailing characters");
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw ParseError("config: " + what, line_); }
    bool at_end() const { return pos_ >= src_.size(); }
    void skip_ws() {
        while (!at_end() && (src_[pos_] == ' ' || src_[pos_] == '\t')) ++pos_;
    }

    nlohmann::json basic_string() {
        ++pos_;
        std::string out;
        while (true) {
            if (at_end()) fail("unterminated string");
            char c = src_[pos_++];
            if (c == '"') break;
            if (c == '\\') {
                if (at_end()) fail("bad escape");
                const char e = src_[pos_++];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        return out;
    }

    nlohmann::json literal_string() {
        ++pos_;
        const auto end = src_.find('\'', pos_);
        if (end == std::string_view::npos) fail("unterminated literal string");
        std::string out(src_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }

    nlohmann::json array() {
        ++pos_;
        auto out = nlohmann::json::array();
        while (true) {
            skip_ws();
            if (at_end()) fail("unterminated array");
            if (src_[pos_] == ']') {
                ++pos_;
                return out;
            }
            out.push_back(value());
            skip_ws();
            if (!at_end() && src_[pos_] == ',') ++pos_;
        }
    }

    nlohmann::json scalar() {
        const auto start = pos_;
        while (!at_end() && src_[pos_] != ',' && src_[pos_] != ']' && src_[pos_] != '#' && src_[pos_] != ' ' &&
               src_[pos_] != '\t') {
            ++pos_;
        }
        return parse_scalar(src_.substr(start, pos_ - start), line_);
    }

public:
    static nlohmann::json parse_scalar(std::string_view tok, std::size_t line) {
        if (tok == "true") return true;
        if (tok == "false") return false;
        if (tok == "inf" || tok == "+inf") return std::numeric_limits<double>::infinity();
        if (tok == "-inf") return -std::numeric_limits<double>::infinity();
        std::string s;
        for (char c : tok) {
            if (c != '_') s += c;
        }
        if (s.empty()) throw ParseError("config: empty value", line);
        char* end = nullptr;
        const bool floaty = s.find_first_of(".eE") != std::string::npos;
        if (!floaty) {
            const long long v = std::strtoll(s.c_str(), &end, 10);
            if (end && *end == '\0') return v;
        } else {
            const double v = std::strtod(s.c_str(), &end);
            if (end && *end == '\0') return v;
        }
        throw ParseError("config: cannot parse value '" + std::string(tok) + "'", line);
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_;
};

inline nlohmann::json& table_at(nlohmann::json& root, const std::vector<std::string>& path, std::size_t line) {
    nlohmann::json* node = &root;
    for (const auto& part : path) {
        if (part.empty()) throw ParseError("config: empty table name", line);
        auto& child = (*node)[part];
        if (child.is_null()) child = nlohmann::json::object();
        if (!child.is_object()) throw ParseError("config: '" + part + "' is not a table", line);
        node = &child;
    }
    return *node;
}

inline std::vector<std::string> dotted(std::string_view key) {
    std::vector<std::string> parts;
    for (auto& p : text::split(key, '.')) parts.emplace_back(text::trim(p));
    return parts;
}

}  // namespace toml_detail

inline nlohmann::json parse_toml(std::string_view source) {
    auto root = nlohmann::json::object();
    nlohmann::json* current = &root;
    std::size_t line_no = 0;
    std::istringstream in{std::string(source)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close == std::string_view::npos) throw ParseError("config: unterminated table header", line_no);
            current = &toml_detail::table_at(root, toml_detail::dotted(line.substr(1, close - 1)), line_no);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("config: expected key = value", line_no);
        auto path = toml_detail::dotted(text::trim(line.substr(0, eq)));
        const auto leaf = path.back();
        path.pop_back();
        auto& table = toml_detail::table_at(*current, path, line_no);
        toml_detail::Parser p(line.substr(eq + 1), line_no);
        table[leaf] = p.value();
        p.expect_end();
    }
    return root;
}

inline nlohmann::json load_toml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str());
}

// ---------------------------------------------------------------------------

/// Every recognised key with its default value; the tree doubles as the schema
/// (unknown keys and type mismatches are rejected).
inline nlohmann::json default_config() {
    return nlohmann::json::parse(R"({
  "paths": {
    "out_dir": "out", "dataset": "", "train": "", "test": "", "corpus": "", "index": "",
    "model": "", "labels": "", "label_embeddings": "", "world": "", "thresholds": "",
    "annotations": "", "embeddings": "", "triples": ""
  },
  "backend": {
    "kind": "stub", "embed_url": "http://127.0.0.1:8081", "generate_url": "http://127.0.0.1:8082",
    "timeout_ms": 30000, "retries": 2, "max_in_flight": 4, "dim": 4096, "max_layer": 32
  },
  "stub": {
    "seed": 0, "dim": 16, "max_layer": 4, "noise": 1.0, "signal_strength": 1.5,
    "signal_min_layer": 1, "decision_flip": 0.15, "synthesize": 0, "entity_centric": true,
    "p_knows": 0.5, "p_in_corpus": 0.7
  },
  "embedding": { "layer": 1, "include_bos": false },
  "retrieval": { "k1": 1.2, "b": 0.75, "top_k": 5 },
  "prompt": {
    "shots": 15, "exemplar_seed": 0, "passages_first": true, "max_new_tokens": 32,
    "decision_max_new_tokens": 5, "vanilla_template": "", "taare_template": ""
  },
  "classifier": {
    "h1": 256, "h2": 64, "learning_rate": 0.001, "max_epochs": 50, "batch_size": 32,
    "val_fraction": 0.1, "seed": 0, "threshold": 0.5
  },
  "split": { "train_fraction": 0.75, "seed": 0, "stratify": false },
  "labeling": { "strict": false, "strip_punctuation": false, "workers": 1 },
  "eval": { "strict": false, "workers": 1, "policy": "ei", "fake_clock": false },
  "server": { "host": "127.0.0.1", "port": 8080, "policy": "ei" }
})");
}

namespace detail {

inline void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
    for (const auto& [key, value] : patch.items()) {
        const auto name = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + name + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            if (!value.is_object()) throw ConfigError("'" + name + "' must be a table");
            merge_checked(slot, value, name);
            continue;
        }
        const bool ok = (slot.is_string() && value.is_string()) || (slot.is_boolean() && value.is_boolean()) ||
                        (slot.is_number_integer() && value.is_number_integer()) ||
                        (slot.is_number_float() && value.is_number());
        if (!ok) throw ConfigError("config key '" + name + "' has the wrong type");
        slot = slot.is_number_float() ? nlohmann::json(value.get<double>()) : value;
    }
}

}  // namespace detail

/// Layers defaults, then the TOML file, then `section.key=value` overrides.
class Config {
public:
    Config() : tree_(default_config()) {}

    void merge(const nlohmann::json& patch) { detail::merge_checked(tree_, patch, ""); }

    void merge_file(const std::string& path) { merge(load_toml(path)); }

    /// `section.key=value`; the value uses TOML syntax, with bare words taken as strings.
    void set(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
        const auto path = toml_detail::dotted(assignment.substr(0, eq));
        const auto raw = text::trim(assignment.substr(eq + 1));
        const bool quoted = raw.starts_with('"') || raw.starts_with('\'');
        nlohmann::json value;
        if (at_path(path).is_string() && !quoted) {
            value = std::string(raw);
        } else {
            try {
                toml_detail::Parser p(raw, 0);
                value = p.value();
                p.expect_end();
            } catch (const ParseError&) {
                throw ConfigError("override '" + std::string(assignment) + "' has an unparsable value");
            }
        }
        nlohmann::json patch = value;
        for (auto it = path.rbegin(); it != path.rend(); ++it) patch = nlohmann::json{{*it, patch}};
        merge(patch);
    }

    template <typename T>
    T get(std::string_view dotted_key) const {
        return at_path(toml_detail::dotted(dotted_key)).get<T>();
    }

    std::string str(std::string_view key) const { return get<std::string>(key); }

    const nlohmann::json& tree() const { return tree_; }

private:
    const nlohmann::json& at_path(const std::vector<std::string>& path) const {
        const nlohmann::json* node = &tree_;
        std::string name;
        for (const auto& part : path) {
            name += (name.empty() ? "" : ".") + part;
            if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + name + "'");
            node = &(*node)[part];
        }
        return *node;
    }

    nlohmann::json tree_;
};

}  // namespace eiarag
