#pragma once

#include <stdexcept>
#include <string>

namespace eiarag {

/// Base of every error raised by the library. `kind()` is a short stable tag
/// used by the CLI for its machine-parsable error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("parse", "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

class CorruptionError : public Error {
public:
    explicit CorruptionError(const std::string& what) : Error("corruption", what) {}
};

class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts)
        : Error("transport", what + " (after " + std::to_string(attempts) + " attempts)"),
          attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

protected:
    TransportError(std::string kind, const std::string& what, int attempts)
        : Error(std::move(kind), what + " (after " + std::to_string(attempts) + " attempts)"),
          attempts_(attempts) {}

private:
    int attempts_;
};

class TimeoutError : public TransportError {
public:
    TimeoutError(const std::string& what, int attempts)
        : TransportError("timeout", what, attempts) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what) : Error("training", what) {}
};

/// Wraps a backend failure for one query so callers can skip-and-log it.
class QueryError : public Error {
public:
    QueryError(std::string query_id, const std::string& what)
        : Error("query", "query '" + query_id + "': " + what), query_id_(std::move(query_id)) {}

    const std::string& query_id() const noexcept { return query_id_; }

private:
    std::string query_id_;
};

}  // namespace eiarag
