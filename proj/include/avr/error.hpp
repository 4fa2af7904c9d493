#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace avr {

enum class ErrorKind {
    parse,
    unknown_class,
    range,
    interval,
    schema,
    domain,
    out_of_range,
    shape,
    numeric,
    size,
    balance,
    config,
    state,
    coverage,
    join,
    gap,
    version,
    report,
    io,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::unknown_class: return "unknown_class";
    case ErrorKind::range: return "range";
    case ErrorKind::interval: return "interval";
    case ErrorKind::schema: return "schema";
    case ErrorKind::domain: return "domain";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::size: return "size";
    case ErrorKind::balance: return "balance";
    case ErrorKind::config: return "config";
    case ErrorKind::state: return "state";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::join: return "join";
    case ErrorKind::gap: return "gap";
    case ErrorKind::version: return "version";
    case ErrorKind::report: return "report";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit structured diagnostics.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Parse failure tied to a 1-based line of the input text.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace avr
