#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace refinery {

enum class ErrorKind {
    invalid_grasp,
    empty_ground_truth,
    parse,
    io,
    integrity,
    encode,
    undefined_angle,
    shape,
    ingest,
    state,
    contract,
    replay,
    not_found,
    conflict,
    validation,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Raised when a checksum chain or sequence numbering fails verification.
class IntegrityError : public Error {
public:
    IntegrityError(std::uint64_t sequence, const std::string& message)
        : Error(ErrorKind::integrity,
                "integrity failure at sequence " + std::to_string(sequence) + ": " + message),
          sequence_(sequence) {}

    std::uint64_t sequence() const noexcept { return sequence_; }

private:
    std::uint64_t sequence_;
};

}  // namespace refinery
