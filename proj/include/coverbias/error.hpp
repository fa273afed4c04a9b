#pragma once

#include <stdexcept>
#include <string>

namespace coverbias {

enum class ErrorKind {
  schema,
  parse,
  duplicate_key,
  geometry,
  io,
  domain,
  empty_selection,
  degenerate_input,
  degenerate_denominator,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define COVERBIAS_DEFINE_ERROR(Name, kind_value)                            \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(kind_value, what) {}     \
  };

COVERBIAS_DEFINE_ERROR(SchemaError, ErrorKind::schema)
COVERBIAS_DEFINE_ERROR(ParseError, ErrorKind::parse)
COVERBIAS_DEFINE_ERROR(DuplicateKey, ErrorKind::duplicate_key)
COVERBIAS_DEFINE_ERROR(GeometryError, ErrorKind::geometry)
COVERBIAS_DEFINE_ERROR(IoError, ErrorKind::io)
COVERBIAS_DEFINE_ERROR(DomainError, ErrorKind::domain)
COVERBIAS_DEFINE_ERROR(EmptySelection, ErrorKind::empty_selection)
COVERBIAS_DEFINE_ERROR(DegenerateInput, ErrorKind::degenerate_input)
COVERBIAS_DEFINE_ERROR(DegenerateDenominator, ErrorKind::degenerate_denominator)

#undef COVERBIAS_DEFINE_ERROR

// Process exit codes used by the command-line tool: 2 schema, 3 domain, 4 degenerate input.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::schema:
    case ErrorKind::parse:
    case ErrorKind::duplicate_key:
    case ErrorKind::geometry:
    case ErrorKind::io:
      return 2;
    case ErrorKind::domain:
    case ErrorKind::empty_selection:
      return 3;
    case ErrorKind::degenerate_input:
    case ErrorKind::degenerate_denominator:
      return 4;
  }
  return 1;
}

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::schema: return "SchemaError";
    case ErrorKind::parse: return "ParseError";
    case ErrorKind::duplicate_key: return "DuplicateKey";
    case ErrorKind::geometry: return "GeometryError";
    case ErrorKind::io: return "IoError";
    case ErrorKind::domain: return "DomainError";
    case ErrorKind::empty_selection: return "EmptySelection";
    case ErrorKind::degenerate_input: return "DegenerateInput";
    case ErrorKind::degenerate_denominator: return "DegenerateDenominator";
  }
  return "Error";
}

}  // namespace coverbias
