#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mdat {

/// Category of a library failure. The CLI maps these onto its error JSON.
enum class ErrorKind {
  Shape,
  Config,
  Parse,
  Range,
  Domain,
  Usage,
  Size,
  Numeric,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Config: return "config";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Range: return "range";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Size: return "size";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MDAT_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MDAT_DEFINE_ERROR(ShapeError, Shape)
MDAT_DEFINE_ERROR(ConfigError, Config)
MDAT_DEFINE_ERROR(RangeError, Range)
MDAT_DEFINE_ERROR(DomainError, Domain)
MDAT_DEFINE_ERROR(UsageError, Usage)
MDAT_DEFINE_ERROR(SizeError, Size)
MDAT_DEFINE_ERROR(NumericError, Numeric)
MDAT_DEFINE_ERROR(IoError, Io)

#undef MDAT_DEFINE_ERROR

/// Parse failure carrying the 1-based line number of the offending input.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mdat
