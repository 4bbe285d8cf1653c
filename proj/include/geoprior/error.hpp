#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geoprior {

// Categories double as the CLI's machine-readable error tag and exit code.
enum class ErrorKind {
  Usage,       // bad API or CLI usage
  Shape,       // dimension mismatch between operands
  Validation,  // a value outside its documented domain
  Config,      // inconsistent configuration
  Io,          // file could not be opened / written
  Schema,      // malformed input file contents
  Format,      // bad checkpoint or raster header
  Lookup,      // id out of range
  Vocabulary,  // category / photographer labels disagree
  Numeric,     // non-finite value during training
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Format: return "format";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Vocabulary: return "vocabulary";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

// Process exit status for a failure of this kind; 1 is left for unexpected errors.
inline int exit_code(ErrorKind kind) { return 2 + static_cast<int>(kind); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace geoprior
