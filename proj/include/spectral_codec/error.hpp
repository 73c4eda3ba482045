#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spectral_codec {

// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  InvalidArgument,   // precondition violated by the caller
  Format,            // malformed file contents (bad magic, bad header)
  Truncated,         // file ended before the declared payload
  InvalidGrid,       // wavelengths not strictly increasing / out of range
  Io,                // file could not be opened / written
  Singular,          // linear system not solvable at requested tolerance
  IllConditioned,    // Gram / design matrix too ill-conditioned
  Divergence,        // optimizer produced non-finite values
  Degenerate,        // degenerate input (zero white, zero gain, ...)
  Infeasible,        // request cannot be satisfied (e.g. metamer)
  FitFailure,        // every restart of a fit failed
};

std::string_view to_string(ErrorKind kind);

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

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace spectral_codec
