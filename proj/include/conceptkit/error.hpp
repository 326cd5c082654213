#pragma once

#include <stdexcept>
#include <string>

namespace conceptkit {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  format,        // malformed NPY / manifest / config
  io,
  missing_artifact,
  missing_tail,
  numeric,       // divergence, non-finite values
  remote,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Non-fatal diagnostics (e.g. K > min(d, n), token collisions) go through here.
// The default sink writes to stderr; tests may install their own.
using WarningSink = void (*)(const std::string&);
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace conceptkit
