#include "conceptkit/error.hpp"

#include <atomic>
#include <cstdio>

namespace conceptkit {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::format: return "format error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::missing_artifact: return "missing artifact";
    case ErrorKind::missing_tail: return "missing tail";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::remote: return "remote error";
  }
  return "error";
}

namespace {

void stderr_sink(const std::string& message) {
  std::fprintf(stderr, "warning: %s\n", message.c_str());
}

std::atomic<WarningSink> g_sink{&stderr_sink};

}  // namespace

void set_warning_sink(WarningSink sink) { g_sink.store(sink ? sink : &stderr_sink); }

void warn(const std::string& message) { g_sink.load()(message); }

}  // namespace conceptkit
