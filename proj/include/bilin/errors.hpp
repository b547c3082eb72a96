#pragma once
// Error taxonomy shared by the library and the CLI.
//
// Three coarse kinds map onto the CLI exit codes:
//   validation (bad config / bad arguments / schema violations) -> exit 2
//   numeric    (guard trips, solver failures, consistency trips) -> exit 3
//   io         (filesystem / serialization failures)             -> exit 4

#include <stdexcept>
#include <string>

namespace bilin {

enum class ErrorKind { validation, numeric, io };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::validation: return 2;
      case ErrorKind::numeric: return 3;
      case ErrorKind::io: return 4;
    }
    return 3;
  }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string& msg) {
  throw Error(ErrorKind::validation, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(ErrorKind::numeric, msg);
}
[[noreturn]] inline void fail_io(const std::string& msg) {
  throw Error(ErrorKind::io, msg);
}

inline void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) throw Error(kind, msg);
}

}  // namespace bilin
