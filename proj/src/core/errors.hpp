#pragma once

#include <stdexcept>
#include <string>

namespace rada {

enum class ErrorCode {
  invalid_argument = 1,
  io = 2,
  numeric = 3,
  state = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::invalid_argument, msg);
}

}  // namespace rada
