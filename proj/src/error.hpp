#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace derain {

enum class ErrorCode {
  InvalidArgument = 1,
  ShapeMismatch = 2,
  Io = 3,
  Parse = 4,
  Numeric = 5,
  Internal = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Builds an error message from stream-style pieces:
//   throw_error(ErrorCode::ShapeMismatch, "conv2d: input channels ", a, " != kernel ", b);
template <typename... Parts>
[[noreturn]] void throw_error(ErrorCode code, Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw Error(code, os.str());
}

#define DERAIN_CHECK(cond, code, ...)                  \
  do {                                                 \
    if (!(cond)) ::derain::throw_error(code, __VA_ARGS__); \
  } while (0)

}  // namespace derain
