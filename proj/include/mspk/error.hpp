#ifndef MSPK_ERROR_HPP
#define MSPK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mspk {

// Exit codes: 1 usage, 2 I/O, 3 numeric, 4 format.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mspk

#endif
