#pragma once

#include <stdexcept>
#include <string>

namespace bianet {

// Invalid shapes, specs, or op arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf escaped from a forward op.
class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IoCode {
  generic,
  bad_magic,
  unsupported_version,
  truncated,
  unknown_param,
  shape_mismatch,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  explicit IoError(const std::string& msg)
      : std::runtime_error(msg), code_(IoCode::generic) {}
  IoCode code() const { return code_; }

 private:
  IoCode code_;
};

}  // namespace bianet
