#pragma once

#include <stdexcept>
#include <string>

namespace hcp {

enum class IoErrorCode {
  kOpenFailed,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kTrailingBytes,
  kMalformed,
  kSchemaMismatch,
  kIndexOutOfRange,
  kInvalidValue,
};

const char* to_string(IoErrorCode code);

// Every reader failure surfaces as an IoError carrying one of the codes above.
class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// Raised for configuration values that break a documented invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace hcp
