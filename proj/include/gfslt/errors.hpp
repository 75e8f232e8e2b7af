#pragma once

#include <stdexcept>
#include <string>

namespace gfslt {

// Error taxonomy shared across modules. Everything derives from std::runtime_error
// so callers can catch broadly at the CLI boundary.
struct DimError : std::runtime_error {
  explicit DimError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& msg) : std::runtime_error("version error: " + msg) {}
};

struct TransferError : std::runtime_error {
  explicit TransferError(const std::string& msg) : std::runtime_error("transfer error: " + msg) {}
};

}  // namespace gfslt
