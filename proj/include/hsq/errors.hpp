#pragma once

#include <stdexcept>
#include <string>

namespace hsq {

// Invalid configuration: bad preset name, k > E, indivisible image size, ...
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A numeric contract was violated: shape mismatch, non-finite data, bad index.
class ContractViolation : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class IoErrorKind {
  bad_magic,
  bad_version,
  truncated,
  geometry,
  malformed,
  file_access,
};

inline const char* to_string(IoErrorKind k) {
  switch (k) {
    case IoErrorKind::bad_magic: return "bad_magic";
    case IoErrorKind::bad_version: return "bad_version";
    case IoErrorKind::truncated: return "truncated";
    case IoErrorKind::geometry: return "geometry";
    case IoErrorKind::malformed: return "malformed";
    case IoErrorKind::file_access: return "file_access";
  }
  return "unknown";
}

// File-format and filesystem failures; kind() distinguishes the error class.
class IoError : public std::runtime_error {
public:
  IoError(IoErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  IoErrorKind kind() const noexcept { return kind_; }

private:
  IoErrorKind kind_;
};

}  // namespace hsq
