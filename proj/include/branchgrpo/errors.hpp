#ifndef BRANCHGRPO_ERRORS_HPP
#define BRANCHGRPO_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace branchgrpo {

/// Invalid configuration value. `key()` names the offending setting.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(std::move(key)), reason_(what) {}

  const std::string& key() const noexcept { return key_; }
  /// Message without the key prefix.
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string key_;
  std::string reason_;
};

/// Non-finite value or numerical breakdown during rollout or training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure. The message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace branchgrpo

#endif
