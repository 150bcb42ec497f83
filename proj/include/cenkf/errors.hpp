#pragma once

#include <stdexcept>
#include <string>

namespace cenkf {

/// Model evaluated outside its mathematical domain (e.g. non-positive
/// interstitial insulin, non-finite state).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what, double time = 0.0)
      : std::domain_error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cenkf
