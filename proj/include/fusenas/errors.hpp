#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fusenas {

// One rule violation with a path into the offending document,
// e.g. {"blocks[1].kernel", "kernel must be odd"}.
struct FieldError {
  std::string path;
  std::string rule;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<FieldError> errs)
      : std::runtime_error(join(errs)), errors_(std::move(errs)) {}
  ValidationError(std::string path, std::string rule)
      : ValidationError(std::vector<FieldError>{{std::move(path), std::move(rule)}}) {}

  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<FieldError>& errs) {
    std::string s;
    for (const auto& e : errs) {
      if (!s.empty()) s += "; ";
      s += e.path + ": " + e.rule;
    }
    return s;
  }
  std::vector<FieldError> errors_;
};

// Structured trial failure. Only `kind` and `context` (an error kind plus a
// structural name such as a layer id) ever cross the controller boundary;
// the free-text what() stays local.
class TrialFailure : public std::runtime_error {
 public:
  TrialFailure(std::string kind, std::string context)
      : std::runtime_error(kind + " at " + context), kind_(std::move(kind)), context_(std::move(context)) {}

  const std::string& kind() const { return kind_; }
  const std::string& context() const { return context_; }

 private:
  std::string kind_;
  std::string context_;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fusenas
