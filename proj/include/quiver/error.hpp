#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace quiver {

enum class ErrorCategory { validation, insufficient_data, internal };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::insufficient_data: return "insufficient_data";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

// Process exit status for each category (0 is reserved for success).
inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::validation: return 2;
    case ErrorCategory::insufficient_data: return 3;
    case ErrorCategory::internal: return 4;
  }
  return 4;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorCategory::validation, what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what)
      : Error(ErrorCategory::insufficient_data, what) {}
};

// Broken internal contract, e.g. a negative control that did not hold.
class HarnessError : public Error {
 public:
  explicit HarnessError(const std::string& what)
      : Error(ErrorCategory::internal, what) {}
};

// An estimate that may legitimately be unavailable; `reason` says why.
template <typename T>
struct Estimate {
  std::optional<T> value;
  std::string reason;

  static Estimate of(T v) { return Estimate{std::move(v), {}}; }
  static Estimate absent(std::string why) { return Estimate{std::nullopt, std::move(why)}; }

  bool has_value() const noexcept { return value.has_value(); }
  explicit operator bool() const noexcept { return value.has_value(); }
  const T& operator*() const { return *value; }
  const T* operator->() const { return &*value; }
};

}  // namespace quiver
