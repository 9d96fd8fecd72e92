#pragma once

#include <stdexcept>
#include <string>

namespace arx {

/// Wrong number of extents or indices for the tensor rank.
class arity_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes do not conform to the requested operation.
class shape_error : public std::domain_error {
 public:
  shape_error(const std::string& what, std::string left, std::string right)
      : std::domain_error(what + ": " + left + " vs " + right),
        left_(std::move(left)),
        right_(std::move(right)) {}
  explicit shape_error(const std::string& what) : std::domain_error(what) {}

  const std::string& left() const noexcept { return left_; }
  const std::string& right() const noexcept { return right_; }

 private:
  std::string left_;
  std::string right_;
};

/// The destination of a statement is read by a kernel that writes it.
class aliasing_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class unsupported_operation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Backend name is not registered at all.
class unknown_backend : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Backend name is known but the binding was not compiled in.
class backend_unavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace arx
