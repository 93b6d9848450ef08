#ifndef CFLOW_ERRORS_HPP
#define CFLOW_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cflow {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (e.g. log of 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse: backward on a consumed tape, non-scalar loss, empty sets.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk container. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace cflow

#endif  // CFLOW_ERRORS_HPP
