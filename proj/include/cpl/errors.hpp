#ifndef CPL_ERRORS_HPP_
#define CPL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cpl {

// Error taxonomy maps onto CLI exit codes: FormatError -> 2,
// ConsistencyError -> 3, GuardError -> 4.

/// Malformed or unreadable input file (bad magic, unparsable field, ...).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Violated precondition, invariant, or cross-input inconsistency.
class ConsistencyError : public std::runtime_error {
 public:
  explicit ConsistencyError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Instance exceeds a hard resource guard (e.g. enumeration too large).
class GuardError : public std::runtime_error {
 public:
  explicit GuardError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cpl

#endif  // CPL_ERRORS_HPP_
