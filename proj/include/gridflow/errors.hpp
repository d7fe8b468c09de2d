#pragma once

#include <stdexcept>
#include <string>

namespace gridflow {

/// Invalid construction arguments or run configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// An enumeration budget (state count, trajectory count, descendant count)
/// was exceeded. Budgets are hard errors, never silent truncation.
class BudgetError : public std::runtime_error {
 public:
  explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

/// A numerical domain error or non-finite value, with the offending
/// quantity named in the message.
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

/// Caller broke an API contract (querying parents of the source state,
/// mismatched index spaces, empty batch, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Filesystem failure while writing or reading run artifacts.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gridflow
