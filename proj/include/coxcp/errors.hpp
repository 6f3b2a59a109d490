#pragma once

#include <stdexcept>
#include <string>

namespace coxcp {

// Malformed input data or configuration (CLI exit code 2).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// No admissible model under the requested constraints (CLI exit code 3).
struct InfeasibleModelError : std::runtime_error {
    explicit InfeasibleModelError(const std::string& what) : std::runtime_error(what) {}
};

// An operation was invoked outside its documented contract (CLI exit code 4).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace coxcp
