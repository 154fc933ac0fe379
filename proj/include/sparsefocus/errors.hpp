#ifndef SPARSEFOCUS_ERRORS_HPP
#define SPARSEFOCUS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sparsefocus {

// Precondition / contract violations (CLI exit code 2).
struct contract_error : std::invalid_argument {
  explicit contract_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Filesystem and format failures (CLI exit code 1).
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values and other numerical failures (CLI exit code 3).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_ERRORS_HPP
