#pragma once

#include <stdexcept>
#include <string>

namespace ncadapt {

// Exceptions carry the category the C API maps onto its status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or configuration (CLI exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed files, shapes that do not fit the data, missing cases (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf values, divergence (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncadapt
