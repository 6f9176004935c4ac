#pragma once

#include <stdexcept>
#include <string>

namespace emfusion {

//! Base class for all errors raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
  //! Process exit code the CLI maps this error to.
  virtual int exit_code() const noexcept { return 2; }
};

//! Malformed or out-of-range input data.
class InvalidInput : public Error
{
public:
  using Error::Error;
};

//! Inconsistent configuration (shapes, unknown tags, missing files).
class ConfigError : public Error
{
public:
  using Error::Error;
};

//! Non-finite values appeared during a numeric computation.
class NumericError : public Error
{
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

//! API misuse, e.g. asking a detached tensor for its gradient.
class UsageError : public Error
{
public:
  using Error::Error;
};

} // namespace emfusion
