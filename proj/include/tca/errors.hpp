#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tca {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionMismatch : public Error {
public:
  using Error::Error;
};

class SingularCovariance : public Error {
public:
  using Error::Error;
};

class SingularMatrix : public Error {
public:
  using Error::Error;
};

class DegenerateData : public Error {
public:
  using Error::Error;
};

class DegenerateComponent : public Error {
public:
  using Error::Error;
};

class NotSpd : public Error {
public:
  using Error::Error;
};

class NotOrthogonal : public Error {
public:
  using Error::Error;
};

class ZeroRow : public Error {
public:
  using Error::Error;
};

class InvalidVertex : public Error {
public:
  using Error::Error;
};

class InvalidSubtree : public Error {
public:
  using Error::Error;
};

class InvalidTreewidth : public Error {
public:
  using Error::Error;
};

// CSV / document parse failure; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
  ParseError(const std::string& msg, std::size_t line = 0)
      : Error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace tca
