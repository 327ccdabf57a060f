#pragma once

#include <stdexcept>
#include <string>

namespace scaleloc {

// Base for all library errors. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed text record; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Corrupt or foreign binary file (bad magic, checksum, version).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Training produced non-finite values.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace scaleloc
