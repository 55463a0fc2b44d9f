#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelfuse {

enum class ErrorKind {
  kShape,    // sized-error: operand extents disagree
  kNumeric,  // NaN/Inf or an undefined numeric operation
  kUsage,    // caller violated a precondition
  kData,     // input data is inconsistent
  kParse,    // malformed text input
  kIo,
  kCorrupt,  // checksum or structure mismatch in a binary file
  kVersion,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

[[noreturn]] void throw_shape(const std::string& what, const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b);
[[noreturn]] void throw_usage(const std::string& message);
[[noreturn]] void throw_numeric(const std::string& message);
[[noreturn]] void throw_data(const std::string& message);
[[noreturn]] void throw_io(const std::string& message);

}  // namespace skelfuse
