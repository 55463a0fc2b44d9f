#include "skelfuse/error.hpp"

#include <sstream>

namespace skelfuse {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "sized-error";
    case ErrorKind::kNumeric: return "numeric-error";
    case ErrorKind::kUsage: return "usage-error";
    case ErrorKind::kData: return "data-error";
    case ErrorKind::kParse: return "parse-error";
    case ErrorKind::kIo: return "io-error";
    case ErrorKind::kCorrupt: return "corrupt-file";
    case ErrorKind::kVersion: return "version-error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

ParseError::ParseError(std::size_t line, const std::string& message)
    : Error(ErrorKind::kParse, "line " + std::to_string(line) + ": " + message), line_(line) {}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void throw_shape(const std::string& what, const std::vector<std::size_t>& a,
                 const std::vector<std::size_t>& b) {
  throw Error(ErrorKind::kShape, what + ": " + shape_string(a) + " vs " + shape_string(b));
}

void throw_usage(const std::string& message) { throw Error(ErrorKind::kUsage, message); }
void throw_numeric(const std::string& message) { throw Error(ErrorKind::kNumeric, message); }
void throw_data(const std::string& message) { throw Error(ErrorKind::kData, message); }
void throw_io(const std::string& message) { throw Error(ErrorKind::kIo, message); }

}  // namespace skelfuse
