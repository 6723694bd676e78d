#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace ffpdet {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad field value, unknown key, inconsistent sizes).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch at an operation boundary.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// File read/write problems.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Dataset or checkpoint content is malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or its state is unusable.
class TrainError : public Error {
 public:
  using Error::Error;
};

/// printf-style formatting into a std::string, used for error messages
/// and report rendering.
inline std::string strfmt(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  va_list ap2;
  va_copy(ap2, ap);
  int n = std::vsnprintf(nullptr, 0, fmt, ap);
  va_end(ap);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, ap2);
  va_end(ap2);
  return out;
}

template <class E = Error>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace ffpdet
