#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpsguard {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or index mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Matrix whose condition estimate exceeds the inversion cap.
class SingularMatrixError : public Error {
 public:
  SingularMatrixError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Iterative kernel that did not reach its stopping criterion.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Request for an object larger than a configured size cap.
class SizeCapError : public Error {
 public:
  using Error::Error;
};

/// The skeleton construction hit a non-invertible intersection matrix at `site`.
class SingularIntersectionError : public Error {
 public:
  SingularIntersectionError(const std::string& what, std::size_t site, double condition)
      : Error(what), site_(site), condition_(condition) {}
  std::size_t site() const noexcept { return site_; }
  double condition() const noexcept { return condition_; }

 private:
  std::size_t site_;
  double condition_;
};

/// Backward pass called with a cache produced by different parameters.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

/// Problems with input data: malformed rows, unknown categories, missing strata.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0) : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Invalid experiment configuration; `path` is a JSON-pointer-like field path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : Error(path + ": " + msg), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mpsguard
