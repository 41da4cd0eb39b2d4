#pragma once

#include <stdexcept>
#include <string>

namespace dualsplat {

/// Malformed or inconsistent input (missing file, shape mismatch, degenerate
/// scene). CLI maps this to exit code 2.
class BadInput : public std::runtime_error {
 public:
  BadInput(std::string path, const std::string& reason)
      : std::runtime_error(reason), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Non-finite value in an optimization loop. CLI maps this to exit code 3.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dualsplat
