#pragma once

#include <stdexcept>
#include <string>

namespace hallu {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset/metadata loading failure.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hallu
