#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace contrafix {

/**
 * Engine-wide error with a machine-readable kind ("NoMatch", "StaleBuild",
 * ...) next to the human-readable message. Tool dispatch catches these at
 * the agent boundary and serializes them into tool results instead of
 * unwinding the loop.
 */
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

}  // namespace contrafix
