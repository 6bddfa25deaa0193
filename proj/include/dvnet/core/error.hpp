#pragma once

#include <stdexcept>
#include <string>

namespace dvnet {

/// Exception carrying the pipeline stage that raised it ("conv_nd", "tiling", ...).
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline void require(bool condition, const char* stage, const std::string& message) {
  if (!condition) throw Error(stage, message);
}

}  // namespace dvnet
