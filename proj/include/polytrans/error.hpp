#pragma once

#include <stdexcept>
#include <string>

namespace polytrans {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Error raised from a named pipeline stage; the CLI reports the tag and
// exits nonzero.
struct StageError : Error {
  StageError(const std::string& stage_tag, const std::string& msg)
      : Error("[" + stage_tag + "] " + msg), stage(stage_tag) {}
  std::string stage;
};

}  // namespace polytrans
