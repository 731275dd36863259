#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xlate/toy/ast.hpp"

namespace xlate::toy {

struct ExecLimits {
  std::int64_t max_steps = 100000;
  int max_depth = 64;
};

struct ExecResult {
  std::vector<std::int64_t> output;  // printed values in order
  std::optional<std::string> error;  // set when execution aborted
  bool ok() const { return !error; }
};

/// Runs a program with Python-style function scoping. Arithmetic wraps on
/// 64-bit overflow so both surface forms agree bit for bit.
ExecResult run(const Program& program, const ExecLimits& limits = {});

}  // namespace xlate::toy
