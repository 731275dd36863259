#pragma once

#include <random>

#include "xlate/toy/ast.hpp"

namespace xlate::toy {

struct GeneratorOptions {
  int min_statements = 2;
  int max_statements = 5;
  double function_probability = 0.5;
  double print_probability = 0.75;  // chance that a program prints at all
  int max_literal = 20;
};

/// Draws one program. Every generated program terminates, defines names
/// before use, and declares new variables only at function or top level.
Program generate_program(std::mt19937_64& rng, const GeneratorOptions& options = {});

bool contains_print(const Program& program);

}  // namespace xlate::toy
