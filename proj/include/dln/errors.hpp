#pragma once

#include <stdexcept>
#include <string>

namespace dln {

// Bad matrix/layer dimensions, out-of-range layer indices, invalid width lists.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A dense result would exceed the configured element budget.
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A construction requires data assumptions (full ranks, d_y <= d_x,
// distinct spectrum) that the given dataset does not satisfy.
struct AssumptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Requested a loss-preserving perturbation of a layer whose upstream
// product has full column rank; no direction can leave the loss unchanged.
struct NoNullSpaceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Matrix text file could not be parsed; carries the 1-based line number.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, int line_arg)
      : std::runtime_error(what), line(line_arg) {}
  int line = 0;
};

}  // namespace dln
