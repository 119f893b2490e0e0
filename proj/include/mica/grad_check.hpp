#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "mica/tape.hpp"

namespace mica::nd {

// Builds a scalar loss on the given (eval-mode) tape from the current Param values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double h = 1e-6;
  // Coordinates sampled per Param; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Max over sampled coordinates of |analytic - central difference| / max(1, |central difference|).
/// Param values are restored before returning; Param::grad holds the analytic gradient.
double grad_check(const LossBuilder& f, std::span<Param* const> params,
                  const GradCheckOptions& opts = {});

}  // namespace mica::nd
