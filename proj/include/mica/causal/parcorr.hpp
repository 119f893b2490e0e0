#pragma once

#include <span>
#include <vector>

namespace mica::causal {

struct CiResult {
  double stat = 0.0;
  double pval = 1.0;
};

inline constexpr double kStatClamp = 1.0 - 1e-12;
inline constexpr double kRidgeJitter = 1e-10;

/// Partial correlation of x and y given Z: Pearson correlation of the OLS
/// residuals of x-on-[1, Z] and y-on-[1, Z], with a two-sided Student-t
/// p-value on n - |Z| - 2 degrees of freedom.
CiResult parcorr_test(std::span<const double> x, std::span<const double> y,
                      const std::vector<std::span<const double>>& z);

// Residuals of v regressed on [1, Z] (intercept included).
std::vector<double> ols_residuals(std::span<const double> v,
                                  const std::vector<std::span<const double>>& z);

}  // namespace mica::causal
