#include "mica/causal/parcorr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mica/causal/student_t.hpp"
#include "mica/errors.hpp"

namespace mica::causal {

namespace {

std::vector<double> centered(std::span<const double> v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x -= mu;
  return out;
}

// In-place Cholesky of a k×k SPD matrix (row-major). False if not positive definite.
bool cholesky(std::vector<double>& a, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j) {
    double d = a[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j * k + p] * a[j * k + p];
    if (!(d > 1e-14 * std::max(1.0, std::abs(a[j * k + j])))) return false;
    const double ljj = std::sqrt(d);
    a[j * k + j] = ljj;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = a[i * k + j];
      for (std::size_t p = 0; p < j; ++p) s -= a[i * k + p] * a[j * k + p];
      a[i * k + j] = s / ljj;
    }
  }
  return true;
}

void cholesky_solve(const std::vector<double>& l, std::size_t k, std::vector<double>& b) {
  for (std::size_t i = 0; i < k; ++i) {
    double s = b[i];
    for (std::size_t p = 0; p < i; ++p) s -= l[i * k + p] * b[p];
    b[i] = s / l[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double s = b[i];
    for (std::size_t p = i + 1; p < k; ++p) s -= l[p * k + i] * b[p];
    b[i] = s / l[i * k + i];
  }
}

}  // namespace

std::vector<double> ols_residuals(std::span<const double> v,
                                  const std::vector<std::span<const double>>& z) {
  const std::size_t n = v.size();
  const std::size_t k = z.size();
  std::vector<double> r = centered(v);
  if (k == 0) return r;

  std::vector<std::vector<double>> zc;
  zc.reserve(k);
  for (const auto& col : z) {
    if (col.size() != n) throw ShapeError("ols_residuals: conditioning vector length mismatch");
    zc.push_back(centered(col));
  }
  std::vector<double> gram(k * k), rhs(k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += zc[a][t] * zc[b][t];
      gram[a * k + b] = s;
      gram[b * k + a] = s;
    }
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += zc[a][t] * r[t];
    rhs[a] = s;
  }
  std::vector<double> factor = gram;
  if (!cholesky(factor, k)) {
    factor = gram;
    for (std::size_t a = 0; a < k; ++a) factor[a * k + a] += kRidgeJitter;
    if (!cholesky(factor, k)) {
      // Exactly duplicated conditioning columns; scale the jitter to the design.
      factor = gram;
      double scale = 0.0;
      for (std::size_t a = 0; a < k; ++a) scale = std::max(scale, gram[a * k + a]);
      for (std::size_t a = 0; a < k; ++a) factor[a * k + a] += kRidgeJitter * std::max(1.0, scale);
      if (!cholesky(factor, k)) return r;  // all-zero design: nothing to regress out
    }
  }
  cholesky_solve(factor, k, rhs);
  for (std::size_t t = 0; t < n; ++t) {
    double fit = 0.0;
    for (std::size_t a = 0; a < k; ++a) fit += rhs[a] * zc[a][t];
    r[t] -= fit;
  }
  return r;
}

CiResult parcorr_test(std::span<const double> x, std::span<const double> y,
                      const std::vector<std::span<const double>>& z) {
  const std::size_t n = x.size();
  if (y.size() != n) {
    throw ShapeError("parcorr_test: x has " + std::to_string(n) + " samples, y has " +
                     std::to_string(y.size()));
  }
  if (n <= z.size() + 2) {
    throw InsufficientSamplesError("parcorr_test: " + std::to_string(n) + " samples with " +
                                   std::to_string(z.size()) + " conditions; need more than " +
                                   std::to_string(z.size() + 2));
  }
  const std::vector<double> rx = ols_residuals(x, z);
  const std::vector<double> ry = ols_residuals(y, z);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sxy += rx[t] * ry[t];
    sxx += rx[t] * rx[t];
    syy += ry[t] * ry[t];
  }
  CiResult res;
  const double denom = std::sqrt(sxx * syy);
  if (!(denom > 0.0)) return res;  // a residual is identically zero: no evidence
  res.stat = std::clamp(sxy / denom, -kStatClamp, kStatClamp);
  const double dof = static_cast<double>(n - z.size() - 2);
  const double t = res.stat * std::sqrt(dof / (1.0 - res.stat * res.stat));
  res.pval = std::clamp(student_t_two_sided(t, dof), 0.0, 1.0);
  return res;
}

}  // namespace mica::causal
