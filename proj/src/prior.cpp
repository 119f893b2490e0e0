#include "mica/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mica/errors.hpp"
#include "mica/init.hpp"

namespace mica::prior {

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_options(const PriorOptions& o) {
  if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw ConfigError("prior: alpha must lie in (0, 1)");
  if (!(o.kappa > 0.0)) throw ConfigError("prior: kappa must be positive");
  if (o.sign != 1 && o.sign != -1) throw ConfigError("prior: sign must be +1 or -1");
}

}  // namespace

PriorKind parse_prior_kind(std::string_view name) {
  if (name == "pcmci") return PriorKind::pcmci;
  if (name == "pearson") return PriorKind::pearson;
  if (name == "identity") return PriorKind::identity;
  throw ConfigError("unknown prior kind '" + std::string(name) + "'");
}

std::string_view prior_kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::pcmci: return "pcmci";
    case PriorKind::pearson: return "pearson";
    case PriorKind::identity: return "identity";
  }
  return "?";
}

std::vector<double> lag_weights(std::span<const double> vals, double kappa, int sign,
                                bool use_abs) {
  if (!(kappa > 0.0)) throw ConfigError("lag_weights: kappa must be positive");
  std::vector<double> w(vals.size());
  if (vals.empty()) return w;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < vals.size(); ++k) {
    const double v = use_abs ? std::abs(vals[k]) : vals[k];
    w[k] = static_cast<double>(sign) * v / kappa;
    mx = std::max(mx, w[k]);
  }
  double z = 0.0;
  for (double& x : w) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : w) x /= z;
  return w;
}

PriorMatrix build_prior(const causal::CausalTensor& tensor, const PriorOptions& opts) {
  check_options(opts);
  const std::size_t c = tensor.regions();
  const std::size_t tau = tensor.tau_max();
  PriorMatrix p;
  p.s = nd::Matrix(c, c);
  p.kind = PriorKind::pcmci;
  p.options = opts;
  p.region_ids = tensor.region_ids();
  p.provenance = tensor_provenance(tensor);
  std::vector<double> profile(tau);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t lag = 1; lag <= tau; ++lag) profile[lag - 1] = tensor.val(i, j, lag);
      const std::vector<double> w = lag_weights(profile, opts.kappa, opts.sign, opts.use_abs);
      double acc = 0.0;
      for (std::size_t lag = 1; lag <= tau; ++lag) {
        if (tensor.pval(i, j, lag) < opts.alpha) acc += w[lag - 1] * std::abs(profile[lag - 1]);
      }
      p.s(i, j) = acc;
    }
  }
  return p;
}

PriorMatrix pearson_prior(const causal::StationaryPanel& panel) {
  const std::size_t n = panel.length();
  const std::size_t c = panel.regions();
  if (n < 3) throw InsufficientDataError("pearson_prior: need at least 3 rows");
  std::vector<std::vector<double>> z(c, std::vector<double>(n));
  for (std::size_t k = 0; k < c; ++k) {
    double mu = 0.0;
    for (std::size_t t = 0; t < n; ++t) mu += panel.data(t, k);
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      z[k][t] = panel.data(t, k) - mu;
      ss += z[k][t] * z[k][t];
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > causal::kDegenerateSigma)) {
      throw DegenerateSeriesError("pearson_prior: region '" + panel.region_ids[k] +
                                  "' is constant");
    }
    const double norm = std::sqrt(ss);
    for (double& v : z[k]) v /= norm;
  }
  PriorMatrix p;
  p.s = nd::Matrix(c, c);
  p.kind = PriorKind::pearson;
  p.region_ids = panel.region_ids;
  for (std::size_t i = 0; i < c; ++i) {
    p.s(i, i) = 1.0;
    for (std::size_t j = i + 1; j < c; ++j) {
      double r = 0.0;
      for (std::size_t t = 0; t < n; ++t) r += z[i][t] * z[j][t];
      r = std::min(1.0, std::abs(r));
      p.s(i, j) = r;
      p.s(j, i) = r;
    }
  }
  const std::string bytes(reinterpret_cast<const char*>(panel.data.data().data()),
                          panel.data.size() * sizeof(double));
  p.provenance = "panel:" + hex64(nd::fnv1a(bytes));
  return p;
}

PriorMatrix identity_prior(const std::vector<std::string>& region_ids) {
  PriorMatrix p;
  p.s = nd::Matrix::identity(region_ids.size());
  p.kind = PriorKind::identity;
  p.region_ids = region_ids;
  p.provenance = "identity:" + std::to_string(region_ids.size());
  return p;
}

double spectral_norm(const nd::Matrix& m, std::size_t iters, double tol) {
  if (iters < 1) throw ConfigError("spectral_norm: iters must be >= 1");
  const std::size_t n = m.cols();
  if (n == 0 || m.rows() == 0) return 0.0;
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> w(m.rows()), u(n);
  double sigma = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += m(r, c) * v[c];
      w[r] = s;
    }
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) u[c] += m(r, c) * w[r];
    double un = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(un);
    const double prev = sigma;
    sigma = wn;
    if (un == 0.0) break;
    for (std::size_t c = 0; c < n; ++c) v[c] = u[c] / un;
    if (it > 0 && std::abs(sigma - prev) < tol) break;
  }
  // One more half-step: ‖m v‖ for the final normalized v.
  double wn = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += m(r, c) * v[c];
    wn += s * s;
  }
  return std::max(sigma, std::sqrt(wn));
}

std::string tensor_provenance(const causal::CausalTensor& tensor) {
  return "tensor:" + hex64(nd::fnv1a(tensor.to_json().dump()));
}

nlohmann::json PriorMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    rows.push_back(std::vector<double>(s.row(i).begin(), s.row(i).end()));
  }
  return {{"region_ids", region_ids},
          {"kind", std::string(prior_kind_name(kind))},
          {"alpha", options.alpha},
          {"kappa", options.kappa},
          {"sign", options.sign},
          {"abs_val", options.use_abs},
          {"s", std::move(rows)},
          {"provenance", provenance}};
}

PriorMatrix PriorMatrix::from_json(const nlohmann::json& j) {
  PriorMatrix p;
  p.region_ids = j.at("region_ids").get<std::vector<std::string>>();
  p.kind = parse_prior_kind(j.at("kind").get<std::string>());
  p.options.alpha = j.value("alpha", 0.05);
  p.options.kappa = j.value("kappa", 1.0);
  p.options.sign = j.value("sign", 1);
  p.options.use_abs = j.value("abs_val", true);
  p.provenance = j.value("provenance", std::string{});
  const auto& rows = j.at("s");
  const std::size_t c = p.region_ids.size();
  if (rows.size() != c) throw ShapeError("PriorMatrix JSON: expected " + std::to_string(c) + " rows");
  p.s = nd::Matrix(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    if (rows[i].size() != c) throw ShapeError("PriorMatrix JSON: ragged row " + std::to_string(i));
    for (std::size_t k = 0; k < c; ++k) {
      const double v = rows[i][k].get<double>();
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ShapeError("PriorMatrix JSON: entries must be finite and nonnegative");
      }
      p.s(i, k) = v;
    }
  }
  return p;
}

}  // namespace mica::prior
