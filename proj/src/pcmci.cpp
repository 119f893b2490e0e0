#include "mica/causal/pcmci.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "mica/errors.hpp"

namespace mica::causal {

namespace {

// All lagged columns X_j,t-lag (lag 0..tau_max) over the shared effective rows.
class LagCache {
 public:
  LagCache(const StationaryPanel& panel, std::size_t tau_max) : tau_max_(tau_max) {
    series_.reserve(panel.regions() * (tau_max + 1));
    for (std::size_t j = 0; j < panel.regions(); ++j)
      for (std::size_t lag = 0; lag <= tau_max; ++lag)
        series_.push_back(lagged_series(panel, j, lag, tau_max));
  }

  std::span<const double> get(std::size_t j, std::size_t lag) const {
    return series_[j * (tau_max_ + 1) + lag];
  }

 private:
  std::size_t tau_max_;
  std::vector<std::vector<double>> series_;
};

void validate(const StationaryPanel& panel, const PcmciOptions& opts) {
  if (opts.tau_max < 1) throw ConfigError("pcmci: tau_max must be >= 1");
  if (!(opts.alpha_pc > 0.0 && opts.alpha_pc <= 1.0)) {
    throw ConfigError("pcmci: alpha_pc must lie in (0, 1]");
  }
  if (panel.regions() == 0) throw ConfigError("pcmci: panel has no regions");
  if (panel.length() <= opts.tau_max + 2) {
    throw InsufficientSamplesError("pcmci: panel of " + std::to_string(panel.length()) +
                                   " rows is too short for tau_max " +
                                   std::to_string(opts.tau_max));
  }
}

bool stronger(const LaggedParent& a, const LaggedParent& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.source != b.source) return a.source < b.source;
  return a.lag < b.lag;
}

}  // namespace

CausalTensor::CausalTensor(std::vector<std::string> region_ids, std::size_t tau_max,
                           double alpha_pc)
    : region_ids_(std::move(region_ids)),
      tau_max_(tau_max),
      alpha_pc_(alpha_pc),
      val_(region_ids_.size() * region_ids_.size() * tau_max, 0.0),
      pval_(val_.size(), 1.0) {}

std::size_t CausalTensor::index(std::size_t i, std::size_t j, std::size_t lag) const {
  if (i >= regions() || j >= regions() || lag < 1 || lag > tau_max_) {
    throw ShapeError("CausalTensor: link (" + std::to_string(i) + ", " + std::to_string(j) +
                     ", lag " + std::to_string(lag) + ") out of range");
  }
  return (i * regions() + j) * tau_max_ + (lag - 1);
}

void CausalTensor::set(std::size_t i, std::size_t j, std::size_t lag, double val, double pval) {
  const std::size_t k = index(i, j, lag);
  val_[k] = val;
  pval_[k] = pval;
}

nlohmann::json CausalTensor::to_json() const {
  const std::size_t c = regions();
  nlohmann::json val = nlohmann::json::array();
  nlohmann::json pval = nlohmann::json::array();
  for (std::size_t i = 0; i < c; ++i) {
    nlohmann::json vi = nlohmann::json::array(), pi = nlohmann::json::array();
    for (std::size_t j = 0; j < c; ++j) {
      nlohmann::json vj = nlohmann::json::array(), pj = nlohmann::json::array();
      for (std::size_t lag = 1; lag <= tau_max_; ++lag) {
        vj.push_back(this->val(i, j, lag));
        pj.push_back(this->pval(i, j, lag));
      }
      vi.push_back(std::move(vj));
      pi.push_back(std::move(pj));
    }
    val.push_back(std::move(vi));
    pval.push_back(std::move(pi));
  }
  return {{"region_ids", region_ids_},
          {"tau_max", tau_max_},
          {"alpha_pc", alpha_pc_},
          {"val", std::move(val)},
          {"pval", std::move(pval)}};
}

CausalTensor CausalTensor::from_json(const nlohmann::json& j) {
  CausalTensor t(j.at("region_ids").get<std::vector<std::string>>(),
                 j.at("tau_max").get<std::size_t>(), j.at("alpha_pc").get<double>());
  const std::size_t c = t.regions();
  const auto& val = j.at("val");
  const auto& pval = j.at("pval");
  if (val.size() != c || pval.size() != c) throw ShapeError("CausalTensor JSON: bad outer length");
  for (std::size_t i = 0; i < c; ++i) {
    if (val[i].size() != c || pval[i].size() != c) {
      throw ShapeError("CausalTensor JSON: bad row length");
    }
    for (std::size_t s = 0; s < c; ++s) {
      if (val[i][s].size() != t.tau_max() || pval[i][s].size() != t.tau_max()) {
        throw ShapeError("CausalTensor JSON: bad lag length");
      }
      for (std::size_t lag = 1; lag <= t.tau_max(); ++lag) {
        const double p = pval[i][s][lag - 1].get<double>();
        if (!(p >= 0.0 && p <= 1.0)) throw ShapeError("CausalTensor JSON: p-value outside [0,1]");
        t.set(i, s, lag, val[i][s][lag - 1].get<double>(), p);
      }
    }
  }
  return t;
}

std::vector<double> lagged_series(const StationaryPanel& panel, std::size_t j, std::size_t lag,
                                  std::size_t tau_max) {
  const std::size_t n = panel.length();
  std::vector<double> out;
  if (n <= tau_max) return out;
  out.reserve(n - tau_max);
  for (std::size_t t = tau_max; t < n; ++t) out.push_back(panel.data(t - lag, j));
  return out;
}

ParentSet pc_stage(const StationaryPanel& panel, const PcmciOptions& opts) {
  validate(panel, opts);
  const std::size_t c = panel.regions();
  const LagCache cache(panel, opts.tau_max);
  ParentSet result(c);

  for (std::size_t i = 0; i < c; ++i) {
    std::vector<LaggedParent> parents;
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t lag = 1; lag <= opts.tau_max; ++lag)
        parents.push_back({j, lag, std::numeric_limits<double>::infinity()});

    const auto target = cache.get(i, 0);
    for (std::size_t q = 0; q <= opts.max_conds; ++q) {
      if (parents.size() <= q) break;
      std::vector<bool> drop(parents.size(), false);
      for (std::size_t k = 0; k < parents.size(); ++k) {
        std::vector<std::span<const double>> conds;
        for (std::size_t m = 0; m < parents.size() && conds.size() < q; ++m) {
          if (m != k) conds.push_back(cache.get(parents[m].source, parents[m].lag));
        }
        const CiResult r = parcorr_test(cache.get(parents[k].source, parents[k].lag), target, conds);
        parents[k].score = std::min(parents[k].score, std::abs(r.stat));
        if (r.pval > opts.alpha_pc) drop[k] = true;
      }
      std::vector<LaggedParent> kept;
      for (std::size_t k = 0; k < parents.size(); ++k)
        if (!drop[k]) kept.push_back(parents[k]);
      parents = std::move(kept);
      std::sort(parents.begin(), parents.end(), stronger);
    }
    result[i] = std::move(parents);
  }
  return result;
}

CausalTensor mci_stage(const StationaryPanel& panel, const ParentSet& parents,
                       const PcmciOptions& opts) {
  validate(panel, opts);
  const std::size_t c = panel.regions();
  if (parents.size() != c) {
    throw ShapeError("mci_stage: parent set covers " + std::to_string(parents.size()) +
                     " regions, panel has " + std::to_string(c));
  }
  const LagCache cache(panel, opts.tau_max);
  CausalTensor tensor(panel.region_ids, opts.tau_max, opts.alpha_pc);

  for (std::size_t i = 0; i < c; ++i) {
    const auto target = cache.get(i, 0);
    std::vector<LaggedParent> links = parents[i];
    if (opts.mci_all_links) {
      links.clear();
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t lag = 1; lag <= opts.tau_max; ++lag) links.push_back({j, lag, 0.0});
      }
    }
    for (const LaggedParent& link : links) {
      std::vector<std::pair<std::size_t, std::size_t>> cond_keys;
      auto add_cond = [&](std::size_t src, std::size_t lag) {
        if (lag > opts.tau_max) return;
        if (src == link.source && lag == link.lag) return;
        for (const auto& key : cond_keys)
          if (key.first == src && key.second == lag) return;
        cond_keys.emplace_back(src, lag);
      };
      std::size_t taken = 0;
      for (const LaggedParent& p : parents[i]) {
        if (taken == opts.max_conds) break;
        if (p.source == link.source && p.lag == link.lag) continue;
        add_cond(p.source, p.lag);
        ++taken;
      }
      taken = 0;
      for (const LaggedParent& p : parents[link.source]) {
        if (taken == opts.max_conds) break;
        add_cond(p.source, p.lag + link.lag);
        ++taken;
      }
      std::vector<std::span<const double>> conds;
      for (const auto& [src, lag] : cond_keys) conds.push_back(cache.get(src, lag));
      const CiResult r = parcorr_test(cache.get(link.source, link.lag), target, conds);
      tensor.set(i, link.source, link.lag, r.stat, r.pval);
    }
  }
  return tensor;
}

CausalTensor pcmci(const StationaryPanel& panel, const PcmciOptions& opts) {
  return mci_stage(panel, pc_stage(panel, opts), opts);
}

}  // namespace mica::causal
