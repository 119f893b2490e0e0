#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "mica/causal/parcorr.hpp"
#include "mica/causal/stationary.hpp"

namespace mica::causal {

struct PcmciOptions {
  std::size_t tau_max = 7;
  double alpha_pc = 0.2;
  std::size_t max_conds = 3;
  // false: MCI re-tests only the links that survived the PC stage (pruned links
  // keep val 0, pval 1). true: every lagged link is tested, as in the original
  // two-stage algorithm.
  bool mci_all_links = false;
};

/// A lagged candidate parent X_source,t-lag of some target, with the minimum
/// |stat| it achieved across the PC tests run so far.
struct LaggedParent {
  std::size_t source = 0;
  std::size_t lag = 1;
  double score = 0.0;
};

// parents[i] lists the surviving lagged parents of region i, strongest first.
using ParentSet = std::vector<std::vector<LaggedParent>>;

/// Signed MCI statistics and p-values for every (target i, source j, lag) link.
class CausalTensor {
 public:
  CausalTensor() = default;
  CausalTensor(std::vector<std::string> region_ids, std::size_t tau_max, double alpha_pc);

  std::size_t regions() const { return region_ids_.size(); }
  std::size_t tau_max() const { return tau_max_; }
  double alpha_pc() const { return alpha_pc_; }
  const std::vector<std::string>& region_ids() const { return region_ids_; }

  // lag is 1-based: lag ∈ [1, tau_max].
  double val(std::size_t i, std::size_t j, std::size_t lag) const { return val_[index(i, j, lag)]; }
  double pval(std::size_t i, std::size_t j, std::size_t lag) const { return pval_[index(i, j, lag)]; }
  void set(std::size_t i, std::size_t j, std::size_t lag, double val, double pval);

  const std::vector<double>& val_data() const { return val_; }
  const std::vector<double>& pval_data() const { return pval_; }

  nlohmann::json to_json() const;
  static CausalTensor from_json(const nlohmann::json& j);

  friend bool operator==(const CausalTensor&, const CausalTensor&) = default;

 private:
  std::size_t index(std::size_t i, std::size_t j, std::size_t lag) const;

  std::vector<std::string> region_ids_;
  std::size_t tau_max_ = 0;
  double alpha_pc_ = 0.0;
  std::vector<double> val_;
  std::vector<double> pval_;
};

/// Column j of the panel lagged by `lag`, over target rows t ∈ [tau_max, n).
std::vector<double> lagged_series(const StationaryPanel& panel, std::size_t j, std::size_t lag,
                                  std::size_t tau_max);

ParentSet pc_stage(const StationaryPanel& panel, const PcmciOptions& opts);
CausalTensor mci_stage(const StationaryPanel& panel, const ParentSet& parents,
                       const PcmciOptions& opts);
CausalTensor pcmci(const StationaryPanel& panel, const PcmciOptions& opts);

}  // namespace mica::causal
