#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mica/matrix.hpp"
#include "mica/panel.hpp"

namespace mica::pipeline {

struct GraphEdge {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t lag = 1;
  double weight = 0.0;

  bool operator==(const GraphEdge&) const = default;
};

/// Ground-truth lagged directed graph over C regions.
struct GroundTruthGraph {
  std::size_t regions = 0;
  std::vector<GraphEdge> edges;

  std::size_t max_lag() const;
  // C×C matrix of summed |weight| per (target, source) pair.
  nd::Matrix adjacency() const;
  nlohmann::json to_json(const std::vector<std::string>& region_ids) const;
  static GroundTruthGraph from_json(const nlohmann::json& j);
};

// `edges` distinct (source, target) pairs with source < target in a random
// permutation order, lags uniform in [1, max_lag], |weight| uniform in [w_min, w_max].
GroundTruthGraph random_dag(std::size_t regions, std::size_t edges, std::size_t max_lag, double w_min,
                            double w_max, std::uint64_t seed);

struct SynthOptions {
  double mobility_self = 0.5;  // own-lag coefficient of the mobility VAR
  double cases_self = 0.8;     // own-lag coefficient of the latent case process
  double case_coupling = 1.0;  // multiplier on graph weights for the case process
  double case_level = 20.0;
  double case_scale = 2.0;
  double mobility_level = 100.0;
  std::size_t burn_in = 200;
};

// Largest |eigenvalue| of the VAR companion matrix with `self` on the own lag-1 diagonal.
double companion_spectral_radius(const GroundTruthGraph& graph, double self, double coupling = 1.0);

struct SyntheticPanels {
  PanelSeries cases;
  PanelSeries mobility;
  GroundTruthGraph graph;
};

SyntheticPanels synthesize_coupled_panel(std::size_t regions, std::size_t n, const GroundTruthGraph& graph,
                                         double noise, std::uint64_t seed, const SynthOptions& opts = {});

// Plain VAR sample (no clipping, no level shift) driven by the graph.
nd::Matrix simulate_var(const GroundTruthGraph& graph, double self, double coupling, std::size_t n,
                        double noise, std::size_t burn_in, std::uint64_t seed, std::string_view stream);

}  // namespace mica::pipeline
