#include "mica/pipeline/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "mica/errors.hpp"
#include "mica/init.hpp"

namespace mica::pipeline {

using nd::Matrix;
using nlohmann::json;

std::size_t GroundTruthGraph::max_lag() const {
  std::size_t m = 0;
  for (const auto& e : edges) m = std::max(m, e.lag);
  return m;
}

Matrix GroundTruthGraph::adjacency() const {
  Matrix a(regions, regions);
  for (const auto& e : edges) a(e.target, e.source) += std::abs(e.weight);
  return a;
}

json GroundTruthGraph::to_json(const std::vector<std::string>& region_ids) const {
  json edges_j = json::array();
  for (const auto& e : edges) {
    edges_j.push_back({{"source", e.source}, {"target", e.target}, {"lag", e.lag}, {"weight", e.weight}});
  }
  return {{"regions", regions}, {"region_ids", region_ids}, {"edges", edges_j}};
}

GroundTruthGraph GroundTruthGraph::from_json(const json& j) {
  GroundTruthGraph g;
  g.regions = j.at("regions").get<std::size_t>();
  for (const auto& e : j.at("edges")) {
    GraphEdge edge{e.at("source").get<std::size_t>(), e.at("target").get<std::size_t>(),
                   e.at("lag").get<std::size_t>(), e.at("weight").get<double>()};
    if (edge.source >= g.regions || edge.target >= g.regions || edge.lag == 0) {
      throw ConfigError("graph edge out of range");
    }
    g.edges.push_back(edge);
  }
  return g;
}

GroundTruthGraph random_dag(std::size_t regions, std::size_t edges, std::size_t max_lag, double w_min,
                            double w_max, std::uint64_t seed) {
  if (regions < 2) throw ConfigError("random_dag: need at least 2 regions");
  if (edges > regions * (regions - 1) / 2) {
    throw ConfigError("random_dag: " + std::to_string(edges) + " edges exceed the acyclic maximum for " +
                      std::to_string(regions) + " regions");
  }
  if (max_lag < 1 || w_min < 0.0 || w_max < w_min) throw ConfigError("random_dag: bad lag or weight range");
  auto rng = nd::stream_rng(seed, "graph");
  std::vector<std::size_t> perm(regions);
  for (std::size_t i = 0; i < regions; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t a = 0; a < regions; ++a) {
    for (std::size_t b = a + 1; b < regions; ++b) candidates.emplace_back(perm[a], perm[b]);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::uniform_int_distribution<std::size_t> lag(1, max_lag);
  std::uniform_real_distribution<double> w(w_min, w_max);
  GroundTruthGraph g;
  g.regions = regions;
  for (std::size_t k = 0; k < edges; ++k) {
    g.edges.push_back({candidates[k].first, candidates[k].second, lag(rng), w(rng)});
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& x, const GraphEdge& y) {
    return std::tie(x.target, x.source, x.lag) < std::tie(y.target, y.source, y.lag);
  });
  return g;
}

double companion_spectral_radius(const GroundTruthGraph& graph, double self, double coupling) {
  const std::size_t c = graph.regions;
  const std::size_t p = std::max<std::size_t>(1, graph.max_lag());
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c * p), static_cast<Eigen::Index>(c * p));
  for (std::size_t i = 0; i < c; ++i) comp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += self;
  for (const auto& e : graph.edges) {
    comp(static_cast<Eigen::Index>(e.target), static_cast<Eigen::Index>((e.lag - 1) * c + e.source)) +=
        coupling * e.weight;
  }
  for (std::size_t k = 1; k < p; ++k) {
    for (std::size_t i = 0; i < c; ++i) {
      comp(static_cast<Eigen::Index>(k * c + i), static_cast<Eigen::Index>((k - 1) * c + i)) = 1.0;
    }
  }
  Eigen::EigenSolver<Eigen::MatrixXd> solver(comp, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix simulate_var(const GroundTruthGraph& graph, double self, double coupling, std::size_t n, double noise,
                    std::size_t burn_in, std::uint64_t seed, std::string_view stream) {
  const double rho = companion_spectral_radius(graph, self, coupling);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "unstable dynamics: companion spectral radius " << rho << " >= 1";
    throw ConfigError(os.str());
  }
  const std::size_t c = graph.regions;
  const std::size_t total = n + burn_in;
  auto rng = nd::stream_rng(seed, stream);
  std::normal_distribution<double> eps(0.0, noise);
  Matrix x(total, c);
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t i = 0; i < c; ++i) {
      double v = eps(rng);
      if (t >= 1) v += self * x(t - 1, i);
      x(t, i) = v;
    }
    for (const auto& e : graph.edges) {
      if (t >= e.lag) x(t, e.target) += coupling * e.weight * x(t - e.lag, e.source);
    }
  }
  Matrix out(n, c);
  std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(burn_in * c), x.data().end(), out.data().begin());
  return out;
}

SyntheticPanels synthesize_coupled_panel(std::size_t regions, std::size_t n, const GroundTruthGraph& graph,
                                         double noise, std::uint64_t seed, const SynthOptions& opts) {
  if (graph.regions != regions) {
    throw ConfigError("graph covers " + std::to_string(graph.regions) + " regions, requested " +
                      std::to_string(regions));
  }
  if (n < 1 || !(noise > 0.0)) throw ConfigError("synth: need n >= 1 and noise > 0");
  for (const auto& e : graph.edges) {
    if (e.source >= regions || e.target >= regions || e.lag == 0) throw ConfigError("synth: edge out of range");
  }

  const Matrix mob = simulate_var(graph, opts.mobility_self, 1.0, n, noise, opts.burn_in, seed, "mobility");
  const Matrix lat =
      simulate_var(graph, opts.cases_self, opts.case_coupling, n, noise, opts.burn_in, seed, "cases");

  SyntheticPanels out;
  out.graph = graph;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < regions; ++i) ids.push_back("R" + std::to_string(i));
  std::vector<std::string> stamps;
  std::vector<std::int64_t> index;
  using namespace std::chrono;
  const sys_days start = sys_days(year(2020) / January / 1);
  for (std::size_t t = 0; t < n; ++t) {
    const sys_days d = start + days(static_cast<int>(t));
    const year_month_day ymd(d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    stamps.emplace_back(buf);
    index.push_back(d.time_since_epoch().count());
  }
  for (PanelSeries* p : {&out.cases, &out.mobility}) {
    p->timestamps = stamps;
    p->time_index = index;
    p->region_ids = ids;
    p->frequency = Frequency::daily;
    p->values = Matrix(n, regions);
  }
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < regions; ++i) {
      out.mobility.values(t, i) = opts.mobility_level + mob(t, i);
      out.cases.values(t, i) = std::max(0.0, opts.case_level + opts.case_scale * lat(t, i));
    }
  }
  return out;
}

}  // namespace mica::pipeline
