#include "mica/pipeline/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "mica/errors.hpp"

namespace mica::pipeline {

RunConfig cell_config(const RunConfig& base, forecast::BackboneKind backbone, const std::string& prior,
                      std::size_t horizon, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.model.backbone = backbone;
  cfg.model.horizon = horizon;
  cfg.seed = seed;
  if (prior == "none") {
    cfg.model.adapter.enabled = false;
  } else {
    cfg.model.adapter.enabled = true;
    cfg.prior_kind = prior::parse_prior_kind(prior);
  }
  return cfg;
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MICA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

std::vector<MetricsReport> run_bench(const BenchGrid& grid, const PanelSeries& cases, const PanelSeries* mobility,
                                     std::size_t threads) {
  for (const auto& p : grid.priors) {
    if (p != "none") prior::parse_prior_kind(p);
  }
  if (grid.cells() == 0) throw ConfigError("bench grid is empty");

  struct Cell {
    RunConfig cfg;
    std::string prior;
  };
  std::vector<Cell> cells;
  for (auto b : grid.backbones) {
    for (const auto& p : grid.priors) {
      for (auto h : grid.horizons) {
        for (auto s : grid.seeds) cells.push_back({cell_config(grid.base, b, p, h, s), p});
      }
    }
  }

  // Priors only depend on the training period, which does not move with horizon or seed.
  std::map<std::string, std::optional<prior::PriorMatrix>> priors;
  for (const auto& c : cells) {
    if (!priors.count(c.prior)) priors[c.prior] = resolve_prior(c.cfg, cases, mobility);
  }

  std::vector<MetricsReport> out(cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        out[i] = fit_with_prior(cells[i].cfg, cases, priors.at(cells[i].prior)).test;
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(cells.size());
        return;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsReport>& runs) {
  std::vector<AggregateRow> rows;
  std::size_t i = 0;
  while (i < runs.size()) {
    std::size_t j = i;
    while (j < runs.size() && runs[j].backbone == runs[i].backbone && runs[j].prior == runs[i].prior &&
           runs[j].horizon == runs[i].horizon) {
      ++j;
    }
    for (const char* metric : {"rmse", "mae"}) {
      AggregateRow row{runs[i].backbone, runs[i].prior, runs[i].horizon, metric, 0.0, 0.0, j - i};
      const bool is_rmse = std::string_view(metric) == "rmse";
      for (std::size_t k = i; k < j; ++k) row.mean += is_rmse ? runs[k].metrics.rmse : runs[k].metrics.mae;
      row.mean /= static_cast<double>(row.n);
      if (row.n > 1) {
        double ss = 0.0;
        for (std::size_t k = i; k < j; ++k) {
          const double v = is_rmse ? runs[k].metrics.rmse : runs[k].metrics.mae;
          ss += (v - row.mean) * (v - row.mean);
        }
        row.std = std::sqrt(ss / static_cast<double>(row.n - 1));
      }
      rows.push_back(row);
    }
    i = j;
  }
  return rows;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << kAggregateHeader << '\n';
  for (const auto& r : rows) {
    os << r.backbone << ',' << r.prior << ',' << r.horizon << ',' << r.metric << ',' << r.mean << ',' << r.std
       << ',' << r.n << '\n';
  }
  return os.str();
}

std::string runs_csv(const std::vector<MetricsReport>& runs) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : runs) out += metrics_csv_row(r) + "\n";
  return out;
}

}  // namespace mica::pipeline
