// Command-line front end: discover, prior, train, evaluate, bench, synth.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mica/causal/pcmci.hpp"
#include "mica/causal/stationary.hpp"
#include "mica/errors.hpp"
#include "mica/pipeline/bench.hpp"
#include "mica/pipeline/config.hpp"
#include "mica/pipeline/data.hpp"
#include "mica/pipeline/synth.hpp"
#include "mica/pipeline/train.hpp"
#include "mica/prior.hpp"

namespace fs = std::filesystem;
using namespace mica;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::size_t default_train_end(std::size_t n, const pipeline::SplitSpec& split) {
  return static_cast<std::size_t>(std::floor(split.train * static_cast<double>(n)));
}

struct DiscoverArgs {
  std::string mobility, out = "-";
  std::size_t tau_max = 7, max_conds = 3;
  double alpha_pc = 0.2;
  std::optional<std::size_t> train_end;
};

int run_discover(const DiscoverArgs& a) {
  const PanelSeries mob = pipeline::load_panel_csv(a.mobility);
  const std::size_t end = a.train_end.value_or(default_train_end(mob.length(), {}));
  causal::PcmciOptions opts;
  opts.tau_max = a.tau_max;
  opts.alpha_pc = a.alpha_pc;
  opts.max_conds = a.max_conds;
  const auto tensor = causal::pcmci(causal::preprocess_stationary(mob, end), opts);
  write_text(a.out, tensor.to_json().dump(1) + "\n");
  return 0;
}

struct PriorArgs {
  std::string tensor, mobility, cases, kind = "pcmci", out = "-";
  double alpha = 0.05, kappa = 1.0;
  int sign = 1;
  bool signed_val = false;
  std::optional<std::size_t> train_end;
};

int run_prior(const PriorArgs& a) {
  const prior::PriorKind kind = prior::parse_prior_kind(a.kind);
  prior::PriorMatrix p;
  if (kind == prior::PriorKind::pcmci) {
    if (a.tensor.empty()) throw ConfigError("--kind pcmci needs --tensor");
    prior::PriorOptions opts;
    opts.alpha = a.alpha;
    opts.kappa = a.kappa;
    opts.sign = a.sign;
    opts.use_abs = !a.signed_val;
    p = prior::build_prior(causal::CausalTensor::from_json(read_json(a.tensor)), opts);
  } else if (kind == prior::PriorKind::pearson) {
    if (a.mobility.empty()) throw ConfigError("--kind pearson needs --mobility");
    const PanelSeries mob = pipeline::load_panel_csv(a.mobility);
    const std::size_t end = a.train_end.value_or(default_train_end(mob.length(), {}));
    p = prior::pearson_prior(causal::preprocess_stationary(mob, end));
  } else {
    std::vector<std::string> ids;
    if (!a.tensor.empty()) {
      ids = causal::CausalTensor::from_json(read_json(a.tensor)).region_ids();
    } else if (!a.cases.empty()) {
      ids = pipeline::load_panel_csv(a.cases).region_ids;
    } else if (!a.mobility.empty()) {
      ids = pipeline::load_panel_csv(a.mobility).region_ids;
    } else {
      throw ConfigError("--kind identity needs --tensor, --cases or --mobility for region ids");
    }
    p = prior::identity_prior(ids);
  }
  write_text(a.out, p.to_json().dump(1) + "\n");
  return 0;
}

struct TrainArgs {
  std::string cases, mobility, prior, config, checkpoint, metrics = "-";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> horizon;
  std::string backbone;
  bool raw = false;
};

pipeline::RunConfig load_config(const std::string& path) {
  return path.empty() ? pipeline::RunConfig{} : pipeline::load_run_config(path);
}

int run_train(const TrainArgs& a) {
  pipeline::RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.horizon) cfg.model.horizon = *a.horizon;
  if (!a.backbone.empty()) cfg.model.backbone = forecast::parse_backbone(a.backbone);
  if (a.raw) cfg.raw_metrics = true;
  cfg.paths.cases = a.cases;
  cfg.paths.mobility = a.mobility;
  cfg.paths.prior = a.prior;
  cfg.validate();

  const PanelSeries cases = pipeline::load_panel_csv(a.cases);
  std::optional<PanelSeries> mobility;
  if (!a.mobility.empty()) mobility = pipeline::load_panel_csv(a.mobility);

  pipeline::FitResult res;
  if (!a.prior.empty() && cfg.model.adapter.enabled) {
    res = pipeline::fit_with_prior(cfg, cases, prior::PriorMatrix::from_json(read_json(a.prior)));
  } else {
    res = pipeline::fit(cfg, cases, mobility ? &*mobility : nullptr);
  }
  if (!a.checkpoint.empty()) {
    const fs::path p(a.checkpoint);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    res.state.save(a.checkpoint);
  }
  write_text(a.metrics, pipeline::runs_csv({res.test}));
  std::cerr << "trained " << res.log.epochs << " epochs, best epoch " << res.state.best_epoch
            << ", val loss " << res.state.best_val << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, cases, metrics = "-", split = "test";
  bool raw = false;
};

int run_evaluate(const EvaluateArgs& a) {
  pipeline::ModelState st = pipeline::ModelState::load(a.checkpoint);
  if (a.raw) st.config.raw_metrics = true;
  const PanelSeries cases = pipeline::load_panel_csv(a.cases);
  const auto& mc = st.config.model;
  const auto ranges = pipeline::chronological_split(cases.length(), st.config.split, mc.lookback, mc.horizon);
  pipeline::IndexRange r = ranges.test;
  if (a.split == "val") r = ranges.val;
  if (a.split == "train") r = ranges.train;
  write_text(a.metrics, pipeline::runs_csv({pipeline::evaluate(st, cases, r)}));
  return 0;
}

struct BenchArgs {
  std::string cases, mobility, config, out = "-", runs;
  std::vector<std::string> backbones{"rnf", "dlinear"};
  std::vector<std::string> priors{"none", "identity", "pearson", "pcmci"};
  std::vector<std::size_t> horizons{7, 14, 21, 28};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

int run_bench(const BenchArgs& a) {
  pipeline::BenchGrid grid;
  grid.base = load_config(a.config);
  grid.backbones.clear();
  for (const auto& b : a.backbones) grid.backbones.push_back(forecast::parse_backbone(b));
  grid.priors = a.priors;
  grid.horizons = a.horizons;
  grid.seeds = a.seeds;
  const PanelSeries cases = pipeline::load_panel_csv(a.cases);
  std::optional<PanelSeries> mobility;
  if (!a.mobility.empty()) mobility = pipeline::load_panel_csv(a.mobility);
  const auto runs = pipeline::run_bench(grid, cases, mobility ? &*mobility : nullptr, pipeline::worker_threads());
  if (!a.runs.empty()) write_text(a.runs, pipeline::runs_csv(runs));
  write_text(a.out, pipeline::aggregate_csv(pipeline::aggregate(runs)));
  return 0;
}

struct SynthArgs {
  std::size_t regions = 10, length = 1500, edges = 12, max_lag = 3;
  double noise = 1.0, w_min = 0.3, w_max = 0.6;
  std::uint64_t seed = 0;
  pipeline::SynthOptions opts;
  std::string out_dir = ".";
};

int run_synth(const SynthArgs& a) {
  const auto graph = pipeline::random_dag(a.regions, a.edges, a.max_lag, a.w_min, a.w_max, a.seed);
  const auto panels = pipeline::synthesize_coupled_panel(a.regions, a.length, graph, a.noise, a.seed, a.opts);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  pipeline::write_panel_csv(panels.cases, (dir / "cases.csv").string());
  pipeline::write_panel_csv(panels.mobility, (dir / "mobility.csv").string());
  write_text((dir / "graph.json").string(), graph.to_json(panels.cases.region_ids).dump(1) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiCA: mobility-causal prior adapter for epidemic forecasting"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  DiscoverArgs da;
  auto* discover = app.add_subcommand("discover", "Run PCMCI on a mobility panel and write the causal tensor JSON");
  discover->add_option("--mobility", da.mobility, "Mobility CSV (date,<regions...>)")->required()->check(CLI::ExistingFile);
  discover->add_option("--out", da.out, "Output tensor JSON ('-' for stdout)");
  discover->add_option("--tau-max", da.tau_max, "Maximum lag")->capture_default_str()->check(CLI::PositiveNumber);
  discover->add_option("--alpha-pc", da.alpha_pc, "PC-stage significance level")->capture_default_str();
  discover->add_option("--max-conds", da.max_conds, "Maximum conditioning-set size")->capture_default_str();
  discover->add_option("--train-end", da.train_end, "Use raw rows [0, train-end) only (default: 60% of rows)");

  PriorArgs pa;
  auto* prior_cmd = app.add_subcommand("prior", "Build a spatial prior matrix JSON");
  prior_cmd->add_option("--tensor", pa.tensor, "Causal tensor JSON from 'discover'")->check(CLI::ExistingFile);
  prior_cmd->add_option("--kind", pa.kind, "pcmci | pearson | identity")
      ->capture_default_str()
      ->check(CLI::IsMember({"pcmci", "pearson", "identity"}));
  prior_cmd->add_option("--alpha", pa.alpha, "Significance mask on MCI p-values")->capture_default_str();
  prior_cmd->add_option("--kappa", pa.kappa, "Lag-kernel temperature")->capture_default_str();
  prior_cmd->add_option("--sign", pa.sign, "Exponent sign of the lag kernel (+1 or -1)")
      ->capture_default_str()
      ->check(CLI::IsMember({-1, 1}));
  prior_cmd->add_flag("--signed-val", pa.signed_val, "Use signed Val rather than |Val| in the lag kernel");
  prior_cmd->add_option("--mobility", pa.mobility, "Mobility CSV (pearson, or region ids for identity)")
      ->check(CLI::ExistingFile);
  prior_cmd->add_option("--cases", pa.cases, "Case CSV (region ids for identity)")->check(CLI::ExistingFile);
  prior_cmd->add_option("--train-end", pa.train_end, "Pearson: raw rows [0, train-end) only");
  prior_cmd->add_option("--out", pa.out, "Output prior JSON ('-' for stdout)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit a forecaster and write a checkpoint plus test metrics");
  train->add_option("--cases", ta.cases, "Case CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--config", ta.config, "RunConfig JSON (defaults when omitted)")->check(CLI::ExistingFile);
  train->add_option("--prior", ta.prior, "Prior JSON from 'prior'")->check(CLI::ExistingFile);
  train->add_option("--mobility", ta.mobility, "Mobility CSV, used when no --prior is given")
      ->check(CLI::ExistingFile);
  train->add_option("--checkpoint", ta.checkpoint, "Output checkpoint JSON");
  train->add_option("--metrics", ta.metrics, "Output metrics CSV ('-' for stdout)");
  train->add_option("--seed", ta.seed, "Override the config seed");
  train->add_option("--horizon", ta.horizon, "Override the config horizon");
  train->add_option("--backbone", ta.backbone, "Override the backbone (rnf | dlinear | full_attention)");
  train->add_flag("--raw", ta.raw, "Report metrics on the raw (inverse-transformed) scale");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a case panel");
  evaluate->add_option("--checkpoint", ea.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--cases", ea.cases, "Case CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--metrics", ea.metrics, "Output metrics CSV ('-' for stdout)");
  evaluate->add_option("--split", ea.split, "train | val | test")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_flag("--raw", ea.raw, "Report metrics on the raw (inverse-transformed) scale");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Run the backbone x prior x horizon x seed grid");
  bench->add_option("--cases", ba.cases, "Case CSV")->required()->check(CLI::ExistingFile);
  bench->add_option("--mobility", ba.mobility, "Mobility CSV")->check(CLI::ExistingFile);
  bench->add_option("--config", ba.config, "Base RunConfig JSON")->check(CLI::ExistingFile);
  bench->add_option("--backbones", ba.backbones, "Backbones")->capture_default_str()->delimiter(',');
  bench->add_option("--priors", ba.priors, "Priors (none, identity, pearson, pcmci)")
      ->capture_default_str()
      ->delimiter(',')
      ->check(CLI::IsMember({"none", "identity", "pearson", "pcmci"}));
  bench->add_option("--horizons", ba.horizons, "Horizons")->capture_default_str()->delimiter(',');
  bench->add_option("--seeds", ba.seeds, "Seeds")->capture_default_str()->delimiter(',');
  bench->add_option("--out", ba.out, "Aggregate CSV ('-' for stdout)");
  bench->add_option("--runs", ba.runs, "Per-run metrics CSV");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write synthetic coupled case/mobility panels and their graph");
  synth->add_option("--regions", sa.regions, "Number of regions")->capture_default_str();
  synth->add_option("--length", sa.length, "Time steps")->capture_default_str();
  synth->add_option("--edges", sa.edges, "Planted directed edges")->capture_default_str();
  synth->add_option("--max-lag", sa.max_lag, "Largest edge lag")->capture_default_str();
  synth->add_option("--w-min", sa.w_min, "Smallest edge weight")->capture_default_str();
  synth->add_option("--w-max", sa.w_max, "Largest edge weight")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Innovation std")->capture_default_str();
  synth->add_option("--mobility-self", sa.opts.mobility_self, "Own-lag coefficient for mobility")
      ->capture_default_str();
  synth->add_option("--cases-self", sa.opts.cases_self, "Own-lag coefficient for cases")->capture_default_str();
  synth->add_option("--case-coupling", sa.opts.case_coupling, "Edge-weight multiplier for cases")
      ->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--out-dir", sa.out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*discover) return run_discover(da);
    if (*prior_cmd) return run_prior(pa);
    if (*train) return run_train(ta);
    if (*evaluate) return run_evaluate(ea);
    if (*bench) return run_bench(ba);
    if (*synth) return run_synth(sa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
