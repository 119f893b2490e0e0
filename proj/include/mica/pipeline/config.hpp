#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "mica/causal/pcmci.hpp"
#include "mica/forecaster.hpp"
#include "mica/prior.hpp"

namespace mica::pipeline {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const;
};

struct Paths {
  std::string cases;
  std::string mobility;
  std::string prior;
  std::string output_dir;
};

/// Everything needed to replay a run bit-for-bit.
struct RunConfig {
  forecast::ModelConfig model;  // regions is filled in from the data
  prior::PriorKind prior_kind = prior::PriorKind::pcmci;
  prior::PriorOptions prior;
  causal::PcmciOptions pcmci;
  OptimizerConfig optimizer;
  SplitSpec split;
  bool raw_metrics = false;
  std::uint64_t seed = 0;
  Paths paths;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace mica::pipeline
