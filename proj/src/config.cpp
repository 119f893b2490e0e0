#include "mica/pipeline/config.hpp"

#include <cmath>
#include <fstream>

#include "mica/errors.hpp"

namespace mica::pipeline {

using nlohmann::json;

void SplitSpec::validate() const {
  if (train <= 0.0 || val <= 0.0 || test <= 0.0) throw ConfigError("split fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

void RunConfig::validate() const {
  if (model.lookback < 1) throw ConfigError("lookback must be >= 1");
  if (model.horizon < 1) throw ConfigError("horizon must be >= 1");
  if (optimizer.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (optimizer.lr < 0.0) throw ConfigError("learning rate must be >= 0");
  split.validate();
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& p = m.patch;
  const auto& a = m.adapter;
  return {
      {"lookback", m.lookback},
      {"horizon", m.horizon},
      {"backbone", std::string(forecast::backbone_name(m.backbone))},
      {"patch",
       {{"patch_len", p.patch_len},
        {"stride", p.stride},
        {"d_model", p.d_model},
        {"n_heads", p.n_heads},
        {"n_blocks", p.n_blocks},
        {"d_ff", p.d_ff},
        {"dropout", p.dropout},
        {"ln_eps", p.ln_eps},
        {"activation", std::string(nd::activation_name(p.activation))},
        {"rnf_variant", p.rnf_variant == backbone::RnfVariant::literal ? "literal" : "ffn_only"}}},
      {"ma_kernel", m.ma_kernel},
      {"d_model", m.d_model},
      {"per_region_decoder", m.per_region_decoder},
      {"adapter",
       {{"enabled", a.enabled},
        {"mode", std::string(adapter::adapter_mode_name(a.mode))},
        {"composition", a.composition == adapter::Composition::unified ? "unified" : "sequential"},
        {"depth", a.depth},
        {"theta_init", a.theta_init},
        {"beta", a.beta},
        {"eta", a.eta},
        {"ln_eps", a.ln_eps}}},
      {"prior",
       {{"kind", std::string(prior::prior_kind_name(c.prior_kind))},
        {"alpha", c.prior.alpha},
        {"kappa", c.prior.kappa},
        {"sign", c.prior.sign},
        {"abs_val", c.prior.use_abs}}},
      {"pcmci",
       {{"tau_max", c.pcmci.tau_max},
        {"alpha_pc", c.pcmci.alpha_pc},
        {"max_conds", c.pcmci.max_conds},
        {"mci_all_links", c.pcmci.mci_all_links}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"batch_size", c.optimizer.batch_size},
        {"max_epochs", c.optimizer.max_epochs},
        {"patience", c.optimizer.patience}}},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
      {"raw_metrics", c.raw_metrics},
      {"seed", c.seed},
      {"paths",
       {{"cases", c.paths.cases},
        {"mobility", c.paths.mobility},
        {"prior", c.paths.prior},
        {"output_dir", c.paths.output_dir}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  auto& m = c.model;
  m.lookback = j.value("lookback", m.lookback);
  m.horizon = j.value("horizon", m.horizon);
  m.backbone = forecast::parse_backbone(j.value("backbone", std::string("rnf")));
  m.ma_kernel = j.value("ma_kernel", m.ma_kernel);
  m.d_model = j.value("d_model", m.d_model);
  m.per_region_decoder = j.value("per_region_decoder", m.per_region_decoder);
  if (j.contains("patch")) {
    const json& p = j.at("patch");
    auto& pc = m.patch;
    pc.patch_len = p.value("patch_len", pc.patch_len);
    pc.stride = p.value("stride", pc.stride);
    pc.d_model = p.value("d_model", pc.d_model);
    pc.n_heads = p.value("n_heads", pc.n_heads);
    pc.n_blocks = p.value("n_blocks", pc.n_blocks);
    pc.d_ff = p.value("d_ff", pc.d_ff);
    pc.dropout = p.value("dropout", pc.dropout);
    pc.ln_eps = p.value("ln_eps", pc.ln_eps);
    pc.activation = nd::parse_activation(p.value("activation", std::string("gelu")));
    const std::string variant = p.value("rnf_variant", std::string("literal"));
    if (variant == "literal") {
      pc.rnf_variant = backbone::RnfVariant::literal;
    } else if (variant == "ffn_only") {
      pc.rnf_variant = backbone::RnfVariant::ffn_only;
    } else {
      throw ConfigError("unknown rnf_variant '" + variant + "'");
    }
  }
  m.patch.lookback = m.lookback;
  if (j.contains("adapter")) {
    const json& a = j.at("adapter");
    auto& ac = m.adapter;
    ac.enabled = a.value("enabled", ac.enabled);
    ac.mode = adapter::parse_adapter_mode(a.value("mode", std::string("full")));
    const std::string comp = a.value("composition", std::string("unified"));
    if (comp == "unified") {
      ac.composition = adapter::Composition::unified;
    } else if (comp == "sequential") {
      ac.composition = adapter::Composition::sequential;
    } else {
      throw ConfigError("unknown adapter composition '" + comp + "'");
    }
    ac.depth = a.value("depth", ac.depth);
    ac.theta_init = a.value("theta_init", ac.theta_init);
    ac.beta = a.value("beta", ac.beta);
    ac.eta = a.value("eta", ac.eta);
    ac.ln_eps = a.value("ln_eps", ac.ln_eps);
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    c.prior_kind = prior::parse_prior_kind(p.value("kind", std::string("pcmci")));
    c.prior.alpha = p.value("alpha", c.prior.alpha);
    c.prior.kappa = p.value("kappa", c.prior.kappa);
    c.prior.sign = p.value("sign", c.prior.sign);
    c.prior.use_abs = p.value("abs_val", c.prior.use_abs);
  }
  if (j.contains("pcmci")) {
    const json& p = j.at("pcmci");
    c.pcmci.tau_max = p.value("tau_max", c.pcmci.tau_max);
    c.pcmci.alpha_pc = p.value("alpha_pc", c.pcmci.alpha_pc);
    c.pcmci.mci_all_links = p.value("mci_all_links", c.pcmci.mci_all_links);
    c.pcmci.max_conds = p.value("max_conds", c.pcmci.max_conds);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    auto& oc = c.optimizer;
    oc.lr = o.value("lr", oc.lr);
    oc.beta1 = o.value("beta1", oc.beta1);
    oc.beta2 = o.value("beta2", oc.beta2);
    oc.eps = o.value("eps", oc.eps);
    oc.batch_size = o.value("batch_size", oc.batch_size);
    oc.max_epochs = o.value("max_epochs", oc.max_epochs);
    oc.patience = o.value("patience", oc.patience);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
  }
  c.raw_metrics = j.value("raw_metrics", c.raw_metrics);
  c.seed = j.value("seed", c.seed);
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    c.paths.cases = p.value("cases", std::string{});
    c.paths.mobility = p.value("mobility", std::string{});
    c.paths.prior = p.value("prior", std::string{});
    c.paths.output_dir = p.value("output_dir", std::string{});
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mica::pipeline
