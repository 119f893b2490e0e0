#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mica/causal/pcmci.hpp"
#include "mica/causal/stationary.hpp"
#include "mica/matrix.hpp"

namespace mica::prior {

enum class PriorKind { pcmci, pearson, identity };

PriorKind parse_prior_kind(std::string_view name);
std::string_view prior_kind_name(PriorKind k);

struct PriorOptions {
  double alpha = 0.05;  // significance mask on MCI p-values
  double kappa = 1.0;   // lag-kernel temperature
  // Exponent is sign·|Val|/κ when use_abs, else sign·Val/κ. sign = -1 with
  // use_abs = false reproduces exp(-Val/κ) literally.
  int sign = 1;
  bool use_abs = true;
};

/// Nonnegative C×C prior; s(i, j) is the aggregated strength of j → i.
struct PriorMatrix {
  nd::Matrix s;
  PriorKind kind = PriorKind::identity;
  PriorOptions options;
  std::vector<std::string> region_ids;
  std::string provenance;

  std::size_t regions() const { return s.rows(); }

  nlohmann::json to_json() const;
  static PriorMatrix from_json(const nlohmann::json& j);
};

/// Softmax over the lag profile, max-subtracted.
std::vector<double> lag_weights(std::span<const double> vals, double kappa, int sign = 1,
                                bool use_abs = true);

PriorMatrix build_prior(const causal::CausalTensor& tensor, const PriorOptions& opts = {});
PriorMatrix pearson_prior(const causal::StationaryPanel& panel);
PriorMatrix identity_prior(const std::vector<std::string>& region_ids);

/// Largest singular value by power iteration on mᵀm from the normalized all-ones vector.
double spectral_norm(const nd::Matrix& m, std::size_t iters = 1000, double tol = 1e-12);

std::string tensor_provenance(const causal::CausalTensor& tensor);

}  // namespace mica::prior
