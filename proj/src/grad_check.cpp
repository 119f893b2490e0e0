#include "mica/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace mica::nd {

namespace {

double evaluate(const LossBuilder& f) {
  Tape tape(false);
  return f(tape).scalar();
}

}  // namespace

double grad_check(const LossBuilder& f, std::span<Param* const> params,
                  const GradCheckOptions& opts) {
  for (Param* p : params) p->zero_grad();
  {
    Tape tape(false);
    Var loss = f(tape);
    tape.backward(loss);
  }

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (Param* p : params) {
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opts.h;
      const double up = evaluate(f);
      p->value[i] = saved - opts.h;
      const double down = evaluate(f);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double err = std::abs(p->grad[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mica::nd
