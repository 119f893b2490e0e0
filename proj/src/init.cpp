#include "mica/init.hpp"

#include <cmath>

namespace mica::nd {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(stream)),
                    static_cast<std::uint32_t>(fnv1a(stream) >> 32)};
  return std::mt19937_64(seq);
}

Matrix uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(rows, cols, a, rng);
}

Param make_weight(std::string name, std::size_t out, std::size_t in, std::uint64_t seed) {
  auto rng = stream_rng(seed, name);
  Matrix w = glorot_uniform(out, in, in, out, rng);
  return Param(std::move(name), std::move(w));
}

}  // namespace mica::nd
