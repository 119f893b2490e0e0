#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mica/matrix.hpp"
#include "mica/tape.hpp"

namespace mica::nd {

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

// Deterministic generator for a named stream derived from a run seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view stream);

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);
Matrix uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng);

// Weight of shape out×in initialized from the parameter's own named stream.
Param make_weight(std::string name, std::size_t out, std::size_t in, std::uint64_t seed);

}  // namespace mica::nd
