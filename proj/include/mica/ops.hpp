#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mica/matrix.hpp"
#include "mica/tape.hpp"

namespace mica::nd {

enum class Activation { softplus, sigmoid, gelu, relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

// Scalar forms, overflow-safe.
double softplus(double x);
double sigmoid(double x);
double gelu(double x);

/// x (n×k), w (m×k), b (1×m) -> x·wᵀ + b
Var affine(Var x, Var w);
Var affine(Var x, Var w, Var b);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a · s where s is a 1×1 Var.
Var scale_by(Var a, Var s);
// Adds table row (r mod table.rows) to row r of x.
Var add_tiled(Var x, Var table);

Var pointwise(Var x, Activation kind);

// Row-wise normalization (biased variance) followed by gain/bias, each 1×cols.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Inverted dropout; identity when the tape is not in training mode or rate == 0.
Var dropout(Var x, double rate);

// z is a stack of blocks with m.rows() rows each; every block is left-multiplied by m.
Var block_left_mul(Var m, Var z);

Var slice_cols(Var x, std::size_t start, std::size_t width);
Var concat_cols(const std::vector<Var>& parts);
Var reshape(Var x, std::size_t rows, std::size_t cols);

// Each row of x (length L) becomes N = (L-P)/S+1 consecutive rows of length P.
Var unfold_patches(Var x, std::size_t patch_len, std::size_t stride);

// Scaled dot-product attention applied independently to consecutive groups of
// `group` rows. When `weights` is non-null it receives the stacked row-softmax
// matrices ((rows)×group).
Var grouped_attention(Var q, Var k, Var v, std::size_t group, Matrix* weights = nullptr);

// Row r is mapped through ws[r mod ws.size()]: out_r = x_r · wᵀ.
Var grouped_affine(Var x, std::span<const Var> ws);

Var sum(Var x);
Var mean(Var x);
Var square(Var x);
Var abs_sum(Var x);
// Mean squared error against a constant target.
Var mse(Var pred, const Matrix& target);

}  // namespace mica::nd
