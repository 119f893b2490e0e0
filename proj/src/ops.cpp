#include "mica/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "mica/errors.hpp"

namespace mica::nd {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

double activation_value(Activation kind, double x) {
  switch (kind) {
    case Activation::softplus: return softplus(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::gelu: return gelu(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

double activation_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::softplus: return sigmoid(x);
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "softplus") return Activation::softplus;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
  }
  return "?";
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var affine(Var x, Var w) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  require(xv.cols() == wv.cols(),
          "affine: input " + xv.shape_str() + " incompatible with weight " + wv.shape_str());
  Tape& t = x.tape();
  const std::size_t xi = x.id(), wi = w.id();
  return t.record(matmul_bt(xv, wv), {x, w}, [xi, wi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* gx = tp.accum(xi)) *gx += matmul(g, tp.value(wi));
    if (Matrix* gw = tp.accum(wi)) *gw += matmul_at(g, tp.value(xi));
  });
}

Var affine(Var x, Var w, Var b) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  require(xv.cols() == wv.cols(),
          "affine: input " + xv.shape_str() + " incompatible with weight " + wv.shape_str());
  require(bv.rows() == 1 && bv.cols() == wv.rows(),
          "affine: bias " + bv.shape_str() + " incompatible with weight " + wv.shape_str());
  Matrix out = matmul_bt(xv, wv);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  Tape& t = x.tape();
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return t.record(std::move(out), {x, w, b}, [xi, wi, bi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* gx = tp.accum(xi)) *gx += matmul(g, tp.value(wi));
    if (Matrix* gw = tp.accum(wi)) *gw += matmul_at(g, tp.value(xi));
    if (Matrix* gb = tp.accum(bi)) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gb)(0, c) += g(r, c);
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(matmul(a.value(), b.value()), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* ga = tp.accum(ai)) *ga += matmul_bt(g, tp.value(bi));
    if (Matrix* gb = tp.accum(bi)) *gb += matmul_at(tp.value(ai), g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* ga = tp.accum(ai)) *ga += g;
    if (Matrix* gb = tp.accum(bi)) *gb += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* ga = tp.accum(ai)) *ga += g;
    if (Matrix* gb = tp.accum(bi)) *gb -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape& t = a.tape();
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* ga = tp.accum(ai)) {
      const Matrix& bv2 = tp.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i];
    }
    if (Matrix* gb = tp.accum(bi)) {
      const Matrix& av = tp.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  const std::size_t ai = a.id();
  return t.record(a.value() * s, {a}, [ai, s](Tape& tp, std::size_t self) {
    if (Matrix* ga = tp.accum(ai)) *ga += tp.grad(self) * s;
  });
}

Var scale_by(Var a, Var s) {
  require(s.rows() == 1 && s.cols() == 1, "scale_by: scale must be 1x1, got " + s.value().shape_str());
  Tape& t = a.tape();
  const std::size_t ai = a.id(), si = s.id();
  return t.record(a.value() * s.scalar(), {a, s}, [ai, si](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const double sv = tp.value(si)(0, 0);
    if (Matrix* ga = tp.accum(ai)) *ga += g * sv;
    if (Matrix* gs = tp.accum(si)) {
      const Matrix& av = tp.value(ai);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gs)(0, 0) += acc;
    }
  });
}

Var add_tiled(Var x, Var table) {
  const Matrix& xv = x.value();
  const Matrix& tv = table.value();
  require(tv.rows() > 0 && xv.cols() == tv.cols() && xv.rows() % tv.rows() == 0,
          "add_tiled: " + xv.shape_str() + " cannot tile " + tv.shape_str());
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += tv(r % tv.rows(), c);
  Tape& t = x.tape();
  const std::size_t xi = x.id(), ti = table.id();
  return t.record(std::move(out), {x, table}, [xi, ti](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (Matrix* gx = tp.accum(xi)) *gx += g;
    if (Matrix* gt = tp.accum(ti)) {
      const std::size_t n = gt->rows();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gt)(r % n, c) += g(r, c);
    }
  });
}

Var pointwise(Var x, Activation kind) {
  Matrix out = x.value();
  for (double& v : out.data()) v = activation_value(kind, v);
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi, kind](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      const Matrix& xv = tp.value(xi);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * activation_derivative(kind, xv[i]);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  require(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
          "layer_norm: gain/bias must be 1x" + std::to_string(n));
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");

  auto xhat = std::make_shared<Matrix>(xv.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows());
  Matrix out(xv.rows(), n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xv(r, c) - mu) * is;
      (*xhat)(r, c) = h;
      out(r, c) = gv(0, c) * h + bv(0, c);
    }
  }
  Tape& t = x.tape();
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return t.record(std::move(out), {x, gain, bias},
                  [xi, gi, bi, xhat, inv_std, n](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& gv2 = tp.value(gi);
    if (Matrix* gg = tp.accum(gi)) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) (*gg)(0, c) += g(r, c) * (*xhat)(r, c);
    }
    if (Matrix* gb = tp.accum(bi)) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) (*gb)(0, c) += g(r, c);
    }
    if (Matrix* gx = tp.accum(xi)) {
      const double dn = static_cast<double>(n);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double dh = g(r, c) * gv2(0, c);
          s1 += dh;
          s2 += dh * (*xhat)(r, c);
        }
        for (std::size_t c = 0; c < n; ++c) {
          const double dh = g(r, c) * gv2(0, c);
          (*gx)(r, c) += (*inv_std)[r] / dn * (dn * dh - s1 - (*xhat)(r, c) * s2);
        }
      }
    }
  });
}

Var dropout(Var x, double rate) {
  Tape& t = x.tape();
  if (!t.training() || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
  std::bernoulli_distribution coin(keep);
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = coin(t.rng()) ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out[i] *= m;
  }
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi, mask](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*mask)[i];
    }
  });
}

Var block_left_mul(Var m, Var z) {
  const Matrix& mv = m.value();
  const Matrix& zv = z.value();
  const std::size_t c = mv.rows();
  require(mv.cols() == c && c > 0 && zv.rows() % c == 0,
          "block_left_mul: " + mv.shape_str() + " cannot act on blocks of " + zv.shape_str());
  const std::size_t d = zv.cols();
  const std::size_t blocks = zv.rows() / c;
  Matrix out(zv.rows(), d);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double mij = mv(i, j);
        if (mij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) out(b * c + i, k) += mij * zv(b * c + j, k);
      }
  Tape& t = m.tape();
  const std::size_t mi = m.id(), zi = z.id();
  return t.record(std::move(out), {m, z}, [mi, zi, c, d, blocks](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& mv2 = tp.value(mi);
    const Matrix& zv2 = tp.value(zi);
    if (Matrix* gm = tp.accum(mi)) {
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += g(b * c + i, k) * zv2(b * c + j, k);
            (*gm)(i, j) += acc;
          }
    }
    if (Matrix* gz = tp.accum(zi)) {
      for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < c; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const double mij = mv2(i, j);
            if (mij == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) (*gz)(b * c + j, k) += mij * g(b * c + i, k);
          }
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t width) {
  const Matrix& xv = x.value();
  require(start + width <= xv.cols(), "slice_cols: range exceeds " + xv.shape_str());
  Matrix out(xv.rows(), width);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = xv(r, start + c);
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi, start, width](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) (*gx)(r, start + c) += g(r, c);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets, widths;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    ids.push_back(p.id());
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Matrix out(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out(r, offsets[k] + c) = pv(r, c);
  }
  Tape& t = parts.front().tape();
  return t.record(std::move(out), parts, [ids, offsets, widths](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Matrix* gp = tp.accum(ids[k])) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*gp)(r, c) += g(r, offsets[k] + c);
      }
    }
  });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  const Matrix& xv = x.value();
  require(rows * cols == xv.size(), "reshape: cannot view " + xv.shape_str() + " as " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
  Matrix out(rows, cols, xv.storage());
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var unfold_patches(Var x, std::size_t patch_len, std::size_t stride) {
  const Matrix& xv = x.value();
  const std::size_t len = xv.cols();
  if (patch_len == 0 || stride == 0 || patch_len > len) {
    throw ConfigError("unfold_patches: patch length " + std::to_string(patch_len) + ", stride " +
                      std::to_string(stride) + " invalid for window " + std::to_string(len));
  }
  const std::size_t n = (len - patch_len) / stride + 1;
  Matrix out(xv.rows() * n, patch_len);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < patch_len; ++c) out(r * n + p, c) = xv(r, p * stride + c);
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi, n, patch_len, stride](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      for (std::size_t r = 0; r < gx->rows(); ++r)
        for (std::size_t p = 0; p < n; ++p)
          for (std::size_t c = 0; c < patch_len; ++c) (*gx)(r, p * stride + c) += g(r * n + p, c);
    }
  });
}

Var grouped_attention(Var q, Var k, Var v, std::size_t group, Matrix* weights) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  require(qv.same_shape(kv) && qv.same_shape(vv), "grouped_attention: Q/K/V shapes differ");
  require(group > 0 && qv.rows() % group == 0,
          "grouped_attention: rows " + std::to_string(qv.rows()) + " not divisible by group " +
              std::to_string(group));
  const std::size_t dh = qv.cols();
  const std::size_t groups = qv.rows() / group;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<Matrix>(qv.rows(), group);
  Matrix out(qv.rows(), dh);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * group;
    for (std::size_t i = 0; i < group; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < group; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv(base + i, c) * kv(base + j, c);
        s *= inv_sqrt;
        (*probs)(base + i, j) = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < group; ++j) {
        const double e = std::exp((*probs)(base + i, j) - mx);
        (*probs)(base + i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < group; ++j) (*probs)(base + i, j) /= z;
      for (std::size_t j = 0; j < group; ++j) {
        const double p = (*probs)(base + i, j);
        for (std::size_t c = 0; c < dh; ++c) out(base + i, c) += p * vv(base + j, c);
      }
    }
  }
  if (weights != nullptr) *weights = *probs;

  Tape& t = q.tape();
  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  return t.record(std::move(out), {q, k, v},
                  [qi, ki, vi, probs, group, groups, dh, inv_sqrt](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& qv2 = tp.value(qi);
    const Matrix& kv2 = tp.value(ki);
    const Matrix& vv2 = tp.value(vi);
    Matrix* gq = tp.accum(qi);
    Matrix* gk = tp.accum(ki);
    Matrix* gv = tp.accum(vi);
    std::vector<double> ds(group), da(group);
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      const std::size_t base = gidx * group;
      for (std::size_t i = 0; i < group; ++i) {
        // dS_ij = dO_i · V_j ; dA = S ⊙ (dS − Σ_j dS_ij S_ij)
        double dot = 0.0;
        for (std::size_t j = 0; j < group; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += g(base + i, c) * vv2(base + j, c);
          ds[j] = s;
          dot += s * (*probs)(base + i, j);
        }
        for (std::size_t j = 0; j < group; ++j) {
          da[j] = (*probs)(base + i, j) * (ds[j] - dot) * inv_sqrt;
        }
        for (std::size_t j = 0; j < group; ++j) {
          const double p = (*probs)(base + i, j);
          for (std::size_t c = 0; c < dh; ++c) {
            if (gv) (*gv)(base + j, c) += p * g(base + i, c);
            if (gq) (*gq)(base + i, c) += da[j] * kv2(base + j, c);
            if (gk) (*gk)(base + j, c) += da[j] * qv2(base + i, c);
          }
        }
      }
    }
  });
}

Var grouped_affine(Var x, std::span<const Var> ws) {
  require(!ws.empty(), "grouped_affine: no weights");
  const Matrix& xv = x.value();
  const std::size_t groups = ws.size();
  const std::size_t out_dim = ws.front().rows();
  std::vector<Var> inputs{x};
  std::vector<std::size_t> wids;
  for (const Var& w : ws) {
    require(w.rows() == out_dim && w.cols() == xv.cols(),
            "grouped_affine: weight " + w.value().shape_str() + " incompatible with input " +
                xv.shape_str());
    inputs.push_back(w);
    wids.push_back(w.id());
  }
  require(xv.rows() % groups == 0, "grouped_affine: rows not divisible by group count");
  Matrix out(xv.rows(), out_dim);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const Matrix& wv = ws[r % groups].value();
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = 0.0;
      for (std::size_t c = 0; c < xv.cols(); ++c) s += xv(r, c) * wv(o, c);
      out(r, o) = s;
    }
  }
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), inputs, [xi, wids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& xv2 = tp.value(xi);
    Matrix* gx = tp.accum(xi);
    const std::size_t groups2 = wids.size();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const std::size_t wi = wids[r % groups2];
      const Matrix& wv = tp.value(wi);
      Matrix* gw = tp.accum(wi);
      for (std::size_t o = 0; o < g.cols(); ++o) {
        const double go = g(r, o);
        if (go == 0.0) continue;
        for (std::size_t c = 0; c < xv2.cols(); ++c) {
          if (gx) (*gx)(r, c) += go * wv(o, c);
          if (gw) (*gw)(o, c) += go * xv2(r, c);
        }
      }
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(Matrix(1, 1, s), {x}, [xi](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const double g = tp.grad(self)(0, 0);
      for (double& v : gx->data()) v += g;
    }
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var square(Var x) {
  Matrix out = x.value();
  for (double& v : out.data()) v *= v;
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(std::move(out), {x}, [xi](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const Matrix& g = tp.grad(self);
      const Matrix& xv = tp.value(xi);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * xv[i] * g[i];
    }
  });
}

Var abs_sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += std::abs(v);
  Tape& t = x.tape();
  const std::size_t xi = x.id();
  return t.record(Matrix(1, 1, s), {x}, [xi](Tape& tp, std::size_t self) {
    if (Matrix* gx = tp.accum(xi)) {
      const double g = tp.grad(self)(0, 0);
      const Matrix& xv = tp.value(xi);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double sgn = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        (*gx)[i] += g * sgn;
      }
    }
  });
}

Var mse(Var pred, const Matrix& target) {
  const Matrix& pv = pred.value();
  require_same_shape(pv, target, "mse");
  const double n = static_cast<double>(pv.size());
  auto diff = std::make_shared<Matrix>(pv - target);
  double s = 0.0;
  for (double v : diff->data()) s += v * v;
  Tape& t = pred.tape();
  const std::size_t pi = pred.id();
  return t.record(Matrix(1, 1, s / n), {pred}, [pi, diff, n](Tape& tp, std::size_t self) {
    if (Matrix* gp = tp.accum(pi)) {
      const double g = tp.grad(self)(0, 0) * 2.0 / n;
      for (std::size_t i = 0; i < diff->size(); ++i) (*gp)[i] += g * (*diff)[i];
    }
  });
}

}  // namespace mica::nd
