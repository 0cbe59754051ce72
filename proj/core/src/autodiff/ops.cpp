#include "fedda/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gemm.hpp"

namespace fedda::ad {

namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw std::logic_error("use of unbound Var");
  return *v.tape();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                   to_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + to_string(t.shape()));
  }
}

// Number of `a` elements that share one `b` element, or 0 when b does not
// broadcast against a.
std::size_t broadcast_block(const Shape& a, const Shape& b) {
  if (a == b) return 1;
  if (numel(b) == 1) return numel(a);
  if (a.size() != b.size()) return 0;
  std::size_t j = 0;
  while (j < a.size() && a[j] == b[j]) ++j;
  std::size_t block = 1;
  for (std::size_t i = j; i < a.size(); ++i) {
    if (b[i] != 1) return 0;
    block *= a[i];
  }
  return block;
}

enum class Binary { kAdd, kSub, kMul, kDiv };

Var binary(const Var& a, const Var& b, Binary kind, const char* name) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t block = broadcast_block(av.shape(), bv.shape());
  if (block == 0) shape_mismatch(name, av.shape(), bv.shape());

  Tensor out(av.shape());
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    const double y = bv[i / block];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
      case Binary::kDiv: out[i] = x / y; break;
    }
  }

  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b, block, kind](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        const std::size_t n = av.size();
        if (grads[0]) {
          Tensor& ga = *grads[0];
          for (std::size_t i = 0; i < n; ++i) {
            const double y = bv[i / block];
            switch (kind) {
              case Binary::kAdd:
              case Binary::kSub: ga[i] += g[i]; break;
              case Binary::kMul: ga[i] += g[i] * y; break;
              case Binary::kDiv: ga[i] += g[i] / y; break;
            }
          }
        }
        if (grads[1]) {
          Tensor& gb = *grads[1];
          for (std::size_t i = 0; i < n; ++i) {
            const double x = av[i];
            const double y = bv[i / block];
            double d = 0.0;
            switch (kind) {
              case Binary::kAdd: d = g[i]; break;
              case Binary::kSub: d = -g[i]; break;
              case Binary::kMul: d = g[i] * x; break;
              case Binary::kDiv: d = -g[i] * x / (y * y); break;
            }
            gb[i / block] += d;
          }
        }
      },
      name);
}

// Elementwise op whose derivative is a function of input and output.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv, const char* name) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return tape_of(a).record(
      std::move(out), {a},
      [a, deriv](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& x = a.value();
        Tensor& ga = *grads[0];
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
      },
      name);
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, Binary::kAdd, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, Binary::kSub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, Binary::kMul, "mul"); }
Var div(const Var& a, const Var& b) { return binary(a, b, Binary::kDiv, "div"); }

Var scale(const Var& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; }, "scale");
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; },
      "add_scalar");
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) {
    throw ShapeError("matmul: operands must have rank 2, got " + to_string(av.shape()) +
                     " and " + to_string(bv.shape()));
  }
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) shape_mismatch("matmul", av.shape(), bv.shape());

  Tensor out({m, n});
  detail::gemm(false, false, m, n, k, 1.0, av.data().data(), bv.data().data(), 0.0,
               out.data().data());
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b, m, n, k](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        if (grads[0]) {
          // dA = G * B^T
          detail::gemm(false, true, m, k, n, 1.0, g.data().data(),
                       b.value().data().data(), 1.0, grads[0]->data().data());
        }
        if (grads[1]) {
          // dB = A^T * G
          detail::gemm(true, false, k, n, m, 1.0, a.value().data().data(),
                       g.data().data(), 1.0, grads[1]->data().data());
        }
      },
      "matmul");
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  require_rank("transpose", av, 2);
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return tape_of(a).record(
      std::move(out), {a},
      [r, c](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        Tensor& ga = *grads[0];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      },
      "transpose");
}

Var reshape(const Var& a, Shape shape) {
  const Tensor& av = a.value();
  if (numel(shape) != av.size()) shape_mismatch("reshape", av.shape(), shape);
  Tensor out = av.reshaped(std::move(shape));
  return tape_of(a).record(
      std::move(out), {a},
      [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        Tensor& ga = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_mismatch("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }

  const AxisView ov = axis_view(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Tensor& pv = p.value();
    const std::size_t chunk = pv.dim(axis) * ov.inner;
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pv.data().begin() + o * chunk, chunk,
                  out.data().begin() + o * ov.extent * ov.inner + offset * ov.inner);
    }
    offset += pv.dim(axis);
  }

  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.shape()[axis]);
  return tape_of(parts[0]).record(
      std::move(out), inputs,
      [ov, offsets, extents](const Tensor&, const Tensor& g,
                             std::span<Tensor* const> grads) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          if (!grads[k]) continue;
          Tensor& gk = *grads[k];
          const std::size_t chunk = extents[k] * ov.inner;
          for (std::size_t o = 0; o < ov.outer; ++o) {
            const double* src = g.data().data() + o * ov.extent * ov.inner +
                                offsets[k] * ov.inner;
            double* dst = gk.data().data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
      },
      "concat");
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (axis >= av.rank()) throw ShapeError("slice: axis out of range");
  if (begin >= end || end > av.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + to_string(av.shape()));
  }
  const AxisView iv = axis_view(av.shape(), axis);
  Shape out_shape = av.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t chunk = (end - begin) * iv.inner;
  for (std::size_t o = 0; o < iv.outer; ++o) {
    std::copy_n(av.data().begin() + o * iv.extent * iv.inner + begin * iv.inner, chunk,
                out.data().begin() + o * chunk);
  }
  return tape_of(a).record(
      std::move(out), {a},
      [iv, begin, chunk](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        Tensor& ga = *grads[0];
        for (std::size_t o = 0; o < iv.outer; ++o) {
          double* dst = ga.data().data() + o * iv.extent * iv.inner + begin * iv.inner;
          const double* src = g.data().data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (double x : av.data()) total += x;
  return tape_of(a).record(
      Tensor::scalar(total), {a},
      [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        Tensor& ga = *grads[0];
        const double d = g[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
      },
      "sum");
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      },
      "gelu");
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; },
      "log");
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

Var softmax(const Var& a, std::size_t axis) {
  const Tensor& av = a.value();
  if (axis >= av.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     to_string(av.shape()));
  }
  const AxisView v = axis_view(av.shape(), axis);
  Tensor out(av.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mx = av[base];
      for (std::size_t j = 1; j < v.extent; ++j) mx = std::max(mx, av[base + j * v.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.extent; ++j) {
        const double e = std::exp(av[base + j * v.inner] - mx);
        out[base + j * v.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < v.extent; ++j) out[base + j * v.inner] /= z;
    }
  }
  return tape_of(a).record(
      std::move(out), {a},
      [v](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
        Tensor& ga = *grads[0];
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < v.extent; ++j) {
              dot += y[base + j * v.inner] * g[base + j * v.inner];
            }
            for (std::size_t j = 0; j < v.extent; ++j) {
              const std::size_t idx = base + j * v.inner;
              ga[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = xv.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                     to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  }
  const std::size_t rows = xv.size() / d;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  Tensor out(xv.shape());
  // Per-row normalized values and inverse std, reused by the reverse pass.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }

  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [gamma, xhat, inv_std, rows, d](const Tensor&, const Tensor& g,
                                      std::span<Tensor* const> grads) {
        const Tensor& gv = gamma.value();
        const auto& h = *xhat;
        if (grads[1] || grads[2]) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              const double gr = g[r * d + j];
              if (grads[1]) (*grads[1])[j] += gr * h[r * d + j];
              if (grads[2]) (*grads[2])[j] += gr;
            }
          }
        }
        if (grads[0]) {
          Tensor& gx = *grads[0];
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * h[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              gx[r * d + j] +=
                  (*inv_std)[r] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
            }
          }
        }
      },
      "layer_norm");
}

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank("linear", xv, 2);
  require_rank("linear", wv, 2);
  const std::size_t n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
  if (wv.dim(1) != in) shape_mismatch("linear", xv.shape(), wv.shape());
  if (bias && bias->shape() != Shape{out_dim}) {
    shape_mismatch("linear(bias)", wv.shape(), bias->shape());
  }

  Tensor out({n, out_dim});
  if (bias) {
    const Tensor& bv = bias->value();
    for (std::size_t r = 0; r < n; ++r)
      std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + r * out_dim);
  }
  detail::gemm(false, true, n, out_dim, in, 1.0, xv.data().data(), wv.data().data(),
               bias ? 1.0 : 0.0, out.data().data());

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape_of(x).record(
      std::move(out), inputs,
      [x, weight, n, in, out_dim](const Tensor&, const Tensor& g,
                                  std::span<Tensor* const> grads) {
        if (grads[0]) {
          // dX = G * W
          detail::gemm(false, false, n, in, out_dim, 1.0, g.data().data(),
                       weight.value().data().data(), 1.0, grads[0]->data().data());
        }
        if (grads[1]) {
          // dW = G^T * X
          detail::gemm(true, false, out_dim, in, n, 1.0, g.data().data(),
                       x.value().data().data(), 1.0, grads[1]->data().data());
        }
        if (grads.size() > 2 && grads[2]) {
          Tensor& gb = *grads[2];
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
        }
      },
      "linear");
}

Var sq_dist(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("sq_dist", av, 2);
  require_rank("sq_dist", bv, 2);
  const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
  if (bv.dim(1) != d) shape_mismatch("sq_dist", av.shape(), bv.shape());

  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = av.data().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = bv.data().data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = ai[c] - bj[c];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  }
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b, n, m, d](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        for (std::size_t i = 0; i < n; ++i) {
          const double* ai = av.data().data() + i * d;
          for (std::size_t j = 0; j < m; ++j) {
            const double w = 2.0 * g[i * m + j];
            if (w == 0.0) continue;
            const double* bj = bv.data().data() + j * d;
            if (grads[0]) {
              double* ga = grads[0]->data().data() + i * d;
              for (std::size_t c = 0; c < d; ++c) ga[c] += w * (ai[c] - bj[c]);
            }
            if (grads[1]) {
              double* gb = grads[1]->data().data() + j * d;
              for (std::size_t c = 0; c < d; ++c) gb[c] -= w * (ai[c] - bj[c]);
            }
          }
        }
      },
      "sq_dist");
}

void KeyTable::validate(std::size_t rows) const {
  if (keys_per_query == 0) throw ShapeError("attention: empty key set");
  if (keys.size() != query_rows.size() * keys_per_query) {
    throw ShapeError("attention: key table size mismatch");
  }
  for (auto r : query_rows)
    if (r >= rows) throw ShapeError("attention: query row out of range");
  for (auto k : keys)
    if (k >= rows) throw ShapeError("attention: key row out of range");
}

Var attention_weights(const Var& q, const Var& k, const KeyTablePtr& table, double scale) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  require_rank("attention_weights", qv, 2);
  if (qv.shape() != kv.shape()) shape_mismatch("attention_weights", qv.shape(), kv.shape());
  const std::size_t d = qv.dim(1);
  table->validate(qv.dim(0));
  const std::size_t nq = table->queries();
  const std::size_t nk = table->keys_per_query;

  Tensor out({nq, nk});
  for (std::size_t i = 0; i < nq; ++i) {
    const double* qi = qv.data().data() + table->query_rows[i] * d;
    double* row = out.data().data() + i * nk;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < nk; ++j) {
      const double* kj = kv.data().data() + table->keys[i * nk + j] * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
      row[j] = s * scale;
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < nk; ++j) row[j] /= z;
  }
  tape_of(q).note_attention_buffer(out.size());

  return tape_of(q).record(
      std::move(out), {q, k},
      [q, k, table, scale, d, nq, nk](const Tensor& w, const Tensor& g,
                                      std::span<Tensor* const> grads) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        std::vector<double> dlogit(nk);
        for (std::size_t i = 0; i < nq; ++i) {
          const std::size_t qr = table->query_rows[i];
          double dot = 0.0;
          for (std::size_t j = 0; j < nk; ++j) dot += w[i * nk + j] * g[i * nk + j];
          for (std::size_t j = 0; j < nk; ++j) {
            dlogit[j] = scale * w[i * nk + j] * (g[i * nk + j] - dot);
          }
          const double* qi = qv.data().data() + qr * d;
          for (std::size_t j = 0; j < nk; ++j) {
            const std::size_t kr = table->keys[i * nk + j];
            const double* kj = kv.data().data() + kr * d;
            if (grads[0]) {
              double* gq = grads[0]->data().data() + qr * d;
              for (std::size_t c = 0; c < d; ++c) gq[c] += dlogit[j] * kj[c];
            }
            if (grads[1]) {
              double* gk = grads[1]->data().data() + kr * d;
              for (std::size_t c = 0; c < d; ++c) gk[c] += dlogit[j] * qi[c];
            }
          }
        }
      },
      "attention_weights");
}

Var attention_combine(const Var& weights, const Var& v, const KeyTablePtr& table) {
  const Tensor& wv = weights.value();
  const Tensor& vv = v.value();
  require_rank("attention_combine", vv, 2);
  const std::size_t rows = vv.dim(0), d = vv.dim(1);
  table->validate(rows);
  const std::size_t nq = table->queries();
  const std::size_t nk = table->keys_per_query;
  if (wv.shape() != Shape{nq, nk}) {
    throw ShapeError("attention_combine: weights " + to_string(wv.shape()) +
                     " do not match key table [" + std::to_string(nq) + "," +
                     std::to_string(nk) + "]");
  }

  Tensor out({rows, d});
  for (std::size_t i = 0; i < nq; ++i) {
    double* dst = out.data().data() + table->query_rows[i] * d;
    for (std::size_t j = 0; j < nk; ++j) {
      const double a = wv[i * nk + j];
      const double* src = vv.data().data() + table->keys[i * nk + j] * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += a * src[c];
    }
  }

  return tape_of(v).record(
      std::move(out), {weights, v},
      [weights, v, table, d, nq, nk](const Tensor&, const Tensor& g,
                                     std::span<Tensor* const> grads) {
        const Tensor& wv = weights.value();
        const Tensor& vv = v.value();
        for (std::size_t i = 0; i < nq; ++i) {
          const double* gr = g.data().data() + table->query_rows[i] * d;
          for (std::size_t j = 0; j < nk; ++j) {
            const std::size_t kr = table->keys[i * nk + j];
            if (grads[0]) {
              const double* src = vv.data().data() + kr * d;
              double s = 0.0;
              for (std::size_t c = 0; c < d; ++c) s += gr[c] * src[c];
              (*grads[0])[i * nk + j] += s;
            }
            if (grads[1]) {
              const double a = wv[i * nk + j];
              double* dst = grads[1]->data().data() + kr * d;
              for (std::size_t c = 0; c < d; ++c) dst[c] += a * gr[c];
            }
          }
        }
      },
      "attention_combine");
}

}  // namespace fedda::ad
