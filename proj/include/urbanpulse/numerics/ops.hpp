#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <random>

#include "urbanpulse/numerics/tensor.hpp"

// Differentiable primitives. Every op returns a fresh tensor; inputs are never
// modified. Backward closures read forward values through the parent nodes.
namespace urbanpulse::num {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename Fwd, typename Dydx>
Tensor unary(const Tensor& x, Fwd fwd, Dydx dydx) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [dydx](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * dydx(xv[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

// a + b where b has a's shape, is a scalar, or is a vector broadcast over a's last axis.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  const bool same = a.shape() == b.shape();
  const bool row = !same && b.rank() == 1 && m == a.shape().back();
  detail::require(same || m == 1 || row,
                  "add: cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  std::vector<double> out(a.vec());
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] += bv[m == n ? i : (m == 1 ? 0 : i % m)];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [n, m](Node& self) {
    if (double* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (double* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < n; ++i) gb[m == n ? i : (m == 1 ? 0 : i % m)] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape() || b.numel() == 1,
                  "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  const bool bscalar = b.numel() == 1 && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[bscalar ? 0 : i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [n, bscalar](Node& self) {
    if (double* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (double* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < n; ++i) gb[bscalar ? 0 : i] -= self.grad[i];
  });
}

// Elementwise product; b may also be a scalar tensor.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape() || b.numel() == 1,
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  const bool bscalar = b.numel() == 1 && n != 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[bscalar ? 0 : i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [n, bscalar](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[bscalar ? 0 : i];
    if (double* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < n; ++i) gb[bscalar ? 0 : i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double softplus_value(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// ln(1 + e^x), evaluated without overflow for large |x|.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

// Gradient passes only where lo < x < hi.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// Elementwise minimum; ties send the gradient to `a`.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "minimum: shape mismatch");
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(a[i], b[i]);
  return detail::make_result(a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    double* ga = detail::parent_grad(self, 0);
    double* gb = detail::parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (av[i] <= bv[i]) {
        if (ga) ga[i] += self.grad[i];
      } else if (gb) {
        gb[i] += self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

// [m x k] * [k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::Map(out.data(), m, n).noalias() = detail::MapC(a.values().data(), m, k) * detail::MapC(b.values().data(), k, n);
  return detail::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node& self) {
    detail::MapC g(self.grad.data(), m, n);
    if (double* ga = detail::parent_grad(self, 0))
      detail::Map(ga, m, k).noalias() += g * detail::MapC(self.parents[1]->value.data(), k, n).transpose();
    if (double* gb = detail::parent_grad(self, 1))
      detail::Map(gb, k, n).noalias() += detail::MapC(self.parents[0]->value.data(), m, k).transpose() * g;
  });
}

// [m x k] * [n x k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "matmul_nt: incompatible " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(0));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::Map(out.data(), m, n).noalias() =
      detail::MapC(a.values().data(), m, k) * detail::MapC(b.values().data(), n, k).transpose();
  return detail::make_result({a.dim(0), b.dim(0)}, std::move(out), {a, b}, [m, k, n](Node& self) {
    detail::MapC g(self.grad.data(), m, n);
    if (double* ga = detail::parent_grad(self, 0))
      detail::Map(ga, m, k).noalias() += g * detail::MapC(self.parents[1]->value.data(), n, k);
    if (double* gb = detail::parent_grad(self, 1))
      detail::Map(gb, n, k).noalias() += g.transpose() * detail::MapC(self.parents[0]->value.data(), m, k);
  });
}

// Batched [B x m x k] * [B x k x n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
                  "bmm: incompatible " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(b.dim(2));
  std::vector<double> out(batch * static_cast<std::size_t>(m * n));
  for (std::size_t i = 0; i < batch; ++i) {
    detail::Map(out.data() + i * m * n, m, n).noalias() =
        detail::MapC(a.values().data() + i * m * k, m, k) * detail::MapC(b.values().data() + i * k * n, k, n);
  }
  return detail::make_result({batch, a.dim(1), b.dim(2)}, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    double* ga = detail::parent_grad(self, 0);
    double* gb = detail::parent_grad(self, 1);
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    for (std::size_t i = 0; i < batch; ++i) {
      detail::MapC g(self.grad.data() + i * m * n, m, n);
      if (ga) detail::Map(ga + i * m * k, m, k).noalias() += g * detail::MapC(bv + i * k * n, k, n).transpose();
      if (gb) detail::Map(gb + i * k * n, k, n).noalias() += detail::MapC(av + i * m * k, m, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::make_result(std::move(shape), x.vec(), {x}, [](Node& self) {
    if (double* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

// Output axis i is input axis perm[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  detail::require(perm.size() == r, "permute: rank mismatch");
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  // src[o] = flat input index of output element o
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < src.size(); ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[perm[i]];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(src.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < src.size(); ++o) out[o] = xv[src[o]];
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    if (double* gx = detail::parent_grad(self, 0))
      for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += self.grad[o];
  });
}

// Concatenation along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  detail::require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis) detail::require(p.dim(i) == first[i], "concat: extent mismatch on axis " + std::to_string(i));
    }
    widths.push_back(p.dim(axis) * inner);
    total += p.dim(axis);
  }
  Shape shape = first;
  shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * row + offset);
    offset += widths[p];
  }
  return detail::make_result(std::move(shape), std::move(out), parts, [outer, row, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (double* g = detail::parent_grad(self, p)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[p]; ++i) g[o * widths[p] + i] += self.grad[o * row + offset + i];
      }
      offset += widths[p];
    }
  });
}

// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require(axis < x.rank() && begin < end && end <= x.dim(axis), "slice: bad range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t in_row = x.dim(axis) * inner;
  const std::size_t out_row = (end - begin) * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<double> out(outer * out_row);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * in_row + begin * inner, out_row, out.data() + o * out_row);
  return detail::make_result(std::move(shape), std::move(out), {x}, [=](Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < out_row; ++i) g[o * in_row + begin * inner + i] += self.grad[o * out_row + i];
  });
}

// Rows of a 2-D tensor selected by index (repeats allowed).
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  detail::require(x.rank() == 2 && !rows.empty(), "gather_rows: expects a 2-D tensor and a nonempty index");
  const std::size_t width = x.dim(1);
  std::vector<double> out(rows.size() * width);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    detail::require(rows[r] < x.dim(0), "gather_rows: index " + std::to_string(rows[r]) + " out of range");
    std::copy_n(xv.data() + rows[r] * width, width, out.data() + r * width);
  }
  return detail::make_result({rows.size(), width}, std::move(out), {x}, [rows, width](Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c) g[rows[r] * width + c] += self.grad[r * width + c];
  });
}

// Lookup of `table` rows; out-of-range ids are an error.
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  for (auto id : ids) {
    if (id >= table.dim(0))
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(table.dim(0)) + " rows");
  }
  return gather_rows(table, ids);
}

// Places the rows of `x` at positions `rows` of a zero [total x width] tensor.
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& rows, std::size_t total) {
  detail::require(x.rank() == 2 && rows.size() == x.dim(0), "scatter_rows: row count mismatch");
  const std::size_t width = x.dim(1);
  std::vector<double> out(total * width, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    detail::require(rows[r] < total, "scatter_rows: destination out of range");
    std::copy_n(xv.data() + r * width, width, out.data() + rows[r] * width);
  }
  return detail::make_result({total, width}, std::move(out), {x}, [rows, width](Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c) g[r * width + c] += self.grad[rows[r] * width + c];
  });
}

// ---------------------------------------------------------------------------
// Neural-network primitives

// Time-axis convolution. x: [N x C_in x T], kernels: [C_out x C_in x k], bias: [C_out] or undefined.
// Zero padding (k-1)/2 on both sides keeps T.
inline Tensor conv1d_time(const Tensor& x, const Tensor& kernels, const Tensor& bias = {}) {
  detail::require(x.rank() == 3 && kernels.rank() == 3 && kernels.dim(1) == x.dim(1),
                  "conv1d_time: incompatible " + shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
  const std::size_t k = kernels.dim(2);
  if (k % 2 == 0) throw ShapeError("conv1d_time: kernel size must be odd, got " + std::to_string(k));
  const std::size_t n = x.dim(0), cin = x.dim(1), t_len = x.dim(2), cout = kernels.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias) detail::require(bias.numel() == cout, "conv1d_time: bias size mismatch");
  const long pad = static_cast<long>(k / 2);
  const auto xv = x.values();
  const auto wv = kernels.values();
  std::vector<double> out(n * cout * t_len, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = out.data() + (i * cout + co) * t_len;
      if (has_bias) std::fill_n(o, t_len, bias[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xi = xv.data() + (i * cin + ci) * t_len;
        const double* w = wv.data() + (co * cin + ci) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const long shift = static_cast<long>(j) - pad;
          for (std::size_t t = 0; t < t_len; ++t) {
            const long s = static_cast<long>(t) + shift;
            if (s >= 0 && s < static_cast<long>(t_len)) o[t] += w[j] * xi[s];
          }
        }
      }
    }
  std::vector<Tensor> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result({n, cout, t_len}, std::move(out), inputs, [=](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    double* gw = detail::parent_grad(self, 1);
    double* gb = has_bias ? detail::parent_grad(self, 2) : nullptr;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t co = 0; co < cout; ++co) {
        const double* g = self.grad.data() + (i * cout + co) * t_len;
        if (gb)
          for (std::size_t t = 0; t < t_len; ++t) gb[co] += g[t];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t xoff = (i * cin + ci) * t_len;
          const std::size_t woff = (co * cin + ci) * k;
          for (std::size_t j = 0; j < k; ++j) {
            const long shift = static_cast<long>(j) - pad;
            for (std::size_t t = 0; t < t_len; ++t) {
              const long s = static_cast<long>(t) + shift;
              if (s < 0 || s >= static_cast<long>(t_len)) continue;
              if (gw) gw[woff + j] += g[t] * xv[xoff + s];
              if (gx) gx[xoff + s] += g[t] * wv[woff + j];
            }
          }
        }
      }
  });
}

// Normalizes over the last axis with population variance, then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (d < 1) throw ShapeError("layer_norm: empty last axis");
  detail::require(gamma.numel() == d && beta.numel() == d, "layer_norm: gamma/beta must match the last axis");
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double denom = std::sqrt(var + eps);
    inv_std[r] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * inv_std[r];
      out[r * d + c] = gamma[c] * xhat[r * d + c] + beta[c];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                               double* gx = detail::parent_grad(self, 0);
                               double* gg = detail::parent_grad(self, 1);
                               double* gb = detail::parent_grad(self, 2);
                               const auto& gam = self.parents[1]->value;
                               std::vector<double> gh(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* g = self.grad.data() + r * d;
                                 const double* xh = xhat.data() + r * d;
                                 double sum_gh = 0.0, sum_gh_xh = 0.0;
                                 for (std::size_t c = 0; c < d; ++c) {
                                   if (gg) gg[c] += g[c] * xh[c];
                                   if (gb) gb[c] += g[c];
                                   gh[c] = g[c] * gam[c];
                                   sum_gh += gh[c];
                                   sum_gh_xh += gh[c] * xh[c];
                                 }
                                 if (!gx) continue;
                                 const double inv_d = 1.0 / static_cast<double>(d);
                                 for (std::size_t c = 0; c < d; ++c)
                                   gx[r * d + c] += inv_std[r] * (gh[c] - inv_d * sum_gh - xh[c] * inv_d * sum_gh_xh);
                               }
                             });
}

// Row-wise softmax of `scores` [Q x K] restricted to valid keys. `mask` has K
// entries (shared by every row) or Q*K entries. Masked weights are exactly 0.
inline Tensor attention_softmax(const Tensor& scores, const std::vector<std::uint8_t>& mask) {
  detail::require(scores.rank() == 2, "attention_softmax: scores must be 2-D");
  const std::size_t q = scores.dim(0), k = scores.dim(1);
  detail::require(mask.size() == k || mask.size() == q * k, "attention_softmax: mask size mismatch");
  const bool per_row = mask.size() == q * k && q != 1;
  const auto sv = scores.values();
  std::vector<double> out(q * k, 0.0);
  for (std::size_t r = 0; r < q; ++r) {
    const std::uint8_t* m = mask.data() + (per_row ? r * k : 0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (m[c]) mx = std::max(mx, sv[r * k + c]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("attention_softmax: query row " + std::to_string(r) + " has no valid key");
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (m[c]) z += (out[r * k + c] = std::exp(sv[r * k + c] - mx));
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= z;
  }
  return detail::make_result(scores.shape(), std::move(out), {scores}, [q, k](Node& self) {
    double* gs = detail::parent_grad(self, 0);
    if (!gs) return;
    for (std::size_t r = 0; r < q; ++r) {
      const double* y = self.value.data() + r * k;
      const double* g = self.grad.data() + r * k;
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < k; ++c) gs[r * k + c] += y[c] * (g[c] - dot);
    }
  });
}

// Inverted dropout driven by an explicit seed. Identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, bool training, std::uint64_t seed) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  std::mt19937_64 gen(seed);
  const double keep = 1.0 - p;
  std::vector<double> factor(x.numel());
  for (auto& f : factor) {
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    f = u < keep ? 1.0 / keep : 0.0;
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i];
  return detail::make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < factor.size(); ++i) g[i] += self.grad[i] * factor[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result({1}, {s}, {x}, [](Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// Per-column mean of a 2-D tensor: [R x C] -> [C].
inline Tensor mean_rows(const Tensor& x) {
  detail::require(x.rank() == 2, "mean_rows: expects 2-D input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (auto& v : out) v /= static_cast<double>(r);
  return detail::make_result({c}, std::move(out), {x}, [r, c](Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / static_cast<double>(r);
  });
}

// Per-column population standard deviation: [R x C] -> [C].
inline Tensor std_rows(const Tensor& x) {
  detail::require(x.rank() == 2, "std_rows: expects 2-D input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> mu(c, 0.0), out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mu[j] += x[i * c + j];
  for (auto& v : mu) v /= static_cast<double>(r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += (x[i * c + j] - mu[j]) * (x[i * c + j] - mu[j]);
  for (auto& v : out) v = std::sqrt(v / static_cast<double>(r));
  return detail::make_result({c}, std::move(out), {x}, [r, c, mu = std::move(mu)](Node& self) {
    double* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t j = 0; j < c; ++j) {
      const double s = self.value[j];
      if (s == 0.0) continue;  // subgradient 0 at a constant column
      for (std::size_t i = 0; i < r; ++i)
        g[i * c + j] += self.grad[j] * (xv[i * c + j] - mu[j]) / (static_cast<double>(r) * s);
    }
  });
}

namespace detail {
template <typename Better>
Tensor extreme_rows(const Tensor& x, Better better) {
  require(x.rank() == 2, "max/min_rows: expects 2-D input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(c);
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = x[j];
    for (std::size_t i = 1; i < r; ++i)
      if (better(x[i * c + j], out[j])) {
        out[j] = x[i * c + j];
        arg[j] = i;
      }
  }
  return make_result({c}, std::move(out), {x}, [c, arg = std::move(arg)](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += self.grad[j];
  });
}
}  // namespace detail

// Per-column maximum; the first maximal row receives the gradient.
inline Tensor max_rows(const Tensor& x) {
  return detail::extreme_rows(x, [](double a, double b) { return a > b; });
}

inline Tensor min_rows(const Tensor& x) {
  return detail::extreme_rows(x, [](double a, double b) { return a < b; });
}

}  // namespace urbanpulse::num
