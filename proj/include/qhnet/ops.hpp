#pragma once

// Differentiable primitives recorded on a Tape. Batched tensors are flat
// row-major arrays; functions taking `rows` treat the input as rows x width.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "qhnet/autodiff.hpp"
#include "qhnet/irreps.hpp"

namespace qhnet::ad {

using Index = std::vector<std::uint32_t>;

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Var add(Tape& t, Var a, Var b) {
  const auto x = t.value(a), y = t.value(b);
  require(x.size() == y.size(), "add: size mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    for (Var in : {a, b}) {
      if (!tp.requires_grad(in)) continue;
      auto gi = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const auto x = t.value(a), y = t.value(b);
  require(x.size() == y.size(), "sub: size mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    if (tp.requires_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const auto x = t.value(a), y = t.value(b);
  require(x.size() == y.size(), "mul: size mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto x = tp.value(a), y = tp.value(b);
    if (tp.requires_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (tp.requires_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

inline Var scale(Tape& t, Var a, double s) {
  const auto x = t.value(a);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i];
  return t.record(std::move(out), {a}, [a, s](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// x * sigmoid(x)
inline Var silu(Tape& t, Var a) {
  const auto x = t.value(a);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * sigmoid(x[i]);
  return t.record(std::move(out), {a}, [a](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto x = tp.value(a);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(x[i]);
      ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
    }
  });
}

inline Var square(Tape& t, Var a) { return mul(t, a, a); }

inline Var sqrt(Tape& t, Var a) {
  const auto x = t.value(a);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x[i]);
  return t.record(std::move(out), {a}, [a](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto y = tp.value(self);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (y[i] > 0.0) ga[i] += g[i] * 0.5 / y[i];
  });
}

/// |x| with subgradient 0 at x = 0.
inline Var abs(Tape& t, Var a) {
  const auto x = t.value(a);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
  return t.record(std::move(out), {a}, [a](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto x = tp.value(a);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
  });
}

/// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> x) {
  double s = 0.0, c = 0.0;
  for (double v : x) {
    const double u = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - u) + v : (v - u) + s;
    s = u;
  }
  return s + c;
}

inline Var sum(Tape& t, Var a) {
  const double s = compensated_sum(t.value(a));
  return t.record({s}, {a}, [a](Tape& tp, Var self) {
    const double g = tp.grad_of(self)[0];
    for (double& v : tp.grad(a)) v += g;
  });
}

inline Var mean(Tape& t, Var a) {
  const std::size_t n = t.size(a);
  require(n > 0, "mean: empty input");
  return scale(t, sum(t, a), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Dense layers

/// y (rows x out) = x (rows x in) W^T with W stored out x in.
inline Var matmul(Tape& t, Var x, Var w, std::size_t rows, std::size_t in, std::size_t out) {
  const auto xv = t.value(x), wv = t.value(w);
  require(xv.size() == rows * in && wv.size() == out * in, "matmul: shape mismatch");
  std::vector<double> y(rows * out, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = wv.data() + o * in;
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wo[i];
      y[r * out + o] = s;
    }
  }
  return t.record(std::move(y), {x, w}, [x, w, rows, in, out](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto xv = tp.value(x), wv = tp.value(w);
    if (tp.requires_grad(x)) {
      auto gx = tp.grad(x);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g[r * out + o];
          if (go == 0.0) continue;
          const double* wo = wv.data() + o * in;
          double* gxr = gx.data() + r * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wo[i];
        }
    }
    if (tp.requires_grad(w)) {
      auto gw = tp.grad(w);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g[r * out + o];
          if (go == 0.0) continue;
          double* gwo = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwo[i] += go * xr[i];
        }
      }
    }
  });
}

/// y (rows x width) + b (width), broadcast over rows.
inline Var add_bias(Tape& t, Var y, Var b, std::size_t rows) {
  const auto yv = t.value(y), bv = t.value(b);
  const std::size_t width = bv.size();
  require(yv.size() == rows * width, "add_bias: shape mismatch");
  std::vector<double> out(yv.begin(), yv.end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < width; ++k) out[r * width + k] += bv[k];
  return t.record(std::move(out), {y, b}, [y, b, rows, width](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    if (tp.requires_grad(y)) {
      auto gy = tp.grad(y);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < width; ++k) gb[k] += g[r * width + k];
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Rows `index[k]` of x (n x width) stacked into an index.size() x width array.
inline Var gather_rows(Tape& t, Var x, std::size_t width, Index index) {
  const auto xv = t.value(x);
  require(width > 0 && xv.size() % width == 0, "gather_rows: width does not divide input");
  const std::size_t n = xv.size() / width;
  std::vector<double> out(index.size() * width);
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] < n, "gather_rows: index out of range");
    std::copy_n(xv.data() + index[k] * width, width, out.data() + k * width);
  }
  return t.record(std::move(out), {x}, [x, width, index = std::move(index)](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    auto gx = tp.grad(x);
    for (std::size_t k = 0; k < index.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) gx[index[k] * width + j] += g[k * width + j];
  });
}

/// out[dest[k]] += x[k] over rows; out has n_out rows. Sums run in row order.
inline Var scatter_sum_rows(Tape& t, Var x, std::size_t width, Index dest, std::size_t n_out) {
  const auto xv = t.value(x);
  require(xv.size() == dest.size() * width, "scatter_sum_rows: shape mismatch");
  std::vector<double> out(n_out * width, 0.0);
  for (std::size_t k = 0; k < dest.size(); ++k) {
    require(dest[k] < n_out, "scatter_sum_rows: index out of range");
    for (std::size_t j = 0; j < width; ++j) out[dest[k] * width + j] += xv[k * width + j];
  }
  return t.record(std::move(out), {x}, [x, width, dest = std::move(dest)](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    auto gx = tp.grad(x);
    for (std::size_t k = 0; k < dest.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) gx[k * width + j] += g[dest[k] * width + j];
  });
}

/// Row-wise concatenation of parts with the given widths.
inline Var concat_cols(Tape& t, const std::vector<Var>& parts, const std::vector<std::size_t>& widths,
                       std::size_t rows) {
  require(parts.size() == widths.size() && !parts.empty(), "concat_cols: parts/widths mismatch");
  std::size_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    require(t.size(parts[p]) == rows * widths[p], "concat_cols: part shape mismatch");
    total += widths[p];
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = t.value(parts[p]);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + col);
    col += widths[p];
  }
  return t.record(std::move(out), std::span<const Var>(parts), [parts, widths, rows, total](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (tp.requires_grad(parts[p])) {
        auto gp = tp.grad(parts[p]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j) gp[r * widths[p] + j] += g[r * total + col + j];
      }
      col += widths[p];
    }
  });
}

/// Columns [begin, begin + count) of x (rows x width).
inline Var slice_cols(Tape& t, Var x, std::size_t rows, std::size_t width, std::size_t begin, std::size_t count) {
  const auto xv = t.value(x);
  require(xv.size() == rows * width && begin + count <= width, "slice_cols: shape mismatch");
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * width + begin, count, out.data() + r * count);
  return t.record(std::move(out), {x}, [x, rows, width, begin, count](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    auto gx = tp.grad(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) gx[r * width + begin + j] += g[r * count + j];
  });
}

/// out[k] = x[index[k]] on the flattened array.
inline Var gather(Tape& t, Var x, std::shared_ptr<const Index> index) {
  const auto xv = t.value(x);
  std::vector<double> out(index->size());
  for (std::size_t k = 0; k < index->size(); ++k) {
    require((*index)[k] < xv.size(), "gather: index out of range");
    out[k] = xv[(*index)[k]];
  }
  return t.record(std::move(out), {x}, [x, index](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    auto gx = tp.grad(x);
    for (std::size_t k = 0; k < index->size(); ++k) gx[(*index)[k]] += g[k];
  });
}

// ---------------------------------------------------------------------------
// Irreps-aware ops

/// Per-order channel mixing: y^l_{c m} = sum_{c'} W^l_{c c'} x^l_{c' m}.
/// W holds (l_max+1) blocks of c_out x c_in.
inline Var irreps_linear(Tape& t, Var x, Var w, const IrrepsLayout& in, int c_out, std::size_t rows) {
  const IrrepsLayout out_layout(in.l_max(), c_out);
  const std::size_t cin = static_cast<std::size_t>(in.channels()), cout = static_cast<std::size_t>(c_out);
  const auto xv = t.value(x), wv = t.value(w);
  require(xv.size() == rows * in.size(), "irreps_linear: input shape mismatch");
  require(wv.size() == static_cast<std::size_t>(in.l_max() + 1) * cin * cout, "irreps_linear: weight shape mismatch");
  std::vector<double> y(rows * out_layout.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in.size();
    double* yr = y.data() + r * out_layout.size();
    for (int l = 0; l <= in.l_max(); ++l) {
      const std::size_t n = static_cast<std::size_t>(irrep_dim(l));
      const double* wl = wv.data() + static_cast<std::size_t>(l) * cin * cout;
      const double* xs = xr + in.offset(l);
      double* ys = yr + out_layout.offset(l);
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double wc = wl[co * cin + ci];
          for (std::size_t m = 0; m < n; ++m) ys[co * n + m] += wc * xs[ci * n + m];
        }
    }
  }
  return t.record(std::move(y), {x, w}, [x, w, in, out_layout, cin, cout, rows](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto xv = tp.value(x), wv = tp.value(w);
    const bool need_x = tp.requires_grad(x), need_w = tp.requires_grad(w);
    std::span<double> gx, gw;
    if (need_x) gx = tp.grad(x);
    if (need_w) gw = tp.grad(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv.data() + r * in.size();
      const double* gr = g.data() + r * out_layout.size();
      for (int l = 0; l <= in.l_max(); ++l) {
        const std::size_t n = static_cast<std::size_t>(irrep_dim(l));
        const std::size_t wo = static_cast<std::size_t>(l) * cin * cout;
        const double* gs = gr + out_layout.offset(l);
        const double* xs = xr + in.offset(l);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ci = 0; ci < cin; ++ci) {
            if (need_w) {
              double s = 0.0;
              for (std::size_t m = 0; m < n; ++m) s += gs[co * n + m] * xs[ci * n + m];
              gw[wo + co * cin + ci] += s;
            }
            if (need_x) {
              const double wc = wv[wo + co * cin + ci];
              double* gxs = gx.data() + r * in.size() + in.offset(l) + ci * n;
              for (std::size_t m = 0; m < n; ++m) gxs[m] += wc * gs[co * n + m];
            }
          }
      }
    }
  });
}

/// Per-(l, c) norms sqrt(sum_m x^2 + eps) for l = 1..l_max; rows x (l_max*C).
inline Var irreps_norms(Tape& t, Var x, const IrrepsLayout& layout, std::size_t rows, double eps = 1e-12) {
  const auto xv = t.value(x);
  require(xv.size() == rows * layout.size(), "irreps_norms: shape mismatch");
  const std::size_t C = static_cast<std::size_t>(layout.channels());
  const std::size_t width = static_cast<std::size_t>(layout.l_max()) * C;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (int l = 1; l <= layout.l_max(); ++l)
      for (std::size_t c = 0; c < C; ++c) {
        const double* v = xv.data() + r * layout.size() + layout.index(l, static_cast<int>(c), -l);
        double s = eps;
        for (int m = 0; m < irrep_dim(l); ++m) s += v[m] * v[m];
        out[r * width + static_cast<std::size_t>(l - 1) * C + c] = std::sqrt(s);
      }
  return t.record(std::move(out), {x}, [x, layout, rows, width, C](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto y = tp.value(self);
    const auto xv = tp.value(x);
    auto gx = tp.grad(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (int l = 1; l <= layout.l_max(); ++l)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t k = r * width + static_cast<std::size_t>(l - 1) * C + c;
          const double f = g[k] / y[k];
          const std::size_t base = r * layout.size() + layout.index(l, static_cast<int>(c), -l);
          for (int m = 0; m < irrep_dim(l); ++m) gx[base + m] += f * xv[base + m];
        }
  });
}

/// Channel-wise inner products <a^l_c, b^l_c> for l = 1..l_max.
inline Var channel_inner(Tape& t, Var a, Var b, const IrrepsLayout& layout, std::size_t rows) {
  const auto av = t.value(a), bv = t.value(b);
  require(av.size() == rows * layout.size() && bv.size() == av.size(), "channel_inner: shape mismatch");
  const std::size_t C = static_cast<std::size_t>(layout.channels());
  const std::size_t width = static_cast<std::size_t>(layout.l_max()) * C;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (int l = 1; l <= layout.l_max(); ++l)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = r * layout.size() + layout.index(l, static_cast<int>(c), -l);
        double s = 0.0;
        for (int m = 0; m < irrep_dim(l); ++m) s += av[base + m] * bv[base + m];
        out[r * width + static_cast<std::size_t>(l - 1) * C + c] = s;
      }
  return t.record(std::move(out), {a, b}, [a, b, layout, rows, width, C](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto av = tp.value(a), bv = tp.value(b);
    for (int side = 0; side < 2; ++side) {
      const Var target = side == 0 ? a : b;
      if (!tp.requires_grad(target)) continue;
      const auto other = side == 0 ? bv : av;
      auto gt = tp.grad(target);
      for (std::size_t r = 0; r < rows; ++r)
        for (int l = 1; l <= layout.l_max(); ++l)
          for (std::size_t c = 0; c < C; ++c) {
            const double gk = g[r * width + static_cast<std::size_t>(l - 1) * C + c];
            const std::size_t base = r * layout.size() + layout.index(l, static_cast<int>(c), -l);
            for (int m = 0; m < irrep_dim(l); ++m) gt[base + m] += gk * other[base + m];
          }
    }
  });
}

/// Channel-wise cosine similarities <a,b> / (|a| |b|) for l = 1..l_max, with
/// norms sqrt(sum_m x^2 + eps).
inline Var channel_cosine(Tape& t, Var a, Var b, const IrrepsLayout& layout, std::size_t rows, double eps = 1e-12) {
  const auto av = t.value(a), bv = t.value(b);
  require(av.size() == rows * layout.size() && bv.size() == av.size(), "channel_cosine: shape mismatch");
  const std::size_t C = static_cast<std::size_t>(layout.channels());
  const std::size_t width = static_cast<std::size_t>(layout.l_max()) * C;
  // Per entry: inner product, |a|, |b|.
  auto stats = std::make_shared<std::vector<double>>(3 * rows * width);
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (int l = 1; l <= layout.l_max(); ++l)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = r * layout.size() + layout.index(l, static_cast<int>(c), -l);
        double ab = 0.0, aa = eps, bb = eps;
        for (int m = 0; m < irrep_dim(l); ++m) {
          ab += av[base + m] * bv[base + m];
          aa += av[base + m] * av[base + m];
          bb += bv[base + m] * bv[base + m];
        }
        const std::size_t k = r * width + static_cast<std::size_t>(l - 1) * C + c;
        (*stats)[3 * k] = ab;
        (*stats)[3 * k + 1] = std::sqrt(aa);
        (*stats)[3 * k + 2] = std::sqrt(bb);
        out[k] = ab / ((*stats)[3 * k + 1] * (*stats)[3 * k + 2]);
      }
  return t.record(std::move(out), {a, b}, [a, b, layout, rows, width, C, stats](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto av = tp.value(a), bv = tp.value(b);
    for (int side = 0; side < 2; ++side) {
      const Var target = side == 0 ? a : b;
      if (!tp.requires_grad(target)) continue;
      const auto mine = side == 0 ? av : bv;
      const auto other = side == 0 ? bv : av;
      auto gt = tp.grad(target);
      for (std::size_t r = 0; r < rows; ++r)
        for (int l = 1; l <= layout.l_max(); ++l)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t k = r * width + static_cast<std::size_t>(l - 1) * C + c;
            const double ab = (*stats)[3 * k];
            const double n_mine = (*stats)[3 * k + 1 + side], n_other = (*stats)[3 * k + 2 - side];
            const double f_other = g[k] / (n_mine * n_other);
            const double f_mine = -g[k] * ab / (n_mine * n_mine * n_mine * n_other);
            const std::size_t base = r * layout.size() + layout.index(l, static_cast<int>(c), -l);
            for (int m = 0; m < irrep_dim(l); ++m) gt[base + m] += f_other * other[base + m] + f_mine * mine[base + m];
          }
    }
  });
}

/// Gate: order-0 output is gates[0:C]; order l > 0 output is gates^l_c * x^l_c.
/// `gates` is rows x ((l_max+1)*C).
inline Var gate(Tape& t, Var x, Var gates, const IrrepsLayout& layout, std::size_t rows) {
  const auto xv = t.value(x), gv = t.value(gates);
  const std::size_t C = static_cast<std::size_t>(layout.channels());
  const std::size_t gw = static_cast<std::size_t>(layout.l_max() + 1) * C;
  require(xv.size() == rows * layout.size() && gv.size() == rows * gw, "gate: shape mismatch");
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * layout.size();
    const double* gr = gv.data() + r * gw;
    double* o = out.data() + r * layout.size();
    for (std::size_t c = 0; c < C; ++c) o[c] = gr[c];
    for (int l = 1; l <= layout.l_max(); ++l)
      for (std::size_t c = 0; c < C; ++c) {
        const double s = gr[static_cast<std::size_t>(l) * C + c];
        const std::size_t base = layout.index(l, static_cast<int>(c), -l);
        for (int m = 0; m < irrep_dim(l); ++m) o[base + m] = s * xr[base + m];
      }
  }
  return t.record(std::move(out), {x, gates}, [x, gates, layout, rows, C, gw](Tape& tp, Var self) {
    const auto g = tp.grad_of(self);
    const auto xv = tp.value(x), gv = tp.value(gates);
    const bool need_x = tp.requires_grad(x), need_g = tp.requires_grad(gates);
    std::span<double> gx, gg;
    if (need_x) gx = tp.grad(x);
    if (need_g) gg = tp.grad(gates);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t xo = r * layout.size(), go = r * gw;
      if (need_g)
        for (std::size_t c = 0; c < C; ++c) gg[go + c] += g[xo + c];
      for (int l = 1; l <= layout.l_max(); ++l)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t gi = go + static_cast<std::size_t>(l) * C + c;
          const std::size_t base = xo + layout.index(l, static_cast<int>(c), -l);
          double acc = 0.0;
          for (int m = 0; m < irrep_dim(l); ++m) {
            acc += g[base + m] * xv[base + m];
            if (need_x) gx[base + m] += gv[gi] * g[base + m];
          }
          if (need_g) gg[gi] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Tensor product and tensor expansion

/// Channel-wise (depthwise) weighted tensor product over a fixed path list.
/// For each output row p and path k = (l1, l2, l3):
///   out[p]^{l3}_c += norm_k * w[p]_{k,c} * (left[lrow[p]]^{l1}_{c'} (x) right[rrow[p]]^{l2}_c)^{l3}
/// where c' = c, or 0 when the left operand has a single channel (broadcast,
/// used for spherical-harmonic filters).
class TensorProductPlan {
 public:
  struct Path {
    CgPath orders;
    double norm;
  };

  TensorProductPlan(std::shared_ptr<const CGTable> cg, IrrepsLayout left, IrrepsLayout right, int l_out)
      : cg_(std::move(cg)), left_(left), right_(right), out_(l_out, right.channels()) {
    require(left.channels() == 1 || left.channels() == right.channels(),
            "TensorProductPlan: left operand must have 1 or C channels");
    std::vector<int> fan_in(static_cast<std::size_t>(l_out) + 1, 0);
    for (int l1 = 0; l1 <= left.l_max(); ++l1)
      for (int l2 = 0; l2 <= right.l_max(); ++l2)
        for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, l_out); ++l3) {
          require(cg_->has_path(l1, l2, l3), "TensorProductPlan: CG table lacks a required path");
          paths_.push_back({{l1, l2, l3}, 1.0});
          ++fan_in[l3];
        }
    for (auto& p : paths_) p.norm = 1.0 / std::sqrt(static_cast<double>(fan_in[p.orders.l3]));
  }

  const std::vector<Path>& paths() const { return paths_; }
  std::size_t weights_per_row() const { return paths_.size() * static_cast<std::size_t>(out_.channels()); }
  const IrrepsLayout& left() const { return left_; }
  const IrrepsLayout& right() const { return right_; }
  const IrrepsLayout& out() const { return out_; }
  const CGTable& cg() const { return *cg_; }

 private:
  std::shared_ptr<const CGTable> cg_;
  IrrepsLayout left_, right_, out_;
  std::vector<Path> paths_;
};

/// `weights` is either one row (shared) or one row per output pair.
inline Var tensor_product(Tape& t, std::shared_ptr<const TensorProductPlan> plan, Var left, Var right, Var weights,
                          Index lrow, Index rrow) {
  require(lrow.size() == rrow.size(), "tensor_product: index lists differ in length");
  const auto& P = *plan;
  const std::size_t pairs = lrow.size();
  const std::size_t ls = P.left().size(), rs = P.right().size(), os = P.out().size();
  const std::size_t C = static_cast<std::size_t>(P.out().channels());
  const bool left_broadcast = P.left().channels() == 1;
  const std::size_t wrow = P.weights_per_row();
  const auto lv = t.value(left), rv = t.value(right), wv = t.value(weights);
  require(lv.size() % ls == 0 && rv.size() % rs == 0, "tensor_product: operand shape mismatch");
  const bool per_row = wv.size() != wrow;
  require(!per_row || wv.size() == wrow * pairs, "tensor_product: weight shape mismatch");
  for (std::size_t p = 0; p < pairs; ++p)
    require(lrow[p] < lv.size() / ls && rrow[p] < rv.size() / rs, "tensor_product: row index out of range");

  std::vector<double> out(pairs * os, 0.0);
  for (std::size_t p = 0; p < pairs; ++p) {
    const double* L = lv.data() + lrow[p] * ls;
    const double* R = rv.data() + rrow[p] * rs;
    const double* W = wv.data() + (per_row ? p * wrow : 0);
    double* O = out.data() + p * os;
    for (std::size_t k = 0; k < P.paths().size(); ++k) {
      const auto& path = P.paths()[k];
      const auto [l1, l2, l3] = path.orders;
      const auto& nz = P.cg().nonzeros(l1, l2, l3);
      const std::size_t n1 = irrep_dim(l1), n2 = irrep_dim(l2), n3 = irrep_dim(l3);
      for (std::size_t c = 0; c < C; ++c) {
        const double w = W[k * C + c] * path.norm;
        const double* u = L + P.left().offset(l1) + (left_broadcast ? 0 : c * n1);
        const double* v = R + P.right().offset(l2) + c * n2;
        double* o = O + P.out().offset(l3) + c * n3;
        for (const auto& e : nz) o[e.m3] += w * e.value * u[e.m1] * v[e.m2];
      }
    }
  }

  return t.record(std::move(out), {left, right, weights},
                  [plan, left, right, weights, lrow = std::move(lrow), rrow = std::move(rrow), per_row](Tape& tp,
                                                                                                        Var self) {
                    const auto& P = *plan;
                    const std::size_t ls = P.left().size(), rs = P.right().size(), os = P.out().size();
                    const std::size_t C = static_cast<std::size_t>(P.out().channels());
                    const bool left_broadcast = P.left().channels() == 1;
                    const std::size_t wrow = P.weights_per_row();
                    const auto g = tp.grad_of(self);
                    const auto lv = tp.value(left), rv = tp.value(right), wv = tp.value(weights);
                    const bool need_l = tp.requires_grad(left), need_r = tp.requires_grad(right),
                               need_w = tp.requires_grad(weights);
                    std::span<double> gl, gr, gw;
                    if (need_l) gl = tp.grad(left);
                    if (need_r) gr = tp.grad(right);
                    if (need_w) gw = tp.grad(weights);
                    for (std::size_t p = 0; p < lrow.size(); ++p) {
                      const double* L = lv.data() + lrow[p] * ls;
                      const double* R = rv.data() + rrow[p] * rs;
                      const std::size_t woff = per_row ? p * wrow : 0;
                      const double* G = g.data() + p * os;
                      for (std::size_t k = 0; k < P.paths().size(); ++k) {
                        const auto& path = P.paths()[k];
                        const auto [l1, l2, l3] = path.orders;
                        const auto& nz = P.cg().nonzeros(l1, l2, l3);
                        const std::size_t n1 = irrep_dim(l1), n2 = irrep_dim(l2), n3 = irrep_dim(l3);
                        for (std::size_t c = 0; c < C; ++c) {
                          const double w = wv[woff + k * C + c] * path.norm;
                          const std::size_t uo = lrow[p] * ls + P.left().offset(l1) + (left_broadcast ? 0 : c * n1);
                          const std::size_t vo = rrow[p] * rs + P.right().offset(l2) + c * n2;
                          const double* u = L + (uo - lrow[p] * ls);
                          const double* v = R + (vo - rrow[p] * rs);
                          const double* go = G + P.out().offset(l3) + c * n3;
                          double dw = 0.0;
                          for (const auto& e : nz) {
                            const double t3 = e.value * go[e.m3];
                            if (t3 == 0.0) continue;
                            dw += t3 * u[e.m1] * v[e.m2];
                            if (need_l) gl[uo + e.m1] += w * t3 * v[e.m2];
                            if (need_r) gr[vo + e.m2] += w * t3 * u[e.m1];
                          }
                          if (need_w) gw[woff + k * C + c] += dw * path.norm;
                        }
                      }
                    }
                  });
}

/// Weighted tensor expansion of irreps rows into matrix blocks.
///
/// Each block (l1, l2) has `channels` output channels; output channel c is
/// written at (row_offset[c], col_offset[c]) in a rows x cols matrix. For
/// every input order lin in [|l1-l2|, l1+l2] available in the input layout:
///   out[p]_{c,(m1,m2)} += norm * sum_{c'} F[p]_{block,lin,c,c'} sum_{m3} C^{(l1,m1),(l2,m2)}_{(lin,m3)} f[p]^{lin}_{c',m3}
class ExpansionPlan {
 public:
  struct Block {
    int l1, l2;
    int channels;
    std::vector<std::size_t> row_offset, col_offset;
    std::vector<int> orders;       // lin values
    std::size_t weight_offset = 0;  // into one weight row
    double norm = 1.0;
  };

  ExpansionPlan(std::shared_ptr<const CGTable> cg, IrrepsLayout in, std::size_t out_rows, std::size_t out_cols,
                std::vector<Block> blocks)
      : cg_(std::move(cg)), in_(in), rows_(out_rows), cols_(out_cols), blocks_(std::move(blocks)) {
    std::size_t off = 0;
    const std::size_t C = static_cast<std::size_t>(in_.channels());
    for (auto& b : blocks_) {
      b.orders.clear();
      for (int lin = std::abs(b.l1 - b.l2); lin <= std::min(b.l1 + b.l2, in_.l_max()); ++lin) {
        require(cg_->has_path(b.l1, b.l2, lin), "ExpansionPlan: CG table lacks a required path");
        b.orders.push_back(lin);
      }
      if (b.orders.empty()) throw ConfigError("ExpansionPlan: input layout lacks the orders needed by a block");
      require(b.row_offset.size() == static_cast<std::size_t>(b.channels) &&
                  b.col_offset.size() == static_cast<std::size_t>(b.channels),
              "ExpansionPlan: placement list does not match channel count");
      b.weight_offset = off;
      b.norm = 1.0 / std::sqrt(static_cast<double>(C * b.orders.size()));
      off += b.orders.size() * static_cast<std::size_t>(b.channels) * C;
    }
    weights_per_row_ = off;
  }

  std::size_t weights_per_row() const { return weights_per_row_; }
  std::size_t out_size() const { return rows_ * cols_; }
  std::size_t out_rows() const { return rows_; }
  std::size_t out_cols() const { return cols_; }
  const IrrepsLayout& in() const { return in_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const CGTable& cg() const { return *cg_; }

 private:
  std::shared_ptr<const CGTable> cg_;
  IrrepsLayout in_;
  std::size_t rows_, cols_;
  std::vector<Block> blocks_;
  std::size_t weights_per_row_ = 0;
};

inline Var tensor_expansion(Tape& t, std::shared_ptr<const ExpansionPlan> plan, Var f, Var weights) {
  const auto& P = *plan;
  const std::size_t fs = P.in().size();
  const auto fv = t.value(f), wv = t.value(weights);
  require(fv.size() % fs == 0, "tensor_expansion: input shape mismatch");
  const std::size_t rows = fv.size() / fs;
  require(wv.size() == rows * P.weights_per_row(), "tensor_expansion: weight shape mismatch");
  const std::size_t C = static_cast<std::size_t>(P.in().channels());

  std::vector<double> out(rows * P.out_size(), 0.0);
  std::vector<double> g3;
  for (std::size_t p = 0; p < rows; ++p) {
    const double* F = fv.data() + p * fs;
    const double* W = wv.data() + p * P.weights_per_row();
    double* O = out.data() + p * P.out_size();
    for (const auto& b : P.blocks()) {
      for (std::size_t k = 0; k < b.orders.size(); ++k) {
        const int lin = b.orders[k];
        const std::size_t n3 = irrep_dim(lin);
        const auto& nz = P.cg().nonzeros(b.l1, b.l2, lin);
        g3.assign(n3, 0.0);
        for (int c = 0; c < b.channels; ++c) {
          std::fill(g3.begin(), g3.end(), 0.0);
          const double* wc = W + b.weight_offset + (k * b.channels + c) * C;
          for (std::size_t ci = 0; ci < C; ++ci) {
            const double* fin = F + P.in().offset(lin) + ci * n3;
            for (std::size_t m = 0; m < n3; ++m) g3[m] += wc[ci] * fin[m];
          }
          double* block = O + b.row_offset[c] * P.out_cols() + b.col_offset[c];
          for (const auto& e : nz) block[e.m1 * P.out_cols() + e.m2] += b.norm * e.value * g3[e.m3];
        }
      }
    }
  }

  return t.record(std::move(out), {f, weights}, [plan, f, weights, rows, C](Tape& tp, Var self) {
    const auto& P = *plan;
    const std::size_t fs = P.in().size();
    const auto g = tp.grad_of(self);
    const auto fv = tp.value(f), wv = tp.value(weights);
    const bool need_f = tp.requires_grad(f), need_w = tp.requires_grad(weights);
    std::span<double> gf, gw;
    if (need_f) gf = tp.grad(f);
    if (need_w) gw = tp.grad(weights);
    std::vector<double> dg;
    for (std::size_t p = 0; p < rows; ++p) {
      const double* F = fv.data() + p * fs;
      const std::size_t wbase = p * P.weights_per_row();
      const double* G = g.data() + p * P.out_size();
      for (const auto& b : P.blocks()) {
        for (std::size_t k = 0; k < b.orders.size(); ++k) {
          const int lin = b.orders[k];
          const std::size_t n3 = irrep_dim(lin);
          const auto& nz = P.cg().nonzeros(b.l1, b.l2, lin);
          dg.assign(n3, 0.0);
          for (int c = 0; c < b.channels; ++c) {
            std::fill(dg.begin(), dg.end(), 0.0);
            const double* block = G + b.row_offset[c] * P.out_cols() + b.col_offset[c];
            for (const auto& e : nz) dg[e.m3] += b.norm * e.value * block[e.m1 * P.out_cols() + e.m2];
            const std::size_t wc = wbase + b.weight_offset + (k * b.channels + c) * C;
            for (std::size_t ci = 0; ci < C; ++ci) {
              const std::size_t fo = p * fs + P.in().offset(lin) + ci * n3;
              if (need_w) {
                double s = 0.0;
                for (std::size_t m = 0; m < n3; ++m) s += dg[m] * F[fo - p * fs + m];
                gw[wc + ci] += s;
              }
              if (need_f) {
                const double w = wv[wc + ci];
                for (std::size_t m = 0; m < n3; ++m) gf[fo + m] += w * dg[m];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace qhnet::ad
