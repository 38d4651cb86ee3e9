#pragma once

#include <cstddef>
#include <functional>

#include "simkd/tensor.hpp"

namespace simkd {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace detail

/// a[MxK] * b[KxN]. Each output entry sums over k in ascending order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

/// a[MxK] * b[NxK]^T.
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_bt");
  detail::require_rank(b, 2, "matmul_bt");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("matmul_bt: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] = s;
    }
  return out;
}

/// a[KxM]^T * b[KxN].
inline Tensor matmul_at(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_at");
  detail::require_rank(b, 2, "matmul_at");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("matmul_at: inner extents differ, " + shape_str(a.shape()) + "^T x " +
                         shape_str(b.shape()));
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// --------------------------------------------------------------------------
// Convolution: stride 1, zero padding (k-1)/2, no bias. groups is 1 for a
// dense convolution or C for depthwise (kernel [C x 1 x k x k]).

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, cin_per_group, k, groups;
};

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t groups) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernel.dim(0), kernel.dim(1), kernel.dim(2), groups};
  if (kernel.dim(2) != kernel.dim(3) || (g.k != 1 && g.k != 3))
    throw DimensionError("conv2d: kernel must be 1x1 or 3x3, got " + shape_str(kernel.shape()));
  if (groups == 0 || g.cin % groups != 0 || g.cout % groups != 0 || g.cin / groups != g.cin_per_group)
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(input.shape()) + " kernel " +
                         shape_str(kernel.shape()));
  return g;
}

}  // namespace detail

namespace detail {

/// Column buffer for one group: rows (cj, ky, kx), columns (n, y, x).
/// Out-of-image taps are zero.
inline std::vector<double> im2col(const double* in, const ConvGeometry& g, std::size_t grp) {
  const long pad = static_cast<long>(g.k - 1) / 2;
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const std::size_t plane = g.h * g.w, cols = g.n * plane;
  std::vector<double> col(g.cin_per_group * g.k * g.k * cols, 0.0);
  for (std::size_t cj = 0; cj < g.cin_per_group; ++cj) {
    const std::size_t ci = grp * g.cin_per_group + cj;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((cj * g.k + ky) * g.k + kx) * cols;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* iplane = in + (n * g.cin + ci) * plane;
          double* rplane = row + n * plane;
          for (long y = y0; y < y1; ++y)
            for (long x = x0; x < x1; ++x) rplane[y * W + x] = iplane[(y + dy) * W + x + dx];
        }
      }
  }
  return col;
}

}  // namespace detail

/// Every output is accumulated over (ci, ky, kx) in ascending order.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t groups = 1) {
  const auto g = detail::conv_geometry(input, kernel, groups);
  const std::size_t plane = g.h * g.w, cols = g.n * plane;
  const std::size_t rows = g.cin_per_group * g.k * g.k;
  const std::size_t cout_per_group = g.cout / g.groups;
  Tensor out({g.n, g.cout, g.h, g.w});
  const double* ker = kernel.data().data();
  double* o = out.data().data();
  std::vector<double> acc(cols);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    const auto col = detail::im2col(input.data().data(), g, grp);
    for (std::size_t co = grp * cout_per_group; co < (grp + 1) * cout_per_group; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* krow = ker + co * rows;
      for (std::size_t j = 0; j < rows; ++j) {
        const double wv = krow[j];
        const double* crow = col.data() + j * cols;
        for (std::size_t p = 0; p < cols; ++p) acc[p] += wv * crow[p];
      }
      for (std::size_t n = 0; n < g.n; ++n)
        std::copy(acc.begin() + n * plane, acc.begin() + (n + 1) * plane, o + (n * g.cout + co) * plane);
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor kernel;
};

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                 std::size_t groups = 1) {
  const auto g = detail::conv_geometry(input, kernel, groups);
  if (grad_out.shape() != Shape{g.n, g.cout, g.h, g.w})
    throw DimensionError("conv2d_backward: upstream gradient " + shape_str(grad_out.shape()) +
                         " does not match output shape");
  const long pad = static_cast<long>(g.k - 1) / 2;
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const std::size_t plane = g.h * g.w, cols = g.n * plane;
  const std::size_t rows = g.cin_per_group * g.k * g.k;
  const std::size_t cout_per_group = g.cout / g.groups;
  ConvGrads grads{Tensor(input.shape()), Tensor(kernel.shape())};
  const double* ker = kernel.data().data();
  const double* go = grad_out.data().data();
  double* gi = grads.input.data().data();
  double* gk = grads.kernel.data().data();
  std::vector<double> gcol_row(cols);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    const auto col = detail::im2col(input.data().data(), g, grp);
    // upstream gradient of this group laid out as [co][n, y, x]
    std::vector<double> gog(cout_per_group * cols);
    for (std::size_t c = 0; c < cout_per_group; ++c)
      for (std::size_t n = 0; n < g.n; ++n)
        std::copy(go + (n * g.cout + grp * cout_per_group + c) * plane,
                  go + (n * g.cout + grp * cout_per_group + c + 1) * plane, gog.data() + c * cols + n * plane);
    for (std::size_t c = 0; c < cout_per_group; ++c) {
      const std::size_t co = grp * cout_per_group + c;
      const double* grow = gog.data() + c * cols;
      for (std::size_t j = 0; j < rows; ++j) {
        const double* crow = col.data() + j * cols;
        double s = 0.0;
        for (std::size_t p = 0; p < cols; ++p) s += grow[p] * crow[p];
        gk[co * rows + j] = s;
      }
    }
    for (std::size_t j = 0; j < rows; ++j) {
      std::fill(gcol_row.begin(), gcol_row.end(), 0.0);
      for (std::size_t c = 0; c < cout_per_group; ++c) {
        const double wv = ker[(grp * cout_per_group + c) * rows + j];
        const double* grow = gog.data() + c * cols;
        for (std::size_t p = 0; p < cols; ++p) gcol_row[p] += wv * grow[p];
      }
      // scatter back (col2im)
      const std::size_t cj = j / (g.k * g.k), ky = (j / g.k) % g.k, kx = j % g.k;
      const std::size_t ci = grp * g.cin_per_group + cj;
      const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
      const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
      const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
      for (std::size_t n = 0; n < g.n; ++n) {
        double* giplane = gi + (n * g.cin + ci) * plane;
        const double* src = gcol_row.data() + n * plane;
        for (long y = y0; y < y1; ++y)
          for (long x = x0; x < x1; ++x) giplane[(y + dy) * W + x + dx] += src[y * W + x];
      }
    }
  }
  return grads;
}

// --------------------------------------------------------------------------
// Non-overlapping average pooling over square windows.

inline Tensor avg_pool(const Tensor& input, std::size_t window) {
  detail::require_rank(input, 4, "avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0)
    throw DimensionError("avg_pool: window " + std::to_string(window) + " does not tile " +
                         shape_str(input.shape()));
  const std::size_t oh = h / window, ow = w / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) s += input[(p * h + y * window + dy) * w + x * window + dx];
        out[(p * oh + y) * ow + x] = s * scale;
      }
  return out;
}

inline Tensor avg_pool_backward(const Shape& input_shape, const Tensor& grad_out, std::size_t window) {
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t oh = h / window, ow = w / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor grad(input_shape);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double gv = grad_out[(p * oh + y) * ow + x] * scale;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) grad[(p * h + y * window + dy) * w + x * window + dx] = gv;
      }
  return grad;
}

// --------------------------------------------------------------------------

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace simkd
