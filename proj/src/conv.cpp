#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <variant>

#include "mmvs/ops.hpp"

namespace mmvs::ops {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  int64_t c, d, h, w;  // input
  int64_t kd, kh, kw;  // kernel
  int64_t od, oh, ow;  // output
  std::array<int, 3> stride, pad;

  int64_t rows() const { return c * kd * kh * kw; }
  int64_t cols() const { return od * oh * ow; }
};

// Calls f(row, col_begin, src_begin, count, step) for every contiguous run of
// in-bounds taps along x; out-of-bounds taps are skipped (left at zero).
template <typename F>
void ForEachRun(const ConvGeometry& g, F f) {
  int64_t row = 0;
  const int64_t sx = g.stride[2];
  for (int64_t ch = 0; ch < g.c; ++ch)
    for (int64_t kz = 0; kz < g.kd; ++kz)
      for (int64_t ky = 0; ky < g.kh; ++ky)
        for (int64_t kx = 0; kx < g.kw; ++kx, ++row) {
          // Output x range whose input x lies inside [0, w).
          const int64_t off = kx - g.pad[2];
          if (g.w - 1 - off < 0) continue;
          const int64_t x_lo = off >= 0 ? 0 : (-off + sx - 1) / sx;
          const int64_t x_hi = std::min(g.ow, (g.w - 1 - off) / sx + 1);
          if (x_hi <= x_lo) continue;
          for (int64_t oz = 0; oz < g.od; ++oz) {
            const int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
            if (iz < 0 || iz >= g.d) continue;
            for (int64_t oy = 0; oy < g.oh; ++oy) {
              const int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iy < 0 || iy >= g.h) continue;
              const int64_t col = (oz * g.oh + oy) * g.ow + x_lo;
              const int64_t src = ((ch * g.d + iz) * g.h + iy) * g.w + x_lo * sx + off;
              f(row, col, src, x_hi - x_lo, sx);
            }
          }
        }
}

template <typename T>
struct ConvCore {
  // Forward: returns the im2col matrix (kept for backward) and fills out.
  static std::shared_ptr<RowMatrix<T>> Forward(const ConvGeometry& g, std::span<const double> x,
                                               std::span<const double> w, std::span<const double> b,
                                               int64_t out_ch, std::vector<double>& out) {
    auto col = std::make_shared<RowMatrix<T>>(RowMatrix<T>::Zero(g.rows(), g.cols()));
    T* cp = col->data();
    const int64_t cols = g.cols();
    ForEachRun(g, [&](int64_t row, int64_t c0, int64_t s0, int64_t n, int64_t step) {
      T* dst = cp + row * cols + c0;
      const double* src = x.data() + s0;
      for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<T>(src[i * step]);
    });
    RowMatrix<T> wm(out_ch, g.rows());
    for (int64_t i = 0; i < wm.size(); ++i) wm.data()[i] = static_cast<T>(w[i]);
    RowMatrix<T> om(out_ch, cols);
    om.noalias() = wm * (*col);
    for (int64_t o = 0; o < out_ch; ++o) {
      const T* r = om.data() + o * cols;
      double* dst = out.data() + o * cols;
      for (int64_t i = 0; i < cols; ++i) dst[i] = static_cast<double>(r[i]) + b[o];
    }
    return col;
  }

  static void Backward(const ConvGeometry& g, const RowMatrix<T>& col, std::span<const double> w,
                       std::span<const double> dout_v, int64_t out_ch, double* gx, double* gw, double* gb) {
    const int64_t cols = g.cols();
    RowMatrix<T> dout(out_ch, cols);
    for (int64_t i = 0; i < dout.size(); ++i) dout.data()[i] = static_cast<T>(dout_v[i]);
    if (gw) {
      RowMatrix<T> dw(out_ch, g.rows());
      dw.noalias() = dout * col.transpose();
      for (int64_t i = 0; i < dw.size(); ++i) gw[i] += static_cast<double>(dw.data()[i]);
    }
    if (gb) {
      for (int64_t o = 0; o < out_ch; ++o) {
        double s = 0;
        for (int64_t i = 0; i < cols; ++i) s += dout_v[o * cols + i];
        gb[o] += s;
      }
    }
    if (gx) {
      RowMatrix<T> wm(out_ch, g.rows());
      for (int64_t i = 0; i < wm.size(); ++i) wm.data()[i] = static_cast<T>(w[i]);
      RowMatrix<T> dcol(g.rows(), cols);
      dcol.noalias() = wm.transpose() * dout;
      const T* dc = dcol.data();
      ForEachRun(g, [&](int64_t row, int64_t c0, int64_t s0, int64_t n, int64_t step) {
        const T* src = dc + row * cols + c0;
        double* dst = gx + s0;
        for (int64_t i = 0; i < n; ++i) dst[i * step] += static_cast<double>(src[i]);
      });
    }
  }
};

}  // namespace

Tensor Conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::array<int, 3> stride,
              std::array<int, 3> padding) {
  if (x.rank() != 4 || w.rank() != 5 || b.rank() != 1) {
    throw DimensionError("Conv3d: input " + ShapeString(x.shape()) + ", kernel " +
                         ShapeString(w.shape()) + ", bias " + ShapeString(b.shape()));
  }
  ConvGeometry g;
  g.c = x.dim(0), g.d = x.dim(1), g.h = x.dim(2), g.w = x.dim(3);
  const int64_t out_ch = w.dim(0);
  g.kd = w.dim(2), g.kh = w.dim(3), g.kw = w.dim(4);
  g.stride = stride;
  g.pad = padding;
  if (w.dim(1) != g.c || b.dim(0) != out_ch) {
    throw DimensionError("Conv3d: input " + ShapeString(x.shape()) + ", kernel " +
                         ShapeString(w.shape()) + ", bias " + ShapeString(b.shape()));
  }
  for (int i = 0; i < 3; ++i) {
    if (stride[i] < 1 || padding[i] < 0) throw DimensionError("Conv3d: invalid stride/padding");
  }
  auto out_dim = [](int64_t n, int64_t k, int s, int p) { return (n + 2 * p - k) / s + 1; };
  g.od = out_dim(g.d, g.kd, stride[0], padding[0]);
  g.oh = out_dim(g.h, g.kh, stride[1], padding[1]);
  g.ow = out_dim(g.w, g.kw, stride[2], padding[2]);
  if (g.od < 1 || g.oh < 1 || g.ow < 1) {
    throw DimensionError("Conv3d: kernel " + ShapeString(w.shape()) + " larger than padded input " +
                         ShapeString(x.shape()));
  }

  // Single-precision arithmetic in the default 32-bit mode, double otherwise.
  std::vector<double> out(out_ch * g.cols());
  using ColF = std::shared_ptr<RowMatrix<float>>;
  using ColD = std::shared_ptr<RowMatrix<double>>;
  std::variant<ColF, ColD> col;
  if (CurrentPrecision() == Precision::kFloat32) {
    col = ConvCore<float>::Forward(g, x.values(), w.values(), b.values(), out_ch, out);
  } else {
    col = ConvCore<double>::Forward(g, x.values(), w.values(), b.values(), out_ch, out);
  }

  return MakeResult({out_ch, g.od, g.oh, g.ow}, std::move(out), {x, w, b},
                    [x, w, b, g, out_ch, col = std::move(col)](const Node& o) {
                      double* gx = GradOf(x);
                      double* gw = GradOf(w);
                      double* gb = GradOf(b);
                      if (const ColF* cf = std::get_if<ColF>(&col)) {
                        ConvCore<float>::Backward(g, **cf, w.values(), o.grad, out_ch, gx, gw, gb);
                      } else {
                        ConvCore<double>::Backward(g, *std::get<ColD>(col), w.values(), o.grad, out_ch, gx, gw,
                                                   gb);
                      }
                    });
}

Tensor Conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw DimensionError("Conv2d: input " + ShapeString(x.shape()) + ", kernel " + ShapeString(w.shape()));
  }
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw DimensionError("Conv2d: kernel spatial size must be odd, got " + ShapeString(w.shape()));
  }
  const Tensor x4 = x.Reshape({x.dim(0), 1, x.dim(1), x.dim(2)});
  const Tensor w5 = w.Reshape({w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)});
  const Tensor y = Conv3d(x4, w5, b, {1, stride, stride}, {0, padding, padding});
  return y.Reshape({y.dim(0), y.dim(2), y.dim(3)});
}

}  // namespace mmvs::ops
