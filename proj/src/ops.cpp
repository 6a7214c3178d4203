#include "mmvs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmvs::ops {

namespace {

struct Broadcast {
  Shape out_shape;
  int64_t outer = 1;  // repeats of the smaller operand
  int64_t inner = 1;  // elements of the smaller operand
  bool a_small = false;
  bool b_small = false;
};

Broadcast ResolveBroadcast(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Broadcast bc;
  if (sa == sb) {
    bc.out_shape = sa;
    bc.inner = a.numel();
    return bc;
  }
  const bool a_big = sa.size() > sb.size();
  const Shape& big = a_big ? sa : sb;
  const Shape& small = a_big ? sb : sa;
  if (small.size() >= big.size() ||
      !std::equal(small.begin(), small.end(), big.end() - static_cast<int64_t>(small.size()))) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + ShapeString(sa) + " and " +
                         ShapeString(sb));
  }
  bc.out_shape = big;
  bc.inner = NumElements(small);
  bc.outer = bc.inner == 0 ? 0 : NumElements(big) / bc.inner;
  bc.a_small = !a_big;
  bc.b_small = a_big;
  return bc;
}

// Elementwise binary op with derivative callbacks.
template <typename F, typename DA, typename DB>
Tensor Binary(const Tensor& a, const Tensor& b, const char* name, F f, DA dfa, DB dfb) {
  const Broadcast bc = ResolveBroadcast(a, b, name);
  const int64_t n = bc.outer * bc.inner;
  const auto av = a.values();
  const auto bv = b.values();
  auto ia = [bc](int64_t i) { return bc.a_small ? i % bc.inner : i; };
  auto ib = [bc](int64_t i) { return bc.b_small ? i % bc.inner : i; };
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[ia(i)], bv[ib(i)]);
  return MakeResult(bc.out_shape, std::move(out), {a, b},
                    [a, b, bc, n, ia, ib, dfa, dfb](const Node& o) {
                      double* ga = GradOf(a);
                      double* gb = GradOf(b);
                      const auto av = a.values();
                      const auto bv = b.values();
                      for (int64_t i = 0; i < n; ++i) {
                        const double g = o.grad[i];
                        const double x = av[ia(i)];
                        const double y = bv[ib(i)];
                        if (ga) ga[ia(i)] += g * dfa(x, y);
                        if (gb) gb[ib(i)] += g * dfb(x, y);
                      }
                    });
}

template <typename F, typename D>
Tensor Unary(const Tensor& a, F f, D df) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return MakeResult(a.shape(), std::move(out), {a}, [a, df](const Node& o) {
    double* ga = GradOf(a);
    const auto av = a.values();
    for (size_t i = 0; i < av.size(); ++i) ga[i] += o.grad[i] * df(av[i], o.value[i]);
  });
}

Shape TailShape(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor Div(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor AddScalar(const Tensor& a, double s) {
  return Unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor MulScalar(const Tensor& a, double s) {
  return Unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor Neg(const Tensor& a) { return MulScalar(a, -1.0); }

Tensor Abs(const Tensor& a) {
  return Unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor Relu(const Tensor& a) {
  return Unary(
      a, [](double x) { return x > 0 || std::isnan(x) ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor Sigmoid(const Tensor& a) {
  return Unary(
      a,
      [](double x) {
        // Clamp keeps the output strictly inside (0,1) in float storage.
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return std::clamp(s, 1e-7, 1.0 - 1e-7);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Exp(const Tensor& a) {
  return Unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor Log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0)) throw NumericalError("Log of non-positive value");
  }
  return Unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor Square(const Tensor& a) {
  return Unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor Sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return MakeResult({}, {s}, {a}, [a](const Node& o) {
    double* ga = GradOf(a);
    const double g = o.grad[0];
    for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g;
  });
}

Tensor Mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("Mean of empty tensor");
  return MulScalar(Sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor SumLeading(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("SumLeading needs rank >= 1");
  const int64_t n = a.dim(0);
  const int64_t inner = n == 0 ? 0 : a.numel() / n;
  const auto av = a.values();
  std::vector<double> out(inner, 0.0);
  for (int64_t k = 0; k < n; ++k) {
    for (int64_t i = 0; i < inner; ++i) out[i] += av[k * inner + i];
  }
  return MakeResult(TailShape(a.shape()), std::move(out), {a}, [a, n, inner](const Node& o) {
    double* ga = GradOf(a);
    for (int64_t k = 0; k < n; ++k) {
      for (int64_t i = 0; i < inner; ++i) ga[k * inner + i] += o.grad[i];
    }
  });
}

Tensor MeanLeading(const Tensor& a) {
  return MulScalar(SumLeading(a), 1.0 / static_cast<double>(a.dim(0)));
}

Tensor Concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("Concat of nothing");
  const Shape tail = TailShape(parts[0].shape());
  int64_t lead = 0;
  for (const Tensor& p : parts) {
    if (p.rank() < 1 || TailShape(p.shape()) != tail) {
      throw DimensionError("Concat: shape " + ShapeString(p.shape()) + " incompatible with " +
                           ShapeString(parts[0].shape()));
    }
    lead += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(lead * NumElements(tail));
  for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape = tail;
  shape.insert(shape.begin(), lead);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return MakeResult(shape, std::move(out), inputs, [inputs](const Node& o) {
    int64_t offset = 0;
    for (const Tensor& p : inputs) {
      if (double* g = GradOf(p)) {
        for (int64_t i = 0; i < p.numel(); ++i) g[i] += o.grad[offset + i];
      }
      offset += p.numel();
    }
  });
}

Tensor Select(const Tensor& a, int64_t i) {
  if (a.rank() < 1 || i < 0 || i >= a.dim(0)) {
    throw DimensionError("Select index " + std::to_string(i) + " out of range for " +
                         ShapeString(a.shape()));
  }
  const int64_t inner = a.numel() / a.dim(0);
  const auto av = a.values();
  std::vector<double> out(av.begin() + i * inner, av.begin() + (i + 1) * inner);
  return MakeResult(TailShape(a.shape()), std::move(out), {a}, [a, i, inner](const Node& o) {
    double* ga = GradOf(a);
    for (int64_t k = 0; k < inner; ++k) ga[i * inner + k] += o.grad[k];
  });
}

Tensor BroadcastDepth(const Tensor& a, int64_t depth) {
  if (a.rank() < 1 || depth < 1) throw DimensionError("BroadcastDepth: bad input");
  const int64_t c = a.dim(0);
  const int64_t inner = a.numel() / c;
  const auto av = a.values();
  std::vector<double> out(c * depth * inner);
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t d = 0; d < depth; ++d) {
      std::copy_n(av.begin() + ch * inner, inner, out.begin() + (ch * depth + d) * inner);
    }
  }
  Shape shape = a.shape();
  shape.insert(shape.begin() + 1, depth);
  return MakeResult(shape, std::move(out), {a}, [a, c, depth, inner](const Node& o) {
    double* ga = GradOf(a);
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t d = 0; d < depth; ++d) {
        const double* g = o.grad.data() + (ch * depth + d) * inner;
        for (int64_t i = 0; i < inner; ++i) ga[ch * inner + i] += g[i];
      }
    }
  });
}

Tensor UpsampleNearest2x(const Tensor& x) {
  if (x.rank() < 2 || x.rank() > 4) throw DimensionError("UpsampleNearest2x expects [C, S...] with 1-3 spatial dims");
  // Treat every input as [C, D, H, W] with absent leading spatial dims = 1.
  Shape s = x.shape();
  while (s.size() < 4) s.insert(s.begin() + 1, 1);
  const int64_t c = s[0], d = s[1], h = s[2], w = s[3];
  const int spatial = x.rank() - 1;
  const int64_t od = spatial == 3 ? 2 * d : d;
  const int64_t oh = spatial >= 2 ? 2 * h : h;
  const int64_t ow = 2 * w;
  auto src_index = [=](int64_t ch, int64_t z, int64_t y, int64_t xx) {
    const int64_t sz = spatial == 3 ? z / 2 : z;
    const int64_t sy = spatial >= 2 ? y / 2 : y;
    return ((ch * d + sz) * h + sy) * w + xx / 2;
  };
  const auto xv = x.values();
  std::vector<double> out(c * od * oh * ow);
  int64_t k = 0;
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t z = 0; z < od; ++z)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) out[k++] = xv[src_index(ch, z, y, xx)];
  Shape shape = x.shape();
  for (int i = 1; i < x.rank(); ++i) shape[i] *= 2;
  return MakeResult(shape, std::move(out), {x}, [=](const Node& o) {
    double* gx = GradOf(x);
    int64_t k = 0;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t z = 0; z < od; ++z)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xx = 0; xx < ow; ++xx) gx[src_index(ch, z, y, xx)] += o.grad[k++];
  });
}

Tensor SpatialNorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 2) throw DimensionError("SpatialNorm expects [C, S...], got " + ShapeString(x.shape()));
  const int64_t c = x.dim(0);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("SpatialNorm: scale/shift shape " + ShapeString(gamma.shape()) + "/" +
                         ShapeString(beta.shape()) + " for input " + ShapeString(x.shape()));
  }
  const int64_t n = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(c);
  std::vector<double> out(x.numel());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* p = xv.data() + ch * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += p[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(n);
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i) {
      const double h = (p[i] - mean) * inv_std[ch];
      xhat[ch * n + i] = h;
      out[ch * n + i] = gv[ch] * h + bv[ch];
    }
  }
  return MakeResult(x.shape(), std::move(out), {x, gamma, beta},
                    [x, gamma, beta, c, n, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](const Node& o) {
                      double* gx = GradOf(x);
                      double* gg = GradOf(gamma);
                      double* gb = GradOf(beta);
                      const auto gv = gamma.values();
                      for (int64_t ch = 0; ch < c; ++ch) {
                        const double* dy = o.grad.data() + ch * n;
                        const double* h = xhat.data() + ch * n;
                        double sum_dy = 0.0, sum_dy_h = 0.0;
                        for (int64_t i = 0; i < n; ++i) {
                          sum_dy += dy[i];
                          sum_dy_h += dy[i] * h[i];
                        }
                        if (gg) gg[ch] += sum_dy_h;
                        if (gb) gb[ch] += sum_dy;
                        if (gx) {
                          const double scale = gv[ch] * inv_std[ch] / static_cast<double>(n);
                          for (int64_t i = 0; i < n; ++i) {
                            gx[ch * n + i] += scale * (static_cast<double>(n) * dy[i] - sum_dy -
                                                       h[i] * sum_dy_h);
                          }
                        }
                      }
                    });
}

Tensor SoftmaxLeading(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) < 1) throw DimensionError("SoftmaxLeading needs D >= 1");
  const int64_t d = x.dim(0);
  const int64_t inner = x.numel() / d;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (int64_t i = 0; i < inner; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < d; ++k) m = std::max(m, xv[k * inner + i]);
    double z = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double e = std::exp(xv[k * inner + i] - m);
      out[k * inner + i] = e;
      z += e;
    }
    for (int64_t k = 0; k < d; ++k) out[k * inner + i] /= z;
  }
  return MakeResult(x.shape(), std::move(out), {x}, [x, d, inner](const Node& o) {
    double* gx = GradOf(x);
    for (int64_t i = 0; i < inner; ++i) {
      double dot = 0.0;
      for (int64_t k = 0; k < d; ++k) dot += o.value[k * inner + i] * o.grad[k * inner + i];
      for (int64_t k = 0; k < d; ++k) {
        gx[k * inner + i] += o.value[k * inner + i] * (o.grad[k * inner + i] - dot);
      }
    }
  });
}

Tensor SoftArgmin(const Tensor& prob, std::span<const double> depth_values) {
  if (prob.rank() != 3 || prob.dim(0) != static_cast<int64_t>(depth_values.size())) {
    throw DimensionError("SoftArgmin: probability " + ShapeString(prob.shape()) + " vs " +
                         std::to_string(depth_values.size()) + " depth values");
  }
  const int64_t d = prob.dim(0);
  const int64_t inner = prob.numel() / d;
  const auto pv = prob.values();
  std::vector<double> out(inner, 0.0);
  for (int64_t k = 0; k < d; ++k) {
    for (int64_t i = 0; i < inner; ++i) out[i] += pv[k * inner + i] * depth_values[k];
  }
  std::vector<double> dv(depth_values.begin(), depth_values.end());
  return MakeResult({prob.dim(1), prob.dim(2)}, std::move(out), {prob},
                    [prob, d, inner, dv = std::move(dv)](const Node& o) {
                      double* gp = GradOf(prob);
                      for (int64_t k = 0; k < d; ++k) {
                        for (int64_t i = 0; i < inner; ++i) gp[k * inner + i] += o.grad[i] * dv[k];
                      }
                    });
}

SampleResult BilinearSample(const Tensor& image, const Tensor& coords) {
  if (image.rank() != 3 || image.numel() == 0) {
    throw DimensionError("BilinearSample: image must be non-empty [C,H,W], got " + ShapeString(image.shape()));
  }
  if (coords.rank() < 2 || coords.dim(0) != 2) {
    throw DimensionError("BilinearSample: coords must be [2, S...], got " + ShapeString(coords.shape()));
  }
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t n = coords.numel() / 2;
  const auto iv = image.values();
  const auto cv = coords.values();

  struct Tap {
    int64_t x0, y0, x1, y1;
    double wx, wy;
  };
  std::vector<Tap> taps(n);
  std::vector<double> valid(n, 0.0);
  std::vector<double> out(c * n, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double x = cv[i];
    const double y = cv[n + i];
    if (!(x >= 0.0 && x <= static_cast<double>(w - 1) && y >= 0.0 && y <= static_cast<double>(h - 1))) {
      taps[i].x0 = -1;
      continue;
    }
    valid[i] = 1.0;
    Tap t;
    t.x0 = std::min(static_cast<int64_t>(std::floor(x)), w - 1);
    t.y0 = std::min(static_cast<int64_t>(std::floor(y)), h - 1);
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.wx = x - static_cast<double>(t.x0);
    t.wy = y - static_cast<double>(t.y0);
    taps[i] = t;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = iv.data() + ch * h * w;
      const double top = (1 - t.wx) * p[t.y0 * w + t.x0] + t.wx * p[t.y0 * w + t.x1];
      const double bot = (1 - t.wx) * p[t.y1 * w + t.x0] + t.wx * p[t.y1 * w + t.x1];
      out[ch * n + i] = (1 - t.wy) * top + t.wy * bot;
    }
  }

  Shape out_shape = coords.shape();
  out_shape[0] = c;
  Shape mask_shape(coords.shape().begin() + 1, coords.shape().end());
  SampleResult r;
  r.valid = Tensor::FromValues(mask_shape, std::move(valid));
  r.values = MakeResult(out_shape, std::move(out), {image, coords},
                        [image, coords, c, h, w, n, taps = std::move(taps)](const Node& o) {
                          double* gi = GradOf(image);
                          double* gc = GradOf(coords);
                          const auto iv = image.values();
                          for (int64_t i = 0; i < n; ++i) {
                            const Tap& t = taps[i];
                            if (t.x0 < 0) continue;
                            double gx = 0.0, gy = 0.0;
                            for (int64_t ch = 0; ch < c; ++ch) {
                              const double g = o.grad[ch * n + i];
                              if (g == 0.0) continue;
                              if (gi) {
                                double* q = gi + ch * h * w;
                                q[t.y0 * w + t.x0] += g * (1 - t.wx) * (1 - t.wy);
                                q[t.y0 * w + t.x1] += g * t.wx * (1 - t.wy);
                                q[t.y1 * w + t.x0] += g * (1 - t.wx) * t.wy;
                                q[t.y1 * w + t.x1] += g * t.wx * t.wy;
                              }
                              if (gc) {
                                const double* p = iv.data() + ch * h * w;
                                const double p00 = p[t.y0 * w + t.x0], p01 = p[t.y0 * w + t.x1];
                                const double p10 = p[t.y1 * w + t.x0], p11 = p[t.y1 * w + t.x1];
                                gx += g * ((1 - t.wy) * (p01 - p00) + t.wy * (p11 - p10));
                                gy += g * ((1 - t.wx) * (p10 - p00) + t.wx * (p11 - p01));
                              }
                            }
                            if (gc) {
                              gc[i] += gx;
                              gc[n + i] += gy;
                            }
                          }
                        });
  return r;
}

namespace {

int64_t Reflect(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

Tensor BoxFilter3(const Tensor& x) {
  if (x.rank() < 2 || x.dim(-1) < 2 || x.dim(-2) < 2) {
    throw DimensionError("BoxFilter3 needs at least 2x2 spatial input, got " + ShapeString(x.shape()));
  }
  const int64_t h = x.dim(-2), w = x.dim(-1);
  const int64_t planes = x.numel() / (h * w);
  const auto xv = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * h * w;
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int64_t sy = Reflect(y + dy, h);
          for (int dx = -1; dx <= 1; ++dx) s += src[sy * w + Reflect(xx + dx, w)];
        }
        dst[y * w + xx] = s / 9.0;
      }
    }
  }
  return MakeResult(x.shape(), std::move(out), {x}, [x, h, w, planes](const Node& o) {
    double* gx = GradOf(x);
    for (int64_t p = 0; p < planes; ++p) {
      const double* g = o.grad.data() + p * h * w;
      double* dst = gx + p * h * w;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t xx = 0; xx < w; ++xx) {
          const double v = g[y * w + xx] / 9.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int64_t sy = Reflect(y + dy, h);
            for (int dx = -1; dx <= 1; ++dx) dst[sy * w + Reflect(xx + dx, w)] += v;
          }
        }
      }
    }
  });
}

Tensor DiffX(const Tensor& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) throw DimensionError("DiffX on empty input");
  const int64_t w = x.dim(-1);
  const int64_t rows = x.numel() / w;
  const auto xv = x.values();
  std::vector<double> out(rows * (w - 1));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i + 1 < w; ++i) out[r * (w - 1) + i] = xv[r * w + i + 1] - xv[r * w + i];
  Shape shape = x.shape();
  shape.back() = w - 1;
  return MakeResult(shape, std::move(out), {x}, [x, w, rows](const Node& o) {
    double* gx = GradOf(x);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i + 1 < w; ++i) {
        const double g = o.grad[r * (w - 1) + i];
        gx[r * w + i + 1] += g;
        gx[r * w + i] -= g;
      }
  });
}

Tensor DiffY(const Tensor& x) {
  if (x.rank() < 2 || x.dim(-2) < 1) throw DimensionError("DiffY needs rank >= 2");
  const int64_t h = x.dim(-2), w = x.dim(-1);
  const int64_t planes = x.numel() / (h * w);
  const auto xv = x.values();
  std::vector<double> out(planes * (h - 1) * w);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y + 1 < h; ++y)
      for (int64_t i = 0; i < w; ++i)
        out[(p * (h - 1) + y) * w + i] = xv[(p * h + y + 1) * w + i] - xv[(p * h + y) * w + i];
  Shape shape = x.shape();
  shape[shape.size() - 2] = h - 1;
  return MakeResult(shape, std::move(out), {x}, [x, h, w, planes](const Node& o) {
    double* gx = GradOf(x);
    for (int64_t p = 0; p < planes; ++p)
      for (int64_t y = 0; y + 1 < h; ++y)
        for (int64_t i = 0; i < w; ++i) {
          const double g = o.grad[(p * (h - 1) + y) * w + i];
          gx[(p * h + y + 1) * w + i] += g;
          gx[(p * h + y) * w + i] -= g;
        }
  });
}

Tensor AvgPool(const Tensor& x, int factor) {
  if (x.rank() != 3 || factor < 1 || x.dim(1) % factor != 0 || x.dim(2) % factor != 0) {
    throw DimensionError("AvgPool: " + ShapeString(x.shape()) + " not divisible by " +
                         std::to_string(factor));
  }
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t oh = h / factor, ow = w / factor;
  const double norm = 1.0 / static_cast<double>(factor * factor);
  const auto xv = x.values();
  std::vector<double> out(c * oh * ow, 0.0);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t i = 0; i < w; ++i)
        out[(ch * oh + y / factor) * ow + i / factor] += xv[(ch * h + y) * w + i] * norm;
  return MakeResult({c, oh, ow}, std::move(out), {x}, [=](const Node& o) {
    double* gx = GradOf(x);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t i = 0; i < w; ++i)
          gx[(ch * h + y) * w + i] += o.grad[(ch * oh + y / factor) * ow + i / factor] * norm;
  });
}

}  // namespace mmvs::ops
