#include "mmvs/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mmvs/ops.hpp"
#include "mmvs/rng.hpp"

namespace mmvs {

namespace {

constexpr int kFeatureStride = 4;
constexpr int kProbWindow = 4;

// Feature extractor layers, all with C output channels.
struct ConvSpec {
  const char* name;
  int stride;
};
constexpr ConvSpec kFeatureLayers[] = {
    {"conv0", 1}, {"conv1", 1}, {"conv2", 2}, {"conv3", 1}, {"conv4", 2}, {"conv5", 1},
};
constexpr int kNumFeatureLayers = static_cast<int>(std::size(kFeatureLayers));
constexpr int kMaskHidden = 3;

std::string Name(std::string_view prefix, const std::string& rest) { return std::string(prefix) + rest; }

void AddConv(ParamSet& p, Rng& rng, const std::string& name, const Shape& w_shape) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < w_shape.size(); ++i) fan_in *= w_shape[i];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(NumElements(w_shape));
  for (double& v : w) v = UniformRange(rng, -bound, bound);
  p.Add(name + ".w", Tensor::Parameter(w_shape, std::move(w)));
  p.Add(name + ".b", Tensor::Parameter({w_shape[0]}, std::vector<double>(w_shape[0], 0.0)));
}

void AddNorm(ParamSet& p, const std::string& name, int64_t channels) {
  p.Add(name + ".gamma", Tensor::Parameter({channels}, std::vector<double>(channels, 1.0)));
  p.Add(name + ".beta", Tensor::Parameter({channels}, std::vector<double>(channels, 0.0)));
}

Tensor Conv2dNamed(const ParamSet& p, const std::string& name, const Tensor& x, int stride) {
  return ops::Conv2d(x, p.Get(name + ".w"), p.Get(name + ".b"), stride, 1);
}

Tensor Conv3dNamed(const ParamSet& p, const std::string& name, const Tensor& x, int stride) {
  return ops::Conv3d(x, p.Get(name + ".w"), p.Get(name + ".b"), {stride, stride, stride}, {1, 1, 1});
}

Tensor NormRelu(const ParamSet& p, const std::string& name, const Tensor& x) {
  return ops::Relu(ops::SpatialNorm(x, p.Get(name + ".gamma"), p.Get(name + ".beta")));
}

}  // namespace

void NetworkConfig::Validate() const {
  if (feature_channels < 1 || reg_channels < 1 || mask_channels < 1) {
    throw std::invalid_argument("network channel counts must be positive");
  }
  if (reg_levels < 0) throw std::invalid_argument("reg_levels must be non-negative");
  if (num_depths < 2) throw std::invalid_argument("num_depths must be at least 2");
  if (num_depths % (1 << reg_levels) != 0) {
    throw std::invalid_argument("num_depths must be divisible by 2^reg_levels");
  }
}

bool IsMaskParam(std::string_view name) { return name.substr(0, kMaskPrefix.size()) == kMaskPrefix; }

ParamSet InitParams(const NetworkConfig& cfg, uint64_t seed) {
  cfg.Validate();
  Rng rng = MakeRng(seed, {0x1417});
  ParamSet p;
  const int64_t c = cfg.feature_channels;
  int64_t in = 3;
  for (int i = 0; i < kNumFeatureLayers; ++i) {
    const std::string n = Name(kFeaturePrefix, kFeatureLayers[i].name);
    AddConv(p, rng, n, {c, in, 3, 3});
    if (i + 1 < kNumFeatureLayers) AddNorm(p, n, c);
    in = c;
  }

  const int64_t b = cfg.reg_channels;
  AddConv(p, rng, Name(kRegPrefix, "enc0"), {b, c, 3, 3, 3});
  AddNorm(p, Name(kRegPrefix, "enc0"), b);
  for (int l = 1; l <= cfg.reg_levels; ++l) {
    const std::string n = Name(kRegPrefix, "enc" + std::to_string(l));
    AddConv(p, rng, n, {b << l, b << (l - 1), 3, 3, 3});
    AddNorm(p, n, b << l);
  }
  for (int l = cfg.reg_levels; l >= 1; --l) {
    const std::string n = Name(kRegPrefix, "dec" + std::to_string(l - 1));
    AddConv(p, rng, n, {b << (l - 1), b << l, 3, 3, 3});
    AddNorm(p, n, b << (l - 1));
  }
  AddConv(p, rng, Name(kRegPrefix, "out"), {1, b, 3, 3, 3});

  const int64_t m = cfg.mask_channels;
  in = 4;
  for (int i = 0; i < kMaskHidden; ++i) {
    const std::string n = Name(kMaskPrefix, "conv" + std::to_string(i));
    AddConv(p, rng, n, {m, in, 3, 3});
    AddNorm(p, n, m);
    in = m;
  }
  AddConv(p, rng, Name(kMaskPrefix, "out"), {1, m, 3, 3});
  return p;
}

std::vector<double> DepthHypotheses(double d_min, double d_max, int count, bool inverse) {
  if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("depth range must satisfy 0 < d_min < d_max");
  if (count < 2) throw std::invalid_argument("need at least 2 depth hypotheses");
  std::vector<double> d(count);
  for (int i = 0; i < count; ++i) {
    const double u = static_cast<double>(i) / (count - 1);
    if (inverse) {
      // Increasing depth means decreasing inverse depth.
      d[i] = 1.0 / (1.0 / d_min + u * (1.0 / d_max - 1.0 / d_min));
    } else {
      d[i] = d_min + u * (d_max - d_min);
    }
  }
  d.front() = d_min;
  d.back() = d_max;
  return d;
}

Tensor ExtractFeatures(const ParamSet& p, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("ExtractFeatures expects [3,H,W], got " + ShapeString(image.shape()));
  }
  if (image.dim(1) % kFeatureStride != 0 || image.dim(2) % kFeatureStride != 0) {
    throw DimensionError("ExtractFeatures: image size " + ShapeString(image.shape()) + " not divisible by 4");
  }
  Tensor x = image;
  for (int i = 0; i < kNumFeatureLayers; ++i) {
    const std::string n = Name(kFeaturePrefix, kFeatureLayers[i].name);
    x = Conv2dNamed(p, n, x, kFeatureLayers[i].stride);
    if (i + 1 < kNumFeatureLayers) x = NormRelu(p, n, x);
  }
  return x;
}

Tensor BuildCostVolume(const Tensor& ref_feat, std::span<const Tensor> warped) {
  if (warped.empty()) throw std::invalid_argument("cost volume needs at least one neighbour");
  if (ref_feat.rank() != 3) throw DimensionError("reference features must be [C,H,W]");
  const Shape& s = warped[0].shape();
  if (s.size() != 4 || s[0] != ref_feat.dim(0) || s[2] != ref_feat.dim(1) || s[3] != ref_feat.dim(2)) {
    throw DimensionError("warped volume " + ShapeString(s) + " does not match reference features " +
                         ShapeString(ref_feat.shape()));
  }
  for (const Tensor& w : warped) {
    if (w.shape() != s) throw DimensionError("warped volumes differ in shape");
  }
  const int64_t c = s[0], d = s[1], hw = s[2] * s[3];
  const size_t views = warped.size() + 1;
  const double inv_views = 1.0 / static_cast<double>(views);
  const auto rv = ref_feat.values();
  std::vector<std::span<const double>> wv;
  for (const Tensor& w : warped) wv.push_back(w.values());

  // Values are sorted per element before summation so that the result does
  // not depend on the neighbour order, bit for bit.
  std::vector<double> out(c * d * hw), vals(views);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t k = 0; k < d; ++k)
      for (int64_t i = 0; i < hw; ++i) {
        const int64_t idx = (ch * d + k) * hw + i;
        vals[0] = rv[ch * hw + i];
        for (size_t v = 1; v < views; ++v) vals[v] = wv[v - 1][idx];
        std::sort(vals.begin(), vals.end());
        double mean = 0;
        for (double x : vals) mean += x;
        mean *= inv_views;
        double var = 0;
        for (double x : vals) var += (x - mean) * (x - mean);
        out[idx] = var * inv_views;
      }

  std::vector<Tensor> inputs{ref_feat};
  inputs.insert(inputs.end(), warped.begin(), warped.end());
  return MakeResult(s, std::move(out), inputs, [inputs, c, d, hw, views, inv_views](const Node& o) {
    // d var / d x_v = 2 (x_v - mean) / V.
    std::vector<double*> grads;
    std::vector<std::span<const double>> vals;
    for (const Tensor& t : inputs) {
      grads.push_back(GradOf(t));
      vals.push_back(t.values());
    }
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t k = 0; k < d; ++k)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = (ch * d + k) * hw + i;
          const double g = o.grad[idx];
          if (g == 0.0) continue;
          const double r = vals[0][ch * hw + i];
          double mean = r;
          for (size_t v = 1; v < views; ++v) mean += vals[v][idx];
          mean *= inv_views;
          const double scale = 2.0 * inv_views * g;
          if (grads[0]) grads[0][ch * hw + i] += scale * (r - mean);
          for (size_t v = 1; v < views; ++v)
            if (grads[v]) grads[v][idx] += scale * (vals[v][idx] - mean);
        }
  });
}

Tensor RegularizeVolume(const ParamSet& p, const Tensor& cost, int levels) {
  if (cost.rank() != 4) throw DimensionError("cost volume must be [C,D,H,W]");
  const int64_t f = int64_t{1} << levels;
  for (int i = 1; i < 4; ++i) {
    if (cost.dim(i) % f != 0) {
      throw DimensionError("cost volume " + ShapeString(cost.shape()) + " not divisible by 2^" +
                           std::to_string(levels));
    }
  }
  std::vector<Tensor> skips;
  Tensor x = NormRelu(p, Name(kRegPrefix, "enc0"), Conv3dNamed(p, Name(kRegPrefix, "enc0"), cost, 1));
  for (int l = 1; l <= levels; ++l) {
    skips.push_back(x);
    const std::string n = Name(kRegPrefix, "enc" + std::to_string(l));
    x = NormRelu(p, n, Conv3dNamed(p, n, x, 2));
  }
  for (int l = levels; l >= 1; --l) {
    const std::string n = Name(kRegPrefix, "dec" + std::to_string(l - 1));
    x = NormRelu(p, n, Conv3dNamed(p, n, ops::UpsampleNearest2x(x), 1));
    x = ops::Add(x, skips[l - 1]);
  }
  const Tensor score = Conv3dNamed(p, Name(kRegPrefix, "out"), x, 1);
  const Tensor volume = score.Reshape({cost.dim(1), cost.dim(2), cost.dim(3)});
  return ops::SoftmaxLeading(ops::Neg(volume));
}

DepthRegression SoftArgminDepth(const Tensor& prob, std::span<const double> depth_values) {
  if (prob.rank() != 3 || prob.dim(0) != static_cast<int64_t>(depth_values.size())) {
    throw DimensionError("probability volume " + ShapeString(prob.shape()) + " does not match " +
                         std::to_string(depth_values.size()) + " depth values");
  }
  DepthRegression r;
  r.depth = ops::SoftArgmin(prob, depth_values);
  const int64_t d = prob.dim(0), hw = prob.dim(1) * prob.dim(2);
  const auto pv = prob.values();
  std::vector<double> pm(hw);
  for (int64_t i = 0; i < hw; ++i) {
    int64_t best = 0;
    for (int64_t k = 1; k < d; ++k)
      if (pv[k * hw + i] > pv[best * hw + i]) best = k;
    const int64_t lo = std::max<int64_t>(0, best - 1);
    const int64_t hi = std::min<int64_t>(d - 1, best + kProbWindow - 2);
    double s = 0;
    for (int64_t k = lo; k <= hi; ++k) s += pv[k * hw + i];
    pm[i] = std::min(1.0, s);
  }
  r.prob_map = Tensor::FromValues({prob.dim(1), prob.dim(2)}, std::move(pm));
  return r;
}

std::vector<Tensor> PredictConfidence(const ParamSet& p, std::span<const Tensor> error_maps,
                                      std::span<const Tensor> proj_masks) {
  if (error_maps.size() != proj_masks.size()) {
    throw std::invalid_argument("one projection mask per error map is required");
  }
  std::vector<Tensor> out;
  for (size_t i = 0; i < error_maps.size(); ++i) {
    const Tensor& e = error_maps[i];
    if (e.rank() != 3 || e.dim(0) != 3) throw DimensionError("error map must be [3,H,W], got " + ShapeString(e.shape()));
    if (proj_masks[i].shape() != Shape{e.dim(1), e.dim(2)}) {
      throw DimensionError("projection mask " + ShapeString(proj_masks[i].shape()) + " does not match error map");
    }
    const Tensor parts[2] = {e, proj_masks[i].Reshape({1, e.dim(1), e.dim(2)})};
    Tensor x = ops::Concat(parts);
    for (int k = 0; k < kMaskHidden; ++k) {
      const std::string n = Name(kMaskPrefix, "conv" + std::to_string(k));
      x = NormRelu(p, n, Conv2dNamed(p, n, x, 1));
    }
    x = ops::Sigmoid(Conv2dNamed(p, Name(kMaskPrefix, "out"), x, 1));
    out.push_back(x.Reshape({e.dim(1), e.dim(2)}));
  }
  return out;
}

DepthPrediction Forward(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg) {
  if (sample.neighbors.empty()) throw std::invalid_argument("sample has no neighbour views");
  const double scale = 1.0 / kFeatureStride;
  DepthPrediction pred;
  pred.depth_values = DepthHypotheses(sample.depth_min, sample.depth_max, cfg.num_depths, cfg.inverse_depth);

  const Tensor ref_feat = ExtractFeatures(p, sample.ref.image);
  const Camera ref_cam = sample.ref.camera.Scaled(scale);
  std::vector<Tensor> warped;
  std::vector<Camera> src_cams;
  for (const View& v : sample.neighbors) {
    if (v.image.shape() != sample.ref.image.shape()) throw DimensionError("neighbour image size differs from reference");
    const Tensor feat = ExtractFeatures(p, v.image);
    src_cams.push_back(v.camera.Scaled(scale));
    warped.push_back(WarpFeatureVolume(feat, ref_cam, src_cams.back(), pred.depth_values).warped);
  }
  const Tensor cost = BuildCostVolume(ref_feat, warped);
  const Tensor prob = RegularizeVolume(p, cost, cfg.reg_levels);
  DepthRegression reg = SoftArgminDepth(prob, pred.depth_values);
  pred.depth = reg.depth;
  pred.prob = reg.prob_map;

  pred.ref_image = ops::AvgPool(sample.ref.image, kFeatureStride).Detach();
  for (size_t i = 0; i < sample.neighbors.size(); ++i) {
    const Tensor src_small = ops::AvgPool(sample.neighbors[i].image, kFeatureStride).Detach();
    const WarpResult w = WarpWithDepth(src_small, ref_cam, src_cams[i], pred.depth);
    pred.warped_images.push_back(w.warped);
    pred.proj_masks.push_back(w.proj_mask);
    pred.error_maps.push_back(ops::Abs(ops::Sub(pred.ref_image, w.warped)).Detach());
  }
  if (cfg.use_conf_mask) {
    pred.conf_masks = PredictConfidence(p, pred.error_maps, pred.proj_masks);
  } else {
    for (const Tensor& m : pred.proj_masks) pred.conf_masks.push_back(Tensor::Full(m.shape(), 1.0));
  }
  return pred;
}

}  // namespace mmvs
