#include "mmvs/losses.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <stdexcept>

#include "mmvs/io.hpp"
#include "mmvs/ops.hpp"

namespace mmvs {

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

// exp(-||grad I||_2) along x (dx = 1) or y, as a constant [H,W-1] or [H-1,W].
Tensor EdgeWeights(const Tensor& image, bool along_x) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t oh = along_x ? h : h - 1, ow = along_x ? w - 1 : w;
  const auto v = image.values();
  std::vector<double> out(oh * ow);
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* p = v.data() + ch * h * w;
        const double d = along_x ? p[y * w + x + 1] - p[y * w + x] : p[(y + 1) * w + x] - p[y * w + x];
        s += d * d;
      }
      out[y * ow + x] = std::exp(-std::sqrt(s));
    }
  return Tensor::FromValues({oh, ow}, std::move(out));
}

}  // namespace

void LossWeights::Validate() const {
  if (!(gamma_photo >= 0) || !(gamma_ssim >= 0) || !(gamma_smooth >= 0) || !(mask_reg >= 0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

Tensor SsimMap(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("SsimMap: shapes " + ShapeString(a.shape()) + " and " + ShapeString(b.shape()) + " differ");
  }
  if (a.rank() != 3) throw DimensionError("SsimMap expects [C,H,W]");
  using namespace ops;
  const Tensor mu_a = BoxFilter3(a), mu_b = BoxFilter3(b);
  const Tensor mu_a2 = Square(mu_a), mu_b2 = Square(mu_b), mu_ab = Mul(mu_a, mu_b);
  const Tensor var_a = Sub(BoxFilter3(Square(a)), mu_a2);
  const Tensor var_b = Sub(BoxFilter3(Square(b)), mu_b2);
  const Tensor cov = Sub(BoxFilter3(Mul(a, b)), mu_ab);
  const Tensor num = Mul(AddScalar(MulScalar(mu_ab, 2.0), kSsimC1), AddScalar(MulScalar(cov, 2.0), kSsimC2));
  const Tensor den = Mul(AddScalar(Add(mu_a2, mu_b2), kSsimC1), AddScalar(Add(var_a, var_b), kSsimC2));
  return MeanLeading(Div(num, den));
}

Tensor ReconLoss(const Tensor& ref, std::span<const Tensor> warped, std::span<const Tensor> conf,
                 std::span<const Tensor> proj, const LossWeights& w) {
  if (warped.empty()) throw std::invalid_argument("reconstruction loss needs at least one neighbour");
  if (conf.size() != warped.size() || proj.size() != warped.size()) {
    throw std::invalid_argument("reconstruction loss: " + std::to_string(warped.size()) + " warped images but " +
                                std::to_string(conf.size()) + " confidence and " + std::to_string(proj.size()) +
                                " projection masks");
  }
  using namespace ops;
  Tensor total = Tensor::Scalar(0.0);
  for (size_t i = 0; i < warped.size(); ++i) {
    if (w.gamma_photo > 0) {
      const Tensor resid = Abs(Sub(ref, warped[i]));
      const Tensor photo = Mean(Mul(Mul(resid, conf[i]), proj[i]));
      total = Add(total, MulScalar(photo, w.gamma_photo));
    }
    if (w.gamma_ssim > 0) {
      const Tensor s = SsimMap(Mul(ref, proj[i]), Mul(warped[i], proj[i]));
      total = Add(total, MulScalar(Mean(AddScalar(Neg(s), 1.0)), w.gamma_ssim));
    }
  }
  if (w.average_views) total = MulScalar(total, 1.0 / static_cast<double>(warped.size()));
  return total;
}

Tensor ReconLoss(const DepthPrediction& pred, const LossWeights& w) {
  return ReconLoss(pred.ref_image, pred.warped_images, pred.conf_masks, pred.proj_masks, w);
}

Tensor SmoothLoss(const Tensor& depth, const Tensor& image) {
  if (depth.rank() != 2 || image.rank() != 3 || image.dim(1) != depth.dim(0) || image.dim(2) != depth.dim(1)) {
    throw DimensionError("SmoothLoss: depth " + ShapeString(depth.shape()) + " and image " +
                         ShapeString(image.shape()) + " disagree");
  }
  using namespace ops;
  Tensor total = Tensor::Scalar(0.0);
  if (depth.dim(1) > 1) total = Add(total, Mean(Mul(Abs(DiffX(depth)), EdgeWeights(image, true))));
  if (depth.dim(0) > 1) total = Add(total, Mean(Mul(Abs(DiffY(depth)), EdgeWeights(image, false))));
  return total;
}

Tensor SupLoss(const Tensor& depth, const Tensor& gt) {
  if (!gt.defined() || gt.numel() == 0) throw std::invalid_argument("supervised loss needs ground-truth depth");
  if (gt.shape() != depth.shape()) {
    throw DimensionError("SupLoss: depth " + ShapeString(depth.shape()) + " vs ground truth " +
                         ShapeString(gt.shape()));
  }
  std::vector<double> mask(gt.numel());
  int64_t count = 0;
  const auto g = gt.values();
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = g[i] > 0 ? 1.0 : 0.0;
    count += g[i] > 0;
  }
  if (count == 0) throw std::invalid_argument("ground truth has no valid pixels");
  const Tensor m = Tensor::FromValues(gt.shape(), std::move(mask));
  return ops::MulScalar(ops::Sum(ops::Mul(ops::Abs(ops::Sub(depth, gt)), m)), 1.0 / static_cast<double>(count));
}

SelfLossResult SelfLoss(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg,
                        const LossWeights& w) {
  SelfLossResult r;
  r.pred = Forward(p, sample, cfg);
  const Tensor recon = ReconLoss(r.pred, w);
  const Tensor smooth = SmoothLoss(r.pred.depth, r.pred.ref_image);
  r.recon = recon.item();
  r.smooth = smooth.item();
  r.total = w.gamma_smooth > 0 ? ops::Add(recon, ops::MulScalar(smooth, w.gamma_smooth)) : recon;
  if (cfg.use_conf_mask && w.mask_reg > 0) {
    Tensor reg = Tensor::Scalar(0.0);
    for (const Tensor& c : r.pred.conf_masks) reg = ops::Add(reg, ops::Mean(ops::Log(c)));
    reg = ops::MulScalar(reg, -w.mask_reg / static_cast<double>(r.pred.conf_masks.size()));
    r.mask_reg = reg.item();
    r.total = ops::Add(r.total, reg);
  }
  return r;
}

SupLossResult SupLoss(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg) {
  SupLossResult r;
  r.pred = Forward(p, sample, cfg);
  r.total = SupLoss(r.pred.depth, sample.gt_depth);
  return r;
}

LossLog::LossLog(const std::string& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  os_.open(path, std::ios::app);
  if (!os_) throw io::IoError("cannot open loss log " + path);
  if (fresh) os_ << "step,loss,value\n";
  os_ << std::setprecision(9);
}

void LossLog::Write(int64_t step, const std::string& name, double value) {
  if (!os_.is_open()) return;
  os_ << step << "," << name << "," << value << "\n";
  os_.flush();
}

}  // namespace mmvs
