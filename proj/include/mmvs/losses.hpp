#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>

#include "mmvs/network.hpp"
#include "mmvs/tensor.hpp"

namespace mmvs {

struct LossWeights {
  double gamma_photo = 5.0;
  double gamma_ssim = 1.0;
  double gamma_smooth = 0.01;
  double mask_reg = 0.01;     // weight of -mean(log C_tau); 0 disables
  bool average_views = true;  // divide the reconstruction sum by N

  void Validate() const;
};

// Per-pixel SSIM [H,W] of two [C,H,W] images, 3x3 box statistics with
// reflection padding, averaged over channels.
Tensor SsimMap(const Tensor& a, const Tensor& b);

// Reconstruction loss over N neighbours. conf and proj are [H,W] each;
// images are [3,H,W]. The SSIM term is skipped when gamma_ssim is 0.
Tensor ReconLoss(const Tensor& ref, std::span<const Tensor> warped, std::span<const Tensor> conf,
                 std::span<const Tensor> proj, const LossWeights& w);
Tensor ReconLoss(const DepthPrediction& pred, const LossWeights& w);

// Edge-aware smoothness of depth [H,W] against image [3,H,W]; each direction
// is averaged over its own valid positions.
Tensor SmoothLoss(const Tensor& depth, const Tensor& image);

// Mean |depth - gt| over pixels with gt > 0. Throws std::invalid_argument
// without valid ground truth.
Tensor SupLoss(const Tensor& depth, const Tensor& gt);

struct SelfLossResult {
  Tensor total;
  double recon = 0.0;
  double smooth = 0.0;
  double mask_reg = 0.0;
  DepthPrediction pred;
};

// recon + gamma_smooth * smooth (+ the optional mask regularizer).
SelfLossResult SelfLoss(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg,
                        const LossWeights& w);

struct SupLossResult {
  Tensor total;
  DepthPrediction pred;
};
SupLossResult SupLoss(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg);

// Appends "step,name,value" rows; writes the header when the file is new.
class LossLog {
 public:
  LossLog() = default;
  explicit LossLog(const std::string& path);
  void Write(int64_t step, const std::string& name, double value);
  bool is_open() const { return os_.is_open(); }

 private:
  std::ofstream os_;
};

}  // namespace mmvs
