#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mmvs/geometry.hpp"
#include "mmvs/param_set.hpp"
#include "mmvs/scene.hpp"
#include "mmvs/tensor.hpp"

namespace mmvs {

struct NetworkConfig {
  int feature_channels = 8;  // C
  int reg_channels = 8;      // base width of the 3D encoder-decoder
  int reg_levels = 2;
  int mask_channels = 8;
  int num_depths = 16;  // D
  bool inverse_depth = false;
  bool use_conf_mask = true;  // false: C_tau is identically 1

  void Validate() const;
};

// Parameter name prefixes of the three sub-networks.
inline constexpr std::string_view kFeaturePrefix = "feat.";
inline constexpr std::string_view kRegPrefix = "reg.";
inline constexpr std::string_view kMaskPrefix = "mask.";
bool IsMaskParam(std::string_view name);

// Kaiming-uniform conv weights, zero biases, unit norm scales.
ParamSet InitParams(const NetworkConfig& cfg, uint64_t seed);

// D hypotheses from d_min to d_max inclusive, uniform in depth or in inverse
// depth; strictly increasing.
std::vector<double> DepthHypotheses(double d_min, double d_max, int count, bool inverse);

// image [3,H,W] -> [C,H/4,W/4].
Tensor ExtractFeatures(const ParamSet& p, const Tensor& image);

// Variance over the reference feature broadcast along depth and the warped
// neighbour volumes; every input [C,D,H,W] except ref_feat [C,H,W].
Tensor BuildCostVolume(const Tensor& ref_feat, std::span<const Tensor> warped);

// cost [C,D,H,W] -> probability volume [D,H,W] (softmax along depth).
Tensor RegularizeVolume(const ParamSet& p, const Tensor& cost, int levels);

struct DepthRegression {
  Tensor depth;     // [H,W], differentiable
  Tensor prob_map;  // [H,W], probability mass of the 4 bins around the argmax
};
DepthRegression SoftArgminDepth(const Tensor& prob, std::span<const double> depth_values);

// Per-neighbour C_tau [H,W] from error maps [3,H,W] and projection masks
// [H,W], using the same weights for every neighbour.
std::vector<Tensor> PredictConfidence(const ParamSet& p, std::span<const Tensor> error_maps,
                                      std::span<const Tensor> proj_masks);

struct DepthPrediction {
  Tensor depth;                         // [H',W']
  Tensor prob;                          // [H',W']
  std::vector<Tensor> conf_masks;       // C_tau per neighbour
  std::vector<Tensor> proj_masks;       // C_proj per neighbour
  std::vector<Tensor> error_maps;       // |I_ref - I_warped| per neighbour, detached
  std::vector<Tensor> warped_images;    // [3,H',W'] per neighbour
  Tensor ref_image;                     // [3,H',W'] pooled reference image
  std::vector<double> depth_values;
};

DepthPrediction Forward(const ParamSet& p, const MultiViewSample& sample, const NetworkConfig& cfg);

}  // namespace mmvs
