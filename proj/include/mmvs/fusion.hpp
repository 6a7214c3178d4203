#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmvs/geometry.hpp"
#include "mmvs/tensor.hpp"

namespace mmvs {

struct CloudPoint {
  Eigen::Vector3f position;
  std::array<uint8_t, 3> color{0, 0, 0};
  int support = 0;  // consistent neighbour views; 0 when read from PLY
};

struct PointCloud {
  std::vector<CloudPoint> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::vector<Eigen::Vector3d> Positions() const;
};

uint8_t ColorByte(double v);  // [0,1] -> 0..255, rounded and clamped

struct FusionConfig {
  double prob_threshold = 0.8;  // keep pixels with prob > threshold
  double reproj_px = 1.0;       // reprojection distance, pixels at depth-map resolution
  double rel_depth = 0.01;      // |d' - d| / d
  int min_views = 2;            // consistent neighbour views needed
  int max_neighbors = 0;        // nearest views by optical-axis angle; 0 = all
  double conf_threshold = -1;   // optional filter on the mean C_tau map; < 0 disables

  void Validate() const;
};

// Depth with prob <= threshold set to 0.
Tensor ConfidenceFilter(const Tensor& depth, const Tensor& prob, double threshold);

struct ConsistencyResult {
  std::vector<uint8_t> consistent;         // per reference pixel
  std::vector<double> reproj_error;        // ||p' - p||, +inf when unmatched
  std::vector<double> rel_error;           // |d' - d| / d, +inf when unmatched
  std::vector<Eigen::Vector3d> src_point;  // backprojection of (q, d_src(q))
  std::vector<int64_t> src_index;          // nearest source pixel, -1 when out of bounds
};

// Forward-backward check of every reference pixel with depth > 0 against a
// source depth map; cameras are at depth-map resolution. The source depth is
// read at the nearest pixel q and (q, d_src(q)) is backprojected.
ConsistencyResult ConsistencyCheck(const Tensor& depth_ref, const Camera& cam_ref, const Tensor& depth_src,
                                   const Camera& cam_src, double reproj_px, double rel_depth);

struct FusionView {
  int view_id = 0;
  Tensor depth;  // [H,W]
  Tensor prob;   // [H,W]; empty skips the probability filter
  Tensor conf;   // [H,W] mean C_tau; empty skips the mask filter
  Tensor image;  // [3,H,W] colors at depth resolution
  Camera camera; // at depth resolution
};

// Views are processed in view_id order. A pixel is emitted when it passes the
// filters and is consistent with at least min_views neighbours; the point is
// the mean of its own and the matched backprojections. Pixels that an earlier
// processed pixel maps onto (fixed 2 px / 5% match, independent of the
// configured thresholds) are not processed again.
PointCloud Fuse(std::vector<FusionView> views, const FusionConfig& cfg);

// Binary little-endian PLY with float x y z and uchar red green blue.
void WritePly(const PointCloud& cloud, const std::string& path);
PointCloud ReadPly(const std::string& path);

}  // namespace mmvs
