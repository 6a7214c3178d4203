#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "mmvs/tensor.hpp"

namespace mmvs {

// Pinhole camera. R and t map world to camera coordinates: X_c = R X + t.
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  Eigen::Vector3d Center() const { return -R.transpose() * t; }
  Eigen::Vector3d ViewDirection() const { return R.row(2).transpose(); }

  // Camera for the image resampled by `factor` (0.25 = four times smaller)
  // with pixel centres kept consistent: c' = (c + 0.5) * factor - 0.5.
  Camera Scaled(double factor) const;

  // Throws std::invalid_argument unless K is upper triangular with positive
  // focal lengths and R is a rotation.
  void Validate() const;
};

struct Projection {
  Eigen::Vector2d pixel;
  double depth = 0.0;
  bool in_front = false;  // depth > 0
};

Projection Project(const Camera& cam, const Eigen::Vector3d& world);
// Inverse of Project. Throws std::invalid_argument for depth <= 0.
Eigen::Vector3d Backproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth);

// Relative pose taking reference-camera coordinates to source-camera ones.
struct RelativePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
};
RelativePose Relative(const Camera& ref, const Camera& src);

// Homography mapping reference pixels to source pixels through the
// fronto-parallel plane z = depth of the reference camera, normalised so
// that H(2,2) = 1 when that entry is nonzero.
Eigen::Matrix3d PlaneSweepHomography(const Camera& ref, const Camera& src, double depth);

// Source pixel coordinates [2, D, H, W] of every reference pixel on every
// depth plane.
Tensor PlaneSweepCoords(const Camera& ref, const Camera& src, std::span<const double> depths);

struct WarpResult {
  Tensor warped;     // [C, ...]
  Tensor proj_mask;  // 1 where the bilinear sample is valid
};

// Plane-sweep warp of src_feat [C,H,W] into the reference view:
// warped [C,D,H,W], proj_mask [D,H,W]. Cameras must match the feature size.
WarpResult WarpFeatureVolume(const Tensor& src_feat, const Camera& ref, const Camera& src,
                             std::span<const double> depths);

// Source pixel coordinates [2,H,W] of every reference pixel at its own depth
// in depth_map [H,W]; differentiable w.r.t. the depth. Pixels that land
// behind the source camera get coordinates outside every image.
Tensor ReprojectCoords(const Tensor& depth_map, const Camera& ref, const Camera& src);

// Warps src_img [C,H,W] into the reference view through depth_map [H,W].
// The mask is 0 outside the source image and behind the source camera.
WarpResult WarpWithDepth(const Tensor& src_img, const Camera& ref, const Camera& src,
                         const Tensor& depth_map);

// Angle in radians between the optical axes of two cameras.
double ViewAngle(const Camera& a, const Camera& b);

// Camera at `center` looking at `target`; `down` is the world direction that
// appears as +y (downwards) in the image.
Camera LookAt(const Eigen::Vector3d& center, const Eigen::Vector3d& target, const Eigen::Vector3d& down,
              const Eigen::Matrix3d& K, int width, int height);

}  // namespace mmvs
