#include "mmvs/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmvs/ops.hpp"

namespace mmvs {

namespace {
// Coordinate assigned to samples that fall behind the source camera.
constexpr double kOutside = -1e6;

// Removes round-off from coordinates that should be integral (identity-like
// warps), so border pixels are not lost to a -1e-16.
double Snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}
}  // namespace

Camera Camera::Scaled(double factor) const {
  Camera c = *this;
  c.K(0, 0) *= factor;
  c.K(0, 1) *= factor;
  c.K(1, 1) *= factor;
  c.K(0, 2) = (K(0, 2) + 0.5) * factor - 0.5;
  c.K(1, 2) = (K(1, 2) + 0.5) * factor - 0.5;
  c.width = static_cast<int>(std::lround(width * factor));
  c.height = static_cast<int>(std::lround(height * factor));
  return c;
}

void Camera::Validate() const {
  if (K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0 || K(2, 2) != 1) {
    throw std::invalid_argument("intrinsics must be upper triangular with K(2,2) = 1");
  }
  if (!(K(0, 0) > 0) || !(K(1, 1) > 0)) throw std::invalid_argument("focal lengths must be positive");
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(R.determinant() - 1.0) > 1e-6) {
    throw std::invalid_argument("rotation is not orthonormal with det +1");
  }
  if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
}

Projection Project(const Camera& cam, const Eigen::Vector3d& world) {
  const Eigen::Vector3d x = cam.K * (cam.R * world + cam.t);
  Projection p;
  p.depth = x.z();
  p.in_front = x.z() > 0;
  p.pixel = Eigen::Vector2d(x.x() / x.z(), x.y() / x.z());
  return p;
}

Eigen::Vector3d Backproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth) {
  if (!(depth > 0)) throw std::invalid_argument("backproject requires positive depth");
  const Eigen::Vector3d ray = cam.K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(pixel.x(), pixel.y(), 1.0));
  const Eigen::Vector3d xc = ray * depth;
  return cam.R.transpose() * (xc - cam.t);
}

RelativePose Relative(const Camera& ref, const Camera& src) {
  RelativePose rel;
  rel.R = src.R * ref.R.transpose();
  rel.t = src.t - rel.R * ref.t;
  return rel;
}

Eigen::Matrix3d PlaneSweepHomography(const Camera& ref, const Camera& src, double depth) {
  if (!(depth > 0)) throw std::invalid_argument("plane depth must be positive");
  if (std::abs(ref.K.determinant()) < 1e-12) throw std::invalid_argument("singular reference intrinsics");
  const RelativePose rel = Relative(ref, src);
  // Points on n^T X = depth with n = (0,0,1): X_src = (R + t n^T / depth) X_ref.
  const Eigen::RowVector3d n(0, 0, 1);
  Eigen::Matrix3d h = src.K * (rel.R + rel.t * n / depth) * ref.K.inverse();
  if (h(2, 2) != 0) h /= h(2, 2);
  return h;
}

Tensor PlaneSweepCoords(const Camera& ref, const Camera& src, std::span<const double> depths) {
  if (depths.empty()) throw std::invalid_argument("empty depth list");
  for (size_t i = 0; i < depths.size(); ++i) {
    if (!(depths[i] > 0) || (i > 0 && !(depths[i] > depths[i - 1]))) {
      throw std::invalid_argument("depth hypotheses must be positive and strictly increasing");
    }
  }
  const int64_t d = static_cast<int64_t>(depths.size());
  const int64_t h = ref.height, w = ref.width;
  const int64_t plane = d * h * w;
  std::vector<double> coords(2 * plane);
  for (int64_t k = 0; k < d; ++k) {
    const Eigen::Matrix3d hm = PlaneSweepHomography(ref, src, depths[k]);
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        const Eigen::Vector3d q = hm * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
        const int64_t i = (k * h + y) * w + x;
        if (q.z() > 0) {
          coords[i] = Snap(q.x() / q.z());
          coords[plane + i] = Snap(q.y() / q.z());
        } else {
          coords[i] = coords[plane + i] = kOutside;
        }
      }
    }
  }
  return Tensor::FromValues({2, d, h, w}, std::move(coords));
}

WarpResult WarpFeatureVolume(const Tensor& src_feat, const Camera& ref, const Camera& src,
                             std::span<const double> depths) {
  const Tensor coords = PlaneSweepCoords(ref, src, depths);
  auto s = ops::BilinearSample(src_feat, coords);
  return {s.values, s.valid};
}

Tensor ReprojectCoords(const Tensor& depth_map, const Camera& ref, const Camera& src) {
  if (depth_map.rank() != 2 || depth_map.dim(0) != ref.height || depth_map.dim(1) != ref.width) {
    throw DimensionError("ReprojectCoords: depth map " + ShapeString(depth_map.shape()) +
                         " does not match reference camera " + std::to_string(ref.height) + "x" +
                         std::to_string(ref.width));
  }
  const int64_t h = depth_map.dim(0), w = depth_map.dim(1), n = h * w;
  const RelativePose rel = Relative(ref, src);
  const Eigen::Matrix3d a_mat = src.K * rel.R * ref.K.inverse();
  const Eigen::Vector3d b = src.K * rel.t;
  // Per pixel the source homogeneous point is depth * a + b.
  std::vector<double> a(3 * n);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const Eigen::Vector3d v = a_mat * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      for (int r = 0; r < 3; ++r) a[r * n + y * w + x] = v[r];
    }
  const auto dv = depth_map.values();
  std::vector<double> coords(2 * n);
  for (int64_t i = 0; i < n; ++i) {
    const double z = dv[i] * a[2 * n + i] + b.z();
    if (z > 0) {
      coords[i] = Snap((dv[i] * a[i] + b.x()) / z);
      coords[n + i] = Snap((dv[i] * a[n + i] + b.y()) / z);
    } else {
      coords[i] = coords[n + i] = kOutside;
    }
  }
  return MakeResult({2, h, w}, std::move(coords), {depth_map},
                    [depth_map, a = std::move(a), b, n](const Node& o) {
                      double* gd = GradOf(depth_map);
                      const auto dv = depth_map.values();
                      for (int64_t i = 0; i < n; ++i) {
                        const double z = dv[i] * a[2 * n + i] + b.z();
                        if (!(z > 0)) continue;
                        const double inv = 1.0 / (z * z);
                        const double dx = (a[i] * b.z() - a[2 * n + i] * b.x()) * inv;
                        const double dy = (a[n + i] * b.z() - a[2 * n + i] * b.y()) * inv;
                        gd[i] += o.grad[i] * dx + o.grad[n + i] * dy;
                      }
                    });
}

WarpResult WarpWithDepth(const Tensor& src_img, const Camera& ref, const Camera& src, const Tensor& depth_map) {
  const Tensor coords = ReprojectCoords(depth_map, ref, src);
  auto s = ops::BilinearSample(src_img, coords);
  return {s.values, s.valid};
}

double ViewAngle(const Camera& a, const Camera& b) {
  const double c = std::clamp(a.ViewDirection().dot(b.ViewDirection()), -1.0, 1.0);
  return std::acos(c);
}

Camera LookAt(const Eigen::Vector3d& center, const Eigen::Vector3d& target, const Eigen::Vector3d& down,
              const Eigen::Matrix3d& K, int width, int height) {
  const Eigen::Vector3d z = (target - center).normalized();
  const Eigen::Vector3d x = down.cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Camera cam;
  cam.K = K;
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = z.transpose();
  cam.t = -cam.R * center;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace mmvs
