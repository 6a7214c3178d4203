#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

#include "grad_check.hpp"
#include "mmvs/geometry.hpp"
#include "mmvs/ops.hpp"
#include "mmvs/rng.hpp"
#include "mmvs/scene.hpp"

using namespace mmvs;
using mmvs::testing::CheckGradients;

namespace {

Eigen::Matrix3d MakeK(double f, double cx, double cy) {
  Eigen::Matrix3d k;
  k << f, 0, cx, 0, f, cy, 0, 0, 1;
  return k;
}

Eigen::Matrix3d RandomRotation(Rng& rng, double max_angle) {
  Eigen::Vector3d axis(StandardNormal(rng), StandardNormal(rng), StandardNormal(rng));
  return Eigen::AngleAxisd(UniformRange(rng, -max_angle, max_angle), axis.normalized()).toRotationMatrix();
}

Camera RandomCamera(Rng& rng, int w = 20, int h = 16) {
  Camera c;
  c.K = MakeK(UniformRange(rng, 15, 30), UniformRange(rng, 8, 11), UniformRange(rng, 6, 9));
  c.R = RandomRotation(rng, 0.3);
  c.t = Eigen::Vector3d(UniformRange(rng, -0.5, 0.5), UniformRange(rng, -0.5, 0.5), UniformRange(rng, -0.5, 0.5));
  c.width = w;
  c.height = h;
  return c;
}

// Independent oracle: lift to 3D with the ray through the pixel and project.
Eigen::Vector2d OraclePixel(const Camera& ref, const Camera& src, const Eigen::Vector2d& p, double depth) {
  const Eigen::Vector3d ray = ref.K.inverse() * Eigen::Vector3d(p.x(), p.y(), 1.0);
  const Eigen::Vector3d xw = ref.R.transpose() * (ray * depth - ref.t);
  const Eigen::Vector3d xs = src.K * (src.R * xw + src.t);
  return {xs.x() / xs.z(), xs.y() / xs.z()};
}

Eigen::Vector2d ApplyH(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

}  // namespace

TEST_CASE("project: canonical camera and hand-computed pixel") {
  Camera c;
  const Projection p = Project(c, {0, 0, 5});
  CHECK(p.pixel.x() == 0.0);
  CHECK(p.pixel.y() == 0.0);
  CHECK(p.depth == 5.0);
  CHECK(p.in_front);

  Camera k;
  k.K = MakeK(100, 32, 32);
  const Projection q = Project(k, {1, 2, 4});
  CHECK(q.pixel.x() == doctest::Approx(32 + 100 * (1.0 / 4)).epsilon(1e-12));
  CHECK(q.pixel.y() == doctest::Approx(32 + 100 * (2.0 / 4)).epsilon(1e-12));
  CHECK(q.pixel.x() == doctest::Approx(57));
  CHECK(q.pixel.y() == doctest::Approx(82));
  CHECK(q.depth == 4.0);

  const Eigen::Vector3d back = Backproject(k, {57, 82}, 4);
  CHECK((back - Eigen::Vector3d(1, 2, 4)).norm() < 1e-12);
  CHECK((Backproject(c, {0, 0}, 5) - Eigen::Vector3d(0, 0, 5)).norm() < 1e-15);
}

TEST_CASE("project flags points behind the camera; backproject rejects non-positive depth") {
  Camera c;
  CHECK_FALSE(Project(c, {0, 0, -1}).in_front);
  CHECK_THROWS_AS(Backproject(c, {1, 1}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(Backproject(c, {1, 1}, -2.0), std::invalid_argument);
}

TEST_CASE("backproject(project(X)) round trip") {
  Rng rng = MakeRng(11, {});
  for (int i = 0; i < 200; ++i) {
    const Camera cam = RandomCamera(rng);
    const Eigen::Vector3d x(UniformRange(rng, -2, 2), UniformRange(rng, -2, 2), UniformRange(rng, 2, 8));
    const Projection p = Project(cam, x);
    if (!p.in_front) continue;
    CHECK((Backproject(cam, p.pixel, p.depth) - x).norm() < 1e-9);
  }
}

TEST_CASE("homography: identical cameras give identity") {
  Rng rng = MakeRng(3, {});
  const Camera c = RandomCamera(rng);
  for (double d : {0.5, 2.0, 10.0}) {
    CHECK((PlaneSweepHomography(c, c, d) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("homography: pure x translation shifts pixels by f*tx/d") {
  Camera ref;
  ref.K = MakeK(50, 10, 8);
  ref.width = 20;
  ref.height = 16;
  Camera src = ref;
  const double tx = 0.3;
  src.t = Eigen::Vector3d(tx, 0, 0);
  for (double d : {1.0, 2.5, 7.0}) {
    const Eigen::Matrix3d h = PlaneSweepHomography(ref, src, d);
    for (int y = 0; y < 16; y += 3)
      for (int x = 0; x < 20; x += 3) {
        const Eigen::Vector2d p(x, y);
        const Eigen::Vector2d q = ApplyH(h, p);
        const Eigen::Vector2d o = OraclePixel(ref, src, p, d);
        CHECK(q.x() - x == doctest::Approx(50 * tx / d).epsilon(1e-12));
        CHECK(std::abs(q.y() - y) < 1e-12);
        CHECK((q - o).norm() < 1e-9);
      }
  }
}

TEST_CASE("homography matches the projection oracle on random camera pairs") {
  Rng rng = MakeRng(5, {});
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Camera ref = RandomCamera(rng), src = RandomCamera(rng);
    const double d = UniformRange(rng, 2.0, 8.0);
    const Eigen::Matrix3d h = PlaneSweepHomography(ref, src, d);
    CHECK(h(2, 2) == doctest::Approx(1.0));
    for (int k = 0; k < 10; ++k) {
      const Eigen::Vector2d p(UniformRange(rng, 0, 19), UniformRange(rng, 0, 15));
      worst = std::max(worst, (ApplyH(h, p) - OraclePixel(ref, src, p, d)).norm());
    }
    // Inverse property.
    CHECK((h * h.inverse() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("homography errors") {
  Camera c;
  CHECK_THROWS_AS(PlaneSweepHomography(c, c, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(PlaneSweepHomography(c, c, -1.0), std::invalid_argument);
  Camera s = c;
  s.K(0, 0) = 0;
  CHECK_THROWS_AS(PlaneSweepHomography(s, c, 1.0), std::invalid_argument);
}

TEST_CASE("plane-sweep coordinates validate the depth list") {
  Rng rng = MakeRng(1, {});
  const Camera c = RandomCamera(rng);
  std::vector<double> empty;
  CHECK_THROWS_AS(PlaneSweepCoords(c, c, empty), std::invalid_argument);
  std::vector<double> bad = {2.0, 1.0};
  CHECK_THROWS_AS(PlaneSweepCoords(c, c, bad), std::invalid_argument);
  std::vector<double> neg = {-1.0, 1.0};
  CHECK_THROWS_AS(PlaneSweepCoords(c, c, neg), std::invalid_argument);
  std::vector<double> dup = {1.0, 1.0};
  CHECK_THROWS_AS(PlaneSweepCoords(c, c, dup), std::invalid_argument);
  Tensor feat = Tensor::Zeros({2, 16, 20});
  CHECK_THROWS_AS(WarpFeatureVolume(feat, c, c, empty), std::invalid_argument);
}

TEST_CASE("warp_feature_volume: identical cameras reproduce the features") {
  Rng rng = MakeRng(8, {});
  const Camera c = RandomCamera(rng);
  const Tensor feat = mmvs::testing::RandomTensor(rng, {3, 16, 20});
  const std::vector<double> depths = {1.0, 2.0, 4.0};
  const WarpResult w = WarpFeatureVolume(feat, c, c, depths);
  REQUIRE(w.warped.shape() == Shape{3, 3, 16, 20});
  REQUIRE(w.proj_mask.shape() == Shape{3, 16, 20});
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t d = 0; d < 3; ++d)
      for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 20; ++x) {
          CHECK(w.warped.at({ch, d, y, x}) == doctest::Approx(feat.at({ch, y, x})).epsilon(1e-6));
          CHECK(w.proj_mask.at({d, y, x}) == 1.0);
        }
}

TEST_CASE("warp_feature_volume slice equals per-pixel homography warp") {
  Rng rng = MakeRng(21, {});
  const Camera ref = RandomCamera(rng), src = RandomCamera(rng);
  const Tensor feat = mmvs::testing::RandomTensor(rng, {2, 16, 20});
  const std::vector<double> depths = {2.0, 3.0, 5.0};
  const WarpResult w = WarpFeatureVolume(feat, ref, src, depths);
  for (size_t k = 0; k < depths.size(); ++k) {
    const Eigen::Matrix3d h = PlaneSweepHomography(ref, src, depths[k]);
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 20; ++x) {
        const Eigen::Vector2d q = ApplyH(h, Eigen::Vector2d(x, y));
        const bool valid = q.x() >= 0 && q.x() <= 19 && q.y() >= 0 && q.y() <= 15;
        CHECK(w.proj_mask.at({static_cast<int64_t>(k), y, x}) == (valid ? 1.0 : 0.0));
        for (int64_t ch = 0; ch < 2; ++ch) {
          double expect = 0;
          if (valid) {
            // Hand bilinear interpolation.
            const int64_t x0 = static_cast<int64_t>(std::floor(q.x())), y0 = static_cast<int64_t>(std::floor(q.y()));
            const double fx = q.x() - x0, fy = q.y() - y0;
            auto px = [&](int64_t yy, int64_t xx) {
              return (xx > 19 || yy > 15) ? 0.0 : feat.at({ch, yy, xx});
            };
            expect = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                     fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
          }
          CHECK(w.warped.at({ch, static_cast<int64_t>(k), y, x}) == doctest::Approx(expect).epsilon(1e-5));
        }
      }
  }
}

TEST_CASE("warp_with_depth: identical cameras give the identity warp") {
  Rng rng = MakeRng(4, {});
  const Camera c = RandomCamera(rng);
  const Tensor img = mmvs::testing::RandomTensor(rng, {3, 16, 20}, 0, 1);
  const Tensor depth = mmvs::testing::RandomTensor(rng, {16, 20}, 1, 5);
  const WarpResult w = WarpWithDepth(img, c, c, depth);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 20; ++x) {
      CHECK(w.proj_mask.at({y, x}) == 1.0);
      for (int64_t ch = 0; ch < 3; ++ch) CHECK(w.warped.at({ch, y, x}) == doctest::Approx(img.at({ch, y, x})).epsilon(1e-5));
    }
}

TEST_CASE("warp_with_depth agrees with warp_feature_volume for constant depth") {
  PrecisionGuard p(Precision::kFloat64);
  Rng rng = MakeRng(17, {});
  for (int trial = 0; trial < 5; ++trial) {
    const Camera ref = RandomCamera(rng), src = RandomCamera(rng);
    const Tensor img = mmvs::testing::RandomTensor(rng, {2, 16, 20});
    const double d = UniformRange(rng, 2, 6);
    const std::vector<double> depths = {d};
    const WarpResult a = WarpFeatureVolume(img, ref, src, depths);
    const WarpResult b = WarpWithDepth(img, ref, src, Tensor::Full({16, 20}, d));
    for (int64_t i = 0; i < 16 * 20; ++i) CHECK(a.proj_mask.values()[i] == b.proj_mask.values()[i]);
    double worst = 0;
    for (int64_t i = 0; i < a.warped.numel(); ++i) {
      worst = std::max(worst, std::abs(a.warped.values()[i] - b.warped.values()[i]));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("projection mask is 0 behind the source camera") {
  Camera ref;
  ref.K = MakeK(20, 9.5, 7.5);
  ref.width = 20;
  ref.height = 16;
  Camera src = ref;
  // Source camera 5 units in front of the reference, facing it.
  src.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
  src.t = -src.R * Eigen::Vector3d(0, 0, 5);
  const Tensor img = Tensor::Full({1, 16, 20}, 1.0);
  const WarpResult w = WarpWithDepth(img, ref, src, Tensor::Full({16, 20}, 8.0));
  for (double m : w.proj_mask.values()) CHECK(m == 0.0);
  for (double v : w.warped.values()) CHECK(v == 0.0);
}

TEST_CASE("warp_with_depth gradient w.r.t. depth matches finite differences") {
  Rng rng = MakeRng(29, {});
  for (int trial = 0; trial < 3; ++trial) {
    const Camera ref = RandomCamera(rng), src = RandomCamera(rng);
    // Smooth image so finite differences do not straddle kinks often.
    std::vector<double> v(2 * 16 * 20);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 20; ++x) v[(c * 16 + y) * 20 + x] = std::sin(0.37 * x + 0.21 * y + c) + 0.1 * x;
    const Tensor img = Tensor::FromValues({2, 16, 20}, v);
    const Tensor depth = mmvs::testing::RandomTensor(rng, {16, 20}, 2.5, 4.5);
    auto f = [&](const std::vector<Tensor>& in) {
      return ops::Sum(ops::Mul(WarpWithDepth(in[1], ref, src, in[0]).warped, Tensor::Full({2, 16, 20}, 1.0)));
    };
    const auto r = CheckGradients(f, {depth, img}, 1e-5);
    CHECK(r.rel_error < 1e-3);
    CHECK(r.analytic_norm > 0);
  }
}

TEST_CASE("geometry is invariant to a global rigid transform") {
  Rng rng = MakeRng(33, {});
  for (int trial = 0; trial < 20; ++trial) {
    Camera ref = RandomCamera(rng), src = RandomCamera(rng);
    const Eigen::Matrix3d q = RandomRotation(rng, M_PI);
    const Eigen::Vector3d s(UniformRange(rng, -5, 5), UniformRange(rng, -5, 5), UniformRange(rng, -5, 5));
    // World points move as X' = qX + s, so cameras become R' = R q^T, t' = t - R q^T s.
    auto move = [&](Camera c) {
      c.t = c.t - c.R * q.transpose() * s;
      c.R = c.R * q.transpose();
      return c;
    };
    const Camera ref2 = move(ref), src2 = move(src);
    const Eigen::Vector3d x(UniformRange(rng, -1, 1), UniformRange(rng, -1, 1), UniformRange(rng, 3, 6));
    CHECK((Project(ref, x).pixel - Project(ref2, q * x + s).pixel).norm() < 1e-6);
    const double d = UniformRange(rng, 2, 6);
    const Eigen::Vector2d p(UniformRange(rng, 0, 19), UniformRange(rng, 0, 15));
    CHECK((ApplyH(PlaneSweepHomography(ref, src, d), p) - ApplyH(PlaneSweepHomography(ref2, src2, d), p)).norm() <
          1e-6);
    const Tensor depth = Tensor::Full({16, 20}, d);
    const Tensor c1 = ReprojectCoords(depth, ref, src), c2 = ReprojectCoords(depth, ref2, src2);
    for (int64_t i = 0; i < c1.numel(); ++i) CHECK(std::abs(c1.values()[i] - c2.values()[i]) < 1e-4);
  }
}

TEST_CASE("camera validation and scaling") {
  Camera c;
  c.K = MakeK(100, 39.5, 31.5);
  c.width = 80;
  c.height = 64;
  CHECK_NOTHROW(c.Validate());
  const Camera s = c.Scaled(0.25);
  CHECK(s.width == 20);
  CHECK(s.height == 16);
  CHECK(s.K(0, 0) == 25.0);
  CHECK(s.K(0, 2) == doctest::Approx(9.5));
  CHECK(s.K(1, 2) == doctest::Approx(7.5));
  Camera bad = c;
  bad.R(0, 0) = 2;
  CHECK_THROWS_AS(bad.Validate(), std::invalid_argument);
  bad = c;
  bad.K(1, 1) = -1;
  CHECK_THROWS_AS(bad.Validate(), std::invalid_argument);
}

TEST_CASE("single-depth sweep at the plane depth aligns features under pure translation") {
  // Planar fronto-parallel scene; features are the rendered images themselves.
  Texture tex;
  tex.family = TextureFamily::kValueNoise;
  tex.frequency = 0.75;
  tex.noise_seed = 77;
  const double z0 = 4.0;
  const SceneSpec scene = FrontoParallelPlaneScene(z0, tex);
  DomainSpec dom;
  dom.noise_sigma = 0;
  dom.ambient = 1.0;
  dom.intensity = 1e-9;
  Camera ref;
  ref.K = MakeK(24, 9.5, 7.5);
  ref.width = 20;
  ref.height = 16;
  Camera src = ref;
  src.t = Eigen::Vector3d(-0.4, 0.0, 0.0);
  const Tensor ri = RenderView(scene, ref, dom, 0, 1).image;
  const Tensor si = RenderView(scene, src, dom, 1, 1).image;
  const std::vector<double> depths = {z0};
  const WarpResult w = WarpFeatureVolume(si, ref, src, depths);
  double err = 0, n = 0;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 20; ++x) {
        if (w.proj_mask.at({0, y, x}) == 0) continue;
        err += std::abs(w.warped.at({c, 0, y, x}) - ri.at({c, y, x}));
        n += 1;
      }
  REQUIRE(n > 0);
  CHECK(err / n < 1e-2);
}

TEST_CASE("warping a rendered neighbour with GT depth reproduces the reference") {
  DomainSpec dom;
  dom.texture = TextureFamily::kValueNoise;
  dom.noise_sigma = 0;
  RigSpec rig;
  const SceneSpec scene = GenerateScene(12, dom, rig);
  const auto cams = MakeRig(rig, dom);
  for (int s : {2, 4}) {
    const Camera& ref = cams[3];
    const Camera& src = cams[s];
    const Tensor ri = RenderView(scene, ref, dom, 3, 1).image;
    const Tensor si = RenderView(scene, src, dom, s, 1).image;
    const Tensor depth = RenderDepth(scene, ref);
    const WarpResult w = WarpWithDepth(si, ref, src, depth);
    double err = 0, n = 0;
    for (int64_t y = 0; y < ref.height; ++y)
      for (int64_t x = 0; x < ref.width; ++x) {
        if (w.proj_mask.at({y, x}) == 0) continue;
        // Visibility from the ground truth: the 3D point must be the first hit in src.
        const Eigen::Vector3d xw = Backproject(ref, Eigen::Vector2d(x, y), depth.at({y, x}));
        const Projection pr = Project(src, xw);
        const RayHit hit = CastRay(scene, src, pr.pixel);
        if (std::abs(hit.depth - pr.depth) > 1e-3) continue;
        for (int64_t c = 0; c < 3; ++c) err += std::abs(w.warped.at({c, y, x}) - ri.at({c, y, x}));
        n += 3;
      }
    REQUIRE(n > 0);
    CHECK(err / n < 1e-2);
  }
}
