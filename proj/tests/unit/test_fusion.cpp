#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "mmvs/fusion.hpp"
#include "mmvs/io.hpp"

using namespace mmvs;
using namespace mmvs::testing;
namespace fs = std::filesystem;

namespace {

struct RigScene {
  SceneSpec scene;
  std::vector<Camera> cams;  // at depth-map resolution
  std::vector<Tensor> depths;
};

RigScene RenderRig(uint64_t seed, SceneLayout layout = SceneLayout::kRandom, int views = 5, double upscale = 1.0) {
  const DomainSpec dom = TestDomain(0, TextureFamily::kChecker);
  RigSpec rig;
  rig.num_views = views;
  RigScene r;
  r.scene = GenerateScene(seed, dom, rig, layout);
  for (const Camera& c : MakeRig(rig, dom)) {
    r.cams.push_back(c.Scaled(upscale / rig.output_factor));
    r.depths.push_back(RenderDepth(r.scene, r.cams.back()));
  }
  return r;
}

Tensor Scale(const Tensor& t, double s) {
  std::vector<double> v(t.values().begin(), t.values().end());
  for (double& x : v) x *= s;
  return Tensor::FromValues(t.shape(), std::move(v));
}

std::vector<FusionView> Views(const RigScene& r) {
  std::vector<FusionView> out;
  for (size_t i = 0; i < r.cams.size(); ++i) {
    FusionView v;
    v.view_id = static_cast<int>(i);
    v.depth = r.depths[i];
    v.image = Tensor::Full({3, r.depths[i].dim(0), r.depths[i].dim(1)}, 0.5);
    v.camera = r.cams[i];
    out.push_back(v);
  }
  return out;
}

std::vector<std::array<float, 3>> SortedPositions(const PointCloud& c) {
  std::vector<std::array<float, 3>> out;
  for (const auto& p : c.points) out.push_back({p.position.x(), p.position.y(), p.position.z()});
  std::sort(out.begin(), out.end());
  return out;
}

bool SameBits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

fs::path TempFile(const std::string& name) { return fs::temp_directory_path() / ("mmvs_fusion_" + name); }

}  // namespace

TEST_CASE("confidence filter") {
  Rng rng = MakeRng(1);
  const Tensor depth = RandomTensor(rng, {4, 5}, 2.0, 6.0);
  std::vector<double> pv(20, 0.3);
  pv[3] = 0.0;
  const Tensor kept = ConfidenceFilter(depth, Tensor::FromValues({4, 5}, pv), 0.0);
  for (int i = 0; i < 20; ++i) CHECK(kept.values()[i] == (i == 3 ? 0.0 : depth.values()[i]));
  const Tensor none = ConfidenceFilter(depth, Tensor::Full({4, 5}, 0.5), 0.8);
  for (double v : none.values()) CHECK(v == 0.0);
  const Tensor all = ConfidenceFilter(depth, Tensor::Full({4, 5}, 0.9), 0.8);
  CHECK(std::equal(all.values().begin(), all.values().end(), depth.values().begin()));
  CHECK_THROWS_AS(ConfidenceFilter(depth, Tensor::Full({5, 4}, 0.9), 0.8), DimensionError);
}

TEST_CASE("consistency check: identity, perturbation, GT renders") {
  // 40x32: at 20x16 a large share of pixels sits within a pixel of a silhouette.
  const RigScene r = RenderRig(3, SceneLayout::kRandom, 5, 2.0);
  const auto same = ConsistencyCheck(r.depths[0], r.cams[0], r.depths[0], r.cams[0], 1.0, 0.01);
  int64_t valid = 0;
  for (size_t i = 0; i < same.consistent.size(); ++i) {
    if (!(r.depths[0].values()[i] > 0)) continue;
    ++valid;
    CHECK(same.consistent[i]);
    CHECK(same.reproj_error[i] < 1e-9);
    CHECK(same.rel_error[i] < 1e-12);
  }
  CHECK(valid == r.depths[0].numel());

  // 2% scaled source depth fails everywhere: same camera, and a fronto-parallel
  // plane seen by a translated camera.
  {
    const auto c = ConsistencyCheck(r.depths[0], r.cams[0], Scale(r.depths[0], 1.02), r.cams[0], 1.0, 0.01);
    CHECK(std::count(c.consistent.begin(), c.consistent.end(), 1) == 0);
    for (double v : c.rel_error) CHECK(v == doctest::Approx(0.02).epsilon(1e-6));
  }
  {
    Camera a;
    a.K << 30, 0, 19.5, 0, 30, 15.5, 0, 0, 1;
    a.width = 40;
    a.height = 32;
    Camera b = a;
    b.t = Eigen::Vector3d(-0.3, 0.1, 0);
    const Tensor plane = Tensor::Full({32, 40}, 4.0);
    const auto c = ConsistencyCheck(plane, a, Scale(plane, 1.02), b, 1.0, 0.01);
    CHECK(std::count(c.consistent.begin(), c.consistent.end(), 1) == 0);
    int64_t matched = 0;
    for (size_t i = 0; i < c.rel_error.size(); ++i) {
      if (!std::isfinite(c.rel_error[i])) continue;
      ++matched;
      CHECK(c.rel_error[i] == doctest::Approx(0.02).epsilon(1e-6));
    }
    CHECK(matched > 1000);
    const auto same = ConsistencyCheck(plane, a, plane, b, 1.0, 0.01);
    CHECK(std::count(same.consistent.begin(), same.consistent.end(), 1) == matched);
  }

  // GT renders: co-visible pixels (visibility by ray casting in the source).
  for (int src : {1, 2, 3}) {
    const auto c = ConsistencyCheck(r.depths[0], r.cams[0], r.depths[src], r.cams[src], 1.0, 0.01);
    int64_t covis = 0, ok = 0;
    const int w = r.cams[0].width;
    for (int64_t i = 0; i < r.depths[0].numel(); ++i) {
      const Eigen::Vector3d x = Backproject(r.cams[0], Eigen::Vector2d(i % w, i / w), r.depths[0].values()[i]);
      const Projection q = Project(r.cams[src], x);
      if (q.pixel.x() < 0 || q.pixel.y() < 0 || q.pixel.x() > r.cams[src].width - 1 ||
          q.pixel.y() > r.cams[src].height - 1)
        continue;
      const RayHit hit = CastRay(r.scene, r.cams[src], q.pixel);
      if (std::abs(hit.depth - q.depth) > 1e-6 * q.depth) continue;
      ++covis;
      ok += c.consistent[i];
    }
    MESSAGE("view 0 vs " << src << ": " << ok << "/" << covis << " co-visible pixels consistent");
    REQUIRE(covis > 0);
    CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(covis));
  }
  CHECK_THROWS_AS(ConsistencyCheck(r.depths[0], r.cams[0], Tensor::Full({3, 3}, 1.0), r.cams[1], 1.0, 0.01),
                  DimensionError);
}

TEST_CASE("fuse: identical views give one point per pixel") {
  const RigScene r = RenderRig(4);
  std::vector<FusionView> views = Views(r);
  views.resize(2);
  views[1].camera = views[0].camera;
  views[1].depth = views[0].depth;
  FusionConfig cfg;
  cfg.min_views = 1;
  const PointCloud cloud = Fuse(views, cfg);
  REQUIRE(static_cast<int64_t>(cloud.size()) == r.depths[0].numel());
  const int w = r.cams[0].width;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3f x =
        Backproject(r.cams[0], Eigen::Vector2d(static_cast<double>(i % w), static_cast<double>(i / w)),
                    r.depths[0].values()[i])
            .cast<float>();
    CHECK((cloud.points[i].position - x).norm() < 1e-5f);
    CHECK(cloud.points[i].support == 1);
    CHECK(cloud.points[i].color[0] == 128);
  }
}

TEST_CASE("fuse: plane scene, min_views, supports, errors") {
  const RigScene r = RenderRig(5, SceneLayout::kSinglePlane, 3);
  const Primitive& plane = r.scene.primitives[0];
  FusionConfig cfg;
  cfg.min_views = 2;
  const PointCloud cloud = Fuse(Views(r), cfg);
  REQUIRE(!cloud.empty());
  double sq = 0;
  for (const auto& p : cloud.points) {
    const double d = plane.normal.normalized().dot(p.position.cast<double>() - plane.point);
    sq += d * d;
    CHECK(p.support >= cfg.min_views);
  }
  CHECK(std::sqrt(sq / static_cast<double>(cloud.size())) < 1e-2);

  cfg.min_views = 3;
  CHECK(Fuse(Views(r), cfg).empty());

  std::vector<FusionView> one = Views(r);
  one.resize(1);
  CHECK_THROWS(Fuse(one, cfg));
  std::vector<FusionView> dup = Views(r);
  dup[1].view_id = dup[0].view_id;
  CHECK_THROWS(Fuse(dup, FusionConfig{}));
  FusionConfig bad;
  bad.prob_threshold = 1.5;
  CHECK_THROWS(Fuse(Views(r), bad));
}

TEST_CASE("fuse: permutation invariance and threshold monotonicity") {
  const RigScene r = RenderRig(6);
  std::vector<FusionView> views = Views(r);
  Rng rng = MakeRng(7);
  // Noisy depth and random probabilities so thresholds matter.
  for (auto& v : views) {
    std::vector<double> d(v.depth.values().begin(), v.depth.values().end());
    for (double& x : d) x *= 1.0 + 0.01 * StandardNormal(rng);
    v.depth = Tensor::FromValues(v.depth.shape(), d);
    v.prob = RandomTensor(rng, v.depth.shape(), 0.5, 1.0);
  }
  FusionConfig cfg;
  const PointCloud base = Fuse(views, cfg);
  CHECK(!base.empty());
  std::vector<FusionView> rev(views.rbegin(), views.rend());
  std::rotate(rev.begin(), rev.begin() + 2, rev.end());
  CHECK(SortedPositions(Fuse(rev, cfg)) == SortedPositions(base));

  for (int trial = 0; trial < 6; ++trial) {
    FusionConfig loose;
    loose.prob_threshold = UniformRange(rng, 0.5, 0.8);
    loose.reproj_px = UniformRange(rng, 0.5, 2.0);
    loose.rel_depth = UniformRange(rng, 0.005, 0.03);
    loose.min_views = 1 + static_cast<int>(UniformIndex(rng, 2));
    const size_t n = Fuse(views, loose).size();
    for (int which = 0; which < 4; ++which) {
      FusionConfig tight = loose;
      if (which == 0) tight.prob_threshold += 0.1;
      if (which == 1) tight.reproj_px *= 0.5;
      if (which == 2) tight.rel_depth *= 0.5;
      if (which == 3) tight.min_views += 1;
      CHECK(Fuse(views, tight).size() <= n);
    }
  }
}

TEST_CASE("PLY round trips and malformed files") {
  const auto path = TempFile("cloud.ply");
  WritePly(PointCloud{}, path.string());
  CHECK(ReadPly(path.string()).empty());
  {
    std::ifstream is(path);
    std::string header((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(header.find("element vertex 0\n") != std::string::npos);
  }

  Rng rng = MakeRng(8);
  for (int n : {1, 10000}) {
    PointCloud c;
    for (int i = 0; i < n; ++i) {
      CloudPoint p;
      p.position = Eigen::Vector3f(static_cast<float>(StandardNormal(rng) * 100), static_cast<float>(Uniform01(rng)),
                                   static_cast<float>(-UniformRange(rng, 1e-6, 1e6)));
      p.color = {static_cast<uint8_t>(UniformIndex(rng, 256)), static_cast<uint8_t>(UniformIndex(rng, 256)),
                 static_cast<uint8_t>(UniformIndex(rng, 256))};
      c.points.push_back(p);
    }
    WritePly(c, path.string());
    const PointCloud back = ReadPly(path.string());
    REQUIRE(back.size() == c.size());
    bool exact = true;
    for (size_t i = 0; i < c.size(); ++i) {
      for (int k = 0; k < 3; ++k) exact &= SameBits(back.points[i].position[k], c.points[i].position[k]);
      exact &= back.points[i].color == c.points[i].color;
    }
    CHECK(exact);
  }

  auto write_raw = [&](const std::string& s) {
    std::ofstream os(path, std::ios::binary);
    os << s;
  };
  write_raw("plx\n");
  CHECK_THROWS_AS(ReadPly(path.string()), io::IoError);
  write_raw("ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
  CHECK_THROWS_AS(ReadPly(path.string()), io::IoError);
  write_raw("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
            "property float z\nend_header\n" + std::string(12, '\0'));
  CHECK_THROWS_AS(ReadPly(path.string()), io::IoError);
  write_raw("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\n");
  CHECK_THROWS_AS(ReadPly(path.string()), io::IoError);
  CHECK_THROWS_AS(ReadPly((fs::temp_directory_path() / "mmvs_missing.ply").string()), io::IoError);
  fs::remove(path);
}
