#include "mmvs/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mmvs/io.hpp"
#include "mmvs/rng.hpp"
#include "mmvs/serialize.hpp"

namespace mmvs {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kMaxSceneAttempts = 200;

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double LatticeValue(int64_t x, int64_t y, int64_t z, uint64_t seed) {
  uint64_t h = SplitMix64(seed);
  h = SplitMix64(h ^ static_cast<uint64_t>(x));
  h = SplitMix64(h ^ static_cast<uint64_t>(y));
  h = SplitMix64(h ^ static_cast<uint64_t>(z));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double SmoothStep(double t) { return t * t * (3 - 2 * t); }

double ValueNoise(const Eigen::Vector3d& p, uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const int64_t x0 = static_cast<int64_t>(f.x()), y0 = static_cast<int64_t>(f.y()), z0 = static_cast<int64_t>(f.z());
  const double tx = SmoothStep(p.x() - f.x()), ty = SmoothStep(p.y() - f.y()), tz = SmoothStep(p.z() - f.z());
  double v = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        v += w * LatticeValue(x0 + dx, y0 + dy, z0 + dz, seed);
      }
  return v;
}

Eigen::Vector3d RandomColor(Rng& rng, double lo, double hi) {
  return {UniformRange(rng, lo, hi), UniformRange(rng, lo, hi), UniformRange(rng, lo, hi)};
}

Texture RandomTexture(Rng& rng, TextureFamily family, double scale) {
  Texture t;
  t.family = family;
  t.frequency = UniformRange(rng, 0.8, 1.6) / scale;
  t.color_a = RandomColor(rng, 0.55, 0.95);
  t.color_b = RandomColor(rng, 0.05, 0.4);
  const double a = UniformRange(rng, 0.0, std::numbers::pi);
  t.stripe_dir = Eigen::Vector3d(std::cos(a), std::sin(a), UniformRange(rng, -0.3, 0.3)).normalized();
  t.noise_seed = rng();
  return t;
}

// Scene length unit: a quarter of the domain's depth span.
double SceneScale(const DomainSpec& d) { return (d.depth_max - d.depth_min) / 4.0; }

bool SceneFitsRig(const SceneSpec& scene, const std::vector<Camera>& cams, const DomainSpec& domain,
                  int output_factor) {
  for (const Camera& cam : cams) {
    for (size_t i = 1; i < scene.primitives.size(); ++i) {
      const Primitive& p = scene.primitives[i];
      const Projection pr = Project(cam, p.point);
      if (!pr.in_front || pr.pixel.x() < 0 || pr.pixel.y() < 0 || pr.pixel.x() > cam.width - 1 ||
          pr.pixel.y() > cam.height - 1) {
        return false;
      }
    }
    // Finest resolution at which depth is used (twice the output resolution).
    const Camera fine = cam.Scaled(2.0 / output_factor);
    const Tensor depth = RenderDepth(scene, fine);
    for (double z : depth.values()) {
      if (!(z >= domain.depth_min && z <= domain.depth_max)) return false;
    }
    const Tensor out_depth = RenderDepth(scene, cam.Scaled(1.0 / output_factor));
    for (double z : out_depth.values()) {
      if (!(z >= domain.depth_min && z <= domain.depth_max)) return false;
    }
  }
  return true;
}

}  // namespace

std::string TextureFamilyName(TextureFamily f) {
  switch (f) {
    case TextureFamily::kChecker:
      return "checker";
    case TextureFamily::kValueNoise:
      return "value_noise";
    case TextureFamily::kStripes:
      return "stripes";
  }
  return "unknown";
}

TextureFamily ParseTextureFamily(const std::string& name) {
  if (name == "checker") return TextureFamily::kChecker;
  if (name == "value_noise") return TextureFamily::kValueNoise;
  if (name == "stripes") return TextureFamily::kStripes;
  throw std::invalid_argument("unknown texture family '" + name + "'");
}

void DomainSpec::Validate() const {
  if (!(depth_min > 0)) throw std::invalid_argument("domain depth_min must be positive");
  if (!(depth_max > depth_min)) throw std::invalid_argument("domain depth_max must exceed depth_min");
  if (!(intensity > 0)) throw std::invalid_argument("domain intensity must be positive");
  if (!(noise_sigma >= 0)) throw std::invalid_argument("domain noise_sigma must be non-negative");
  if (!(ambient >= 0)) throw std::invalid_argument("domain ambient must be non-negative");
  if (!(light_dir.norm() > 0)) throw std::invalid_argument("domain light_dir must be nonzero");
}

Eigen::Vector3d Texture::Albedo(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = p * frequency;
  double m = 0;
  switch (family) {
    case TextureFamily::kChecker: {
      const int64_t s = static_cast<int64_t>(std::floor(q.x())) + static_cast<int64_t>(std::floor(q.y())) +
                        static_cast<int64_t>(std::floor(q.z()));
      m = (s & 1) ? 1.0 : 0.0;
      break;
    }
    case TextureFamily::kValueNoise: {
      const double v = (ValueNoise(q, noise_seed) + 0.5 * ValueNoise(2.0 * q, noise_seed ^ 0x5bd1e995ULL)) / 1.5;
      m = std::clamp((v - 0.5) * 1.8 + 0.5, 0.0, 1.0);
      break;
    }
    case TextureFamily::kStripes:
      m = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * q.dot(stripe_dir));
      break;
  }
  return color_b + m * (color_a - color_b);
}

void RigSpec::Validate() const {
  if (num_views < 2) throw std::invalid_argument("rig needs at least 2 views");
  if (width <= 0 || height <= 0) throw std::invalid_argument("rig image size must be positive");
  if (output_factor <= 0 || width % output_factor != 0 || height % output_factor != 0) {
    throw std::invalid_argument("rig image size must be divisible by output_factor");
  }
  if (!(focal_factor > 0)) throw std::invalid_argument("rig focal_factor must be positive");
  if (!(azimuth_span_deg >= 0 && azimuth_span_deg < 180)) throw std::invalid_argument("rig azimuth span out of range");
}

double RigDistance(const DomainSpec& domain) { return domain.depth_min + 1.8 * SceneScale(domain); }

std::vector<Camera> MakeRig(const RigSpec& rig, const DomainSpec& domain) {
  rig.Validate();
  const double dist = RigDistance(domain);
  const double f = rig.focal_factor * rig.width;
  Eigen::Matrix3d K;
  K << f, 0, (rig.width - 1) / 2.0, 0, f, (rig.height - 1) / 2.0, 0, 0, 1;
  std::vector<Camera> cams;
  for (int i = 0; i < rig.num_views; ++i) {
    const double u = rig.num_views == 1 ? 0.5 : static_cast<double>(i) / (rig.num_views - 1);
    const double az = (u - 0.5) * rig.azimuth_span_deg * std::numbers::pi / 180.0;
    const double el = (i % 2 == 0 ? 1.0 : -1.0) * rig.elevation_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d c(dist * std::sin(az) * std::cos(el), -dist * std::sin(el),
                            -dist * std::cos(az) * std::cos(el));
    cams.push_back(LookAt(c, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0), K, rig.width, rig.height));
  }
  return cams;
}

SceneSpec GenerateScene(uint64_t seed, const DomainSpec& domain, const RigSpec& rig, SceneLayout layout) {
  domain.Validate();
  const double s = SceneScale(domain);
  if (layout == SceneLayout::kSinglePlane) {
    Rng rng = MakeRng(seed, {static_cast<uint64_t>(domain.id), 0x51});
    SceneSpec scene;
    scene.seed = seed;
    scene.domain_id = domain.id;
    Primitive plane;
    plane.kind = PrimitiveKind::kPlane;
    plane.point = Eigen::Vector3d(0, 0, 0);
    plane.normal = Eigen::Vector3d(0, 0, -1);
    plane.texture = RandomTexture(rng, domain.texture, s);
    scene.primitives.push_back(plane);
    return scene;
  }
  const std::vector<Camera> cams = MakeRig(rig, domain);
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    Rng rng = MakeRng(seed, {static_cast<uint64_t>(domain.id), static_cast<uint64_t>(attempt)});
    SceneSpec scene;
    scene.seed = seed;
    scene.domain_id = domain.id;

    Primitive bg;
    bg.kind = PrimitiveKind::kPlane;
    bg.point = Eigen::Vector3d(0, 0, UniformRange(rng, 0.3, 0.6) * s);
    const double tilt = UniformRange(rng, 0.0, 15.0) * std::numbers::pi / 180.0;
    const double axis = UniformRange(rng, 0.0, 2 * std::numbers::pi);
    bg.normal = Eigen::Vector3d(std::sin(tilt) * std::cos(axis), std::sin(tilt) * std::sin(axis), -std::cos(tilt));
    bg.texture = RandomTexture(rng, domain.texture, s);
    scene.primitives.push_back(bg);

    const int num_spheres = 1 + static_cast<int>(UniformIndex(rng, 3));
    for (int k = 0; k < num_spheres; ++k) {
      Primitive sp;
      sp.kind = PrimitiveKind::kSphere;
      sp.radius = UniformRange(rng, 0.25, 0.5) * s;
      sp.point = Eigen::Vector3d(UniformRange(rng, -0.6, 0.6) * s, UniformRange(rng, -0.45, 0.45) * s,
                                 UniformRange(rng, -0.6, 0.1) * s);
      sp.texture = RandomTexture(rng, domain.texture, s);
      // Keep the centre on the camera side of the background plane.
      if (bg.normal.dot(sp.point - bg.point) < sp.radius * 0.5) continue;
      scene.primitives.push_back(sp);
    }
    if (scene.primitives.size() < 2) continue;
    if (SceneFitsRig(scene, cams, domain, rig.output_factor)) return scene;
  }
  throw std::runtime_error("could not generate a scene within the depth range of domain '" + domain.name + "'");
}

SceneSpec FrontoParallelPlaneScene(double depth, const Texture& texture) {
  SceneSpec scene;
  Primitive plane;
  plane.kind = PrimitiveKind::kPlane;
  plane.point = Eigen::Vector3d(0, 0, depth);
  plane.normal = Eigen::Vector3d(0, 0, -1);
  plane.texture = texture;
  scene.primitives.push_back(plane);
  return scene;
}

RayHit CastRay(const SceneSpec& scene, const Camera& cam, const Eigen::Vector2d& pixel) {
  // Direction with unit camera-z component, so the ray parameter is z-depth.
  const Eigen::Vector3d dc = cam.K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(pixel.x(), pixel.y(), 1.0));
  const Eigen::Vector3d dir = cam.R.transpose() * dc;
  const Eigen::Vector3d o = cam.Center();
  RayHit best;
  double best_t = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& p = scene.primitives[i];
    double t = -1;
    if (p.kind == PrimitiveKind::kPlane) {
      const double denom = p.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      t = p.normal.dot(p.point - o) / denom;
    } else {
      const Eigen::Vector3d oc = o - p.point;
      const double a = dir.squaredNorm();
      const double b = oc.dot(dir);
      const double c = oc.squaredNorm() - p.radius * p.radius;
      const double disc = b * b - a * c;
      if (disc < 0) continue;
      const double sq = std::sqrt(disc);
      t = (-b - sq) / a;
      if (t <= 0) t = (-b + sq) / a;
    }
    if (t > 0 && t < best_t) {
      best_t = t;
      best.depth = t;
      best.primitive = static_cast<int>(i);
    }
  }
  if (best.primitive >= 0) {
    const Primitive& p = scene.primitives[best.primitive];
    best.point = o + best_t * dir;
    if (p.kind == PrimitiveKind::kPlane) {
      best.normal = p.normal.dot(dir) < 0 ? p.normal : Eigen::Vector3d(-p.normal);
    } else {
      best.normal = (best.point - p.point).normalized();
    }
  }
  return best;
}

Tensor RenderDepth(const SceneSpec& scene, const Camera& cam) {
  const int64_t h = cam.height, w = cam.width;
  std::vector<double> depth(h * w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      depth[y * w + x] = CastRay(scene, cam, Eigen::Vector2d(static_cast<double>(x), static_cast<double>(y))).depth;
    }
  return Tensor::FromValues({h, w}, std::move(depth));
}

RenderedView RenderView(const SceneSpec& scene, const Camera& cam, const DomainSpec& domain, int view_id,
                        int output_factor) {
  cam.Validate();
  if (output_factor <= 0 || cam.width % output_factor != 0 || cam.height % output_factor != 0) {
    throw std::invalid_argument("image size must be divisible by the output factor");
  }
  const int64_t h = cam.height, w = cam.width, n = h * w;
  const Eigen::Vector3d light = domain.light_dir.normalized();
  Rng rng = MakeRng(scene.seed, {0x7e11, static_cast<uint64_t>(scene.domain_id), static_cast<uint64_t>(view_id)});
  std::vector<double> img(3 * n);
  constexpr double kOffsets[2] = {-0.25, 0.25};
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (double oy : kOffsets)
        for (double ox : kOffsets) {
          const RayHit hit = CastRay(scene, cam, Eigen::Vector2d(x + ox, y + oy));
          if (hit.primitive < 0) continue;
          const Eigen::Vector3d albedo = scene.primitives[hit.primitive].texture.Albedo(hit.point);
          const double shade = domain.intensity * std::max(0.0, hit.normal.dot(light)) + domain.ambient;
          acc += albedo * shade;
        }
      acc /= 4.0;
      for (int c = 0; c < 3; ++c) img[c * n + y * w + x] = acc[c];
    }
  if (domain.noise_sigma > 0) {
    for (double& v : img) v += domain.noise_sigma * StandardNormal(rng);
  }
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  RenderedView out;
  out.image = Tensor::FromValues({3, h, w}, std::move(img));
  out.gt_depth = RenderDepth(scene, cam.Scaled(1.0 / output_factor));
  return out;
}

std::string SceneToJson(const SceneSpec& scene) {
  json prims = json::array();
  for (const auto& p : scene.primitives) {
    json tex = {{"family", TextureFamilyName(p.texture.family)},
                {"frequency", p.texture.frequency},
                {"color_a", ToJson(p.texture.color_a)},
                {"color_b", ToJson(p.texture.color_b)},
                {"stripe_dir", ToJson(p.texture.stripe_dir)},
                {"noise_seed", p.texture.noise_seed}};
    prims.push_back({{"kind", p.kind == PrimitiveKind::kPlane ? "plane" : "sphere"},
                     {"point", ToJson(p.point)},
                     {"normal", ToJson(p.normal)},
                     {"radius", p.radius},
                     {"texture", tex}});
  }
  json j = {{"seed", scene.seed}, {"domain_id", scene.domain_id}, {"primitives", prims}};
  return j.dump(2);
}

SceneSpec SceneFromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene json: ") + e.what());
  }
  SceneSpec scene;
  StrictObject o(j, "scene");
  o.Get("seed", scene.seed);
  o.Get("domain_id", scene.domain_id);
  const json* prims = o.Child("primitives");
  o.Finish();
  if (!prims || !prims->is_array()) throw ConfigError("scene: missing primitives");
  for (const auto& pj : *prims) {
    StrictObject po(pj, "scene.primitive");
    Primitive p;
    std::string kind;
    po.Get("kind", kind);
    if (kind == "plane") {
      p.kind = PrimitiveKind::kPlane;
    } else if (kind == "sphere") {
      p.kind = PrimitiveKind::kSphere;
    } else {
      throw ConfigError("scene: unknown primitive kind '" + kind + "'");
    }
    if (const json* v = po.Child("point")) p.point = Vector3FromJson(*v, "point");
    if (const json* v = po.Child("normal")) p.normal = Vector3FromJson(*v, "normal");
    po.Get("radius", p.radius);
    if (const json* tj = po.Child("texture")) {
      StrictObject to(*tj, "scene.texture");
      std::string fam = "checker";
      to.Get("family", fam);
      p.texture.family = ParseTextureFamily(fam);
      to.Get("frequency", p.texture.frequency);
      if (const json* v = to.Child("color_a")) p.texture.color_a = Vector3FromJson(*v, "color_a");
      if (const json* v = to.Child("color_b")) p.texture.color_b = Vector3FromJson(*v, "color_b");
      if (const json* v = to.Child("stripe_dir")) p.texture.stripe_dir = Vector3FromJson(*v, "stripe_dir");
      to.Get("noise_seed", p.texture.noise_seed);
      to.Finish();
    }
    po.Finish();
    scene.primitives.push_back(p);
  }
  return scene;
}

std::string SplitName(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTargetTrain:
      return "target_train";
    case Split::kTargetTest:
      return "target_test";
  }
  return "unknown";
}

Split ParseSplit(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "target_train") return Split::kTargetTrain;
  if (name == "target_test") return Split::kTargetTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

void DatasetConfig::Validate() const {
  if (train_domains.size() < 2) throw std::invalid_argument("at least 2 training domains are required");
  for (const auto& d : train_domains) {
    d.Validate();
    if (d.id == target_domain.id) throw std::invalid_argument("target domain id collides with a training domain");
  }
  for (size_t i = 0; i < train_domains.size(); ++i)
    for (size_t j = i + 1; j < train_domains.size(); ++j)
      if (train_domains[i].id == train_domains[j].id) throw std::invalid_argument("duplicate training domain id");
  target_domain.Validate();
  if (val_scenes < 1 || train_scenes <= val_scenes) {
    throw std::invalid_argument("need val_scenes >= 1 and train_scenes > val_scenes");
  }
  if (target_train_scenes < 0 || target_test_scenes < 0) throw std::invalid_argument("negative target scene count");
  if (num_neighbors < 1) throw std::invalid_argument("num_neighbors must be at least 1");
  rig.Validate();
  if (num_neighbors > rig.num_views - 1) {
    throw std::invalid_argument("num_neighbors " + std::to_string(num_neighbors) + " exceeds the " +
                                std::to_string(rig.num_views - 1) + " available neighbour views");
  }
}

const DomainSpec& SceneDataset::Domain(int id) const {
  for (const auto& d : domains)
    if (d.id == id) return d;
  throw std::out_of_range("unknown domain id " + std::to_string(id));
}

std::vector<int> NearestViews(const std::vector<Camera>& cams, int ref, int n) {
  const int total = static_cast<int>(cams.size());
  if (ref < 0 || ref >= total) throw std::out_of_range("reference view index out of range");
  if (n < 1 || n > total - 1) {
    throw std::invalid_argument("requested " + std::to_string(n) + " neighbours but only " +
                                std::to_string(total - 1) + " other views exist");
  }
  std::vector<int> idx;
  for (int i = 0; i < total; ++i)
    if (i != ref) idx.push_back(i);
  std::vector<double> ang(total);
  for (int i : idx) ang[i] = ViewAngle(cams[ref], cams[i]);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return ang[a] < ang[b]; });
  idx.resize(n);
  return idx;
}

void BuildSamples(SceneDataset& ds, int num_neighbors, bool shuffle, uint64_t seed) {
  ds.train.clear();
  ds.val.clear();
  ds.target_train.clear();
  ds.target_test.clear();
  ds.train_by_domain.clear();
  for (const SceneRecord& rec : ds.scenes) {
    std::vector<Camera> cams;
    for (const auto& v : rec.views) cams.push_back(v.camera);
    const DomainSpec& dom = ds.Domain(rec.domain_id);
    for (size_t r = 0; r < rec.views.size(); ++r) {
      MultiViewSample s;
      s.scene_id = rec.scene_id;
      s.domain_id = rec.domain_id;
      s.ref = rec.views[r];
      for (int k : NearestViews(cams, static_cast<int>(r), num_neighbors)) s.neighbors.push_back(rec.views[k]);
      s.gt_depth = rec.gt_depths[r];
      s.depth_min = dom.depth_min;
      s.depth_max = dom.depth_max;
      switch (rec.split) {
        case Split::kTrain:
          ds.train.push_back(std::move(s));
          break;
        case Split::kVal:
          ds.val.push_back(std::move(s));
          break;
        case Split::kTargetTrain:
          ds.target_train.push_back(std::move(s));
          break;
        case Split::kTargetTest:
          ds.target_test.push_back(std::move(s));
          break;
      }
    }
  }
  if (shuffle) {
    Rng rng = MakeRng(seed, {0x5f1e});
    for (size_t i = ds.train.size(); i > 1; --i) std::swap(ds.train[i - 1], ds.train[UniformIndex(rng, i)]);
  }
  for (size_t i = 0; i < ds.train.size(); ++i) ds.train_by_domain[ds.train[i].domain_id].push_back(i);
}

SceneDataset MakeDataset(const DatasetConfig& config) {
  config.Validate();
  SceneDataset ds;
  ds.domains = config.train_domains;
  ds.domains.push_back(config.target_domain);

  auto add_scene = [&](int scene_id, const DomainSpec& dom, Split split) {
    const uint64_t scene_seed = MakeRng(config.seed, {0x5ce7e, static_cast<uint64_t>(scene_id)})();
    SceneRecord rec;
    rec.scene_id = scene_id;
    rec.domain_id = dom.id;
    rec.split = split;
    rec.spec = GenerateScene(scene_seed, dom, config.rig);
    const std::vector<Camera> cams = MakeRig(config.rig, dom);
    for (size_t v = 0; v < cams.size(); ++v) {
      RenderedView rv = RenderView(rec.spec, cams[v], dom, static_cast<int>(v), config.rig.output_factor);
      rec.views.push_back(View{static_cast<int>(v), rv.image, cams[v]});
      rec.gt_depths.push_back(rv.gt_depth);
    }
    ds.scenes.push_back(std::move(rec));
  };

  int id = 0;
  const int nd = static_cast<int>(config.train_domains.size());
  for (int i = 0; i < config.train_scenes; ++i, ++id) {
    const Split split = i >= config.train_scenes - config.val_scenes ? Split::kVal : Split::kTrain;
    add_scene(id, config.train_domains[i % nd], split);
  }
  for (int i = 0; i < config.target_train_scenes; ++i, ++id) add_scene(id, config.target_domain, Split::kTargetTrain);
  for (int i = 0; i < config.target_test_scenes; ++i, ++id) add_scene(id, config.target_domain, Split::kTargetTest);

  BuildSamples(ds, config.num_neighbors, config.shuffle, config.seed);
  return ds;
}

void SaveDataset(const SceneDataset& ds, const DatasetConfig& config, const std::string& dir, bool ppm_images) {
  fs::create_directories(dir);
  json scenes = json::array();
  for (const SceneRecord& rec : ds.scenes) {
    std::ostringstream name;
    name << "scene_" << std::setw(4) << std::setfill('0') << rec.scene_id;
    const fs::path sdir = fs::path(dir) / name.str();
    fs::create_directories(sdir / "images");
    fs::create_directories(sdir / "depths");
    fs::create_directories(sdir / "cams");
    const DomainSpec& dom = ds.Domain(rec.domain_id);
    for (size_t v = 0; v < rec.views.size(); ++v) {
      std::ostringstream vn;
      vn << std::setw(8) << std::setfill('0') << v;
      if (ppm_images) {
        io::WritePpm((sdir / "images" / (vn.str() + ".ppm")).string(), rec.views[v].image);
      } else {
        io::WritePfm((sdir / "images" / (vn.str() + ".pfm")).string(), rec.views[v].image);
      }
      io::WritePfm((sdir / "depths" / (vn.str() + ".pfm")).string(), rec.gt_depths[v]);
      io::WriteCameraText((sdir / "cams" / (vn.str() + "_cam.txt")).string(),
                          {rec.views[v].camera, dom.depth_min, dom.depth_max});
    }
    std::ofstream(sdir / "scene.json") << SceneToJson(rec.spec) << "\n";
    scenes.push_back({{"dir", name.str()},
                      {"scene_id", rec.scene_id},
                      {"domain_id", rec.domain_id},
                      {"split", SplitName(rec.split)},
                      {"num_views", rec.views.size()}});
  }
  json root = {{"format", "mmvs-dataset"},
               {"version", 1},
               {"image_format", ppm_images ? "ppm" : "pfm"},
               {"config", ToJson(config)},
               {"scenes", scenes}};
  std::ofstream os(fs::path(dir) / "dataset.json");
  if (!os) throw io::IoError("cannot write " + (fs::path(dir) / "dataset.json").string());
  os << root.dump(2) << "\n";
}

LoadedDataset LoadDataset(const std::string& dir) {
  const fs::path root_path = fs::path(dir) / "dataset.json";
  std::ifstream is(root_path);
  if (!is) throw io::IoError("cannot open " + root_path.string());
  json root;
  try {
    root = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(root_path.string() + ": " + e.what());
  }
  if (root.value("format", "") != "mmvs-dataset") throw ConfigError(root_path.string() + ": not a dataset manifest");
  LoadedDataset out;
  out.config = DatasetConfigFromJson(root.at("config"), "dataset.config");
  const std::string ext = root.value("image_format", "pfm") == "ppm" ? ".ppm" : ".pfm";
  SceneDataset& ds = out.dataset;
  ds.domains = out.config.train_domains;
  ds.domains.push_back(out.config.target_domain);
  for (const auto& sj : root.at("scenes")) {
    SceneRecord rec;
    rec.scene_id = sj.at("scene_id").get<int>();
    rec.domain_id = sj.at("domain_id").get<int>();
    rec.split = ParseSplit(sj.at("split").get<std::string>());
    const fs::path sdir = fs::path(dir) / sj.at("dir").get<std::string>();
    {
      std::ifstream ss(sdir / "scene.json");
      if (!ss) throw io::IoError("cannot open " + (sdir / "scene.json").string());
      std::stringstream buf;
      buf << ss.rdbuf();
      rec.spec = SceneFromJson(buf.str());
    }
    const int nv = sj.at("num_views").get<int>();
    for (int v = 0; v < nv; ++v) {
      std::ostringstream vn;
      vn << std::setw(8) << std::setfill('0') << v;
      Tensor image = io::ReadImage((sdir / "images" / (vn.str() + ext)).string());
      const io::CameraFile cf = io::ReadCameraText((sdir / "cams" / (vn.str() + "_cam.txt")).string(),
                                                   static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)));
      rec.views.push_back(View{v, image, cf.camera});
      rec.gt_depths.push_back(io::ReadPfm((sdir / "depths" / (vn.str() + ".pfm")).string()));
    }
    ds.scenes.push_back(std::move(rec));
  }
  BuildSamples(ds, out.config.num_neighbors, out.config.shuffle, out.config.seed);
  return out;
}

}  // namespace mmvs
