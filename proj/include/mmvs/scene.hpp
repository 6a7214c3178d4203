#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmvs/geometry.hpp"
#include "mmvs/tensor.hpp"

namespace mmvs {

enum class TextureFamily { kChecker, kValueNoise, kStripes };

std::string TextureFamilyName(TextureFamily f);
TextureFamily ParseTextureFamily(const std::string& name);

struct DomainSpec {
  int id = 0;
  std::string name;
  TextureFamily texture = TextureFamily::kChecker;
  Eigen::Vector3d light_dir = Eigen::Vector3d(0.3, -0.5, -1.0);  // towards the light
  double intensity = 0.8;
  double ambient = 0.3;
  double noise_sigma = 0.01;
  double depth_min = 2.5;
  double depth_max = 6.5;

  // Throws std::invalid_argument on d_min <= 0, d_max <= d_min, intensity <= 0,
  // noise < 0 or a zero light direction.
  void Validate() const;
};

// Solid (3D) albedo texture evaluated at world points.
struct Texture {
  TextureFamily family = TextureFamily::kChecker;
  double frequency = 3.0;  // cycles per scene unit
  Eigen::Vector3d color_a = Eigen::Vector3d(0.9, 0.9, 0.9);
  Eigen::Vector3d color_b = Eigen::Vector3d(0.1, 0.1, 0.1);
  Eigen::Vector3d stripe_dir = Eigen::Vector3d(1, 0, 0);
  uint64_t noise_seed = 0;

  Eigen::Vector3d Albedo(const Eigen::Vector3d& p) const;
};

enum class PrimitiveKind { kPlane, kSphere };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kPlane;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // plane point or sphere centre
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, -1);  // planes only, unit length
  double radius = 0.0;                                  // spheres only
  Texture texture;
};

struct SceneSpec {
  uint64_t seed = 0;
  int domain_id = 0;
  std::vector<Primitive> primitives;  // primitives[0] is the background plane
};

std::string SceneToJson(const SceneSpec& scene);
SceneSpec SceneFromJson(const std::string& text);

// Ring of cameras on an arc around the world origin, all looking at it.
struct RigSpec {
  int num_views = 7;
  double azimuth_span_deg = 40.0;   // total horizontal arc
  double elevation_deg = 8.0;       // views alternate between +/- this
  int width = 80;
  int height = 64;
  double focal_factor = 1.2;        // focal length in units of image width
  int output_factor = 4;            // input / output resolution ratio

  void Validate() const;
};

// Camera distance to the origin used for a domain's depth range.
double RigDistance(const DomainSpec& domain);
std::vector<Camera> MakeRig(const RigSpec& rig, const DomainSpec& domain);

enum class SceneLayout {
  kRandom,        // tilted background plane plus one to three spheres
  kSinglePlane,   // only a background plane facing the cameras
};

// Deterministic in (seed, domain, rig, layout). kRandom scenes are resampled
// until every sphere projects inside every rig view and all rendered depths
// lie in the domain's range.
SceneSpec GenerateScene(uint64_t seed, const DomainSpec& domain, const RigSpec& rig = {},
                        SceneLayout layout = SceneLayout::kRandom);

// Single plane z = depth (world frame) facing a camera at the origin looking
// along +z.
SceneSpec FrontoParallelPlaneScene(double depth, const Texture& texture);

struct RayHit {
  double depth = 0.0;  // camera z-depth; 0 when nothing is hit
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  int primitive = -1;
};

// Nearest intersection of the ray through `pixel` (pixel centres at integers).
RayHit CastRay(const SceneSpec& scene, const Camera& cam, const Eigen::Vector2d& pixel);

// z-depth map [H,W] for `cam`; 0 where no surface is hit.
Tensor RenderDepth(const SceneSpec& scene, const Camera& cam);

struct RenderedView {
  Tensor image;     // [3,H,W] in [0,1]
  Tensor gt_depth;  // [H/f, W/f] at output resolution
};

// Lambertian shading albedo * (intensity * max(0, n.l) + ambient), 2x2
// supersampled, then per-pixel Gaussian noise from the (scene seed, view id)
// stream, then clamped to [0,1].
RenderedView RenderView(const SceneSpec& scene, const Camera& cam, const DomainSpec& domain, int view_id,
                        int output_factor = 4);

struct View {
  int view_id = 0;
  Tensor image;  // [3,H,W]
  Camera camera;
};

struct MultiViewSample {
  int scene_id = 0;
  int domain_id = 0;
  View ref;
  std::vector<View> neighbors;
  Tensor gt_depth;  // [H',W'], 0 marks invalid; may be empty
  double depth_min = 0.0;
  double depth_max = 0.0;
};

enum class Split { kTrain, kVal, kTargetTrain, kTargetTest };
std::string SplitName(Split s);
Split ParseSplit(const std::string& name);

struct SceneRecord {
  int scene_id = 0;
  int domain_id = 0;
  Split split = Split::kTrain;
  SceneSpec spec;
  std::vector<View> views;
  std::vector<Tensor> gt_depths;  // output resolution, one per view
};

struct DatasetConfig {
  uint64_t seed = 0;
  std::vector<DomainSpec> train_domains;
  DomainSpec target_domain;
  int train_scenes = 6;         // scenes from training domains, before the split
  int val_scenes = 2;           // taken from the end of the training scenes
  int target_train_scenes = 1;  // target-domain scenes for fine-tuning
  int target_test_scenes = 1;   // target-domain scenes for evaluation
  int num_neighbors = 2;
  RigSpec rig;
  bool shuffle = true;

  void Validate() const;
};

struct SceneDataset {
  std::vector<DomainSpec> domains;  // training domains then the target domain
  std::vector<SceneRecord> scenes;
  std::vector<MultiViewSample> train;
  std::vector<MultiViewSample> val;
  std::vector<MultiViewSample> target_train;  // GT kept only for evaluation
  std::vector<MultiViewSample> target_test;
  std::map<int, std::vector<size_t>> train_by_domain;  // indices into train

  const DomainSpec& Domain(int id) const;
};

// Indices of the n views whose optical axes are closest in angle to view
// `ref` (ties by index). Throws std::invalid_argument if n exceeds the
// number of other views.
std::vector<int> NearestViews(const std::vector<Camera>& cams, int ref, int n);

SceneDataset MakeDataset(const DatasetConfig& config);

// Rebuilds the per-view samples of the scene records (used after loading).
void BuildSamples(SceneDataset& ds, int num_neighbors, bool shuffle, uint64_t seed);

// Directory layout: dataset.json plus scene_XXXX/{images,depths,cams}/ and
// scene_XXXX/scene.json. Images are PFM or 8-bit PPM.
void SaveDataset(const SceneDataset& ds, const DatasetConfig& config, const std::string& dir,
                 bool ppm_images = false);
struct LoadedDataset {
  SceneDataset dataset;
  DatasetConfig config;
};
LoadedDataset LoadDataset(const std::string& dir);

}  // namespace mmvs
