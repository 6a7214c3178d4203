#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmvs/fusion.hpp"
#include "mmvs/scene.hpp"

namespace mmvs {

// Uniform-grid spatial hash; nearest-neighbour queries are exact up to a
// radius.
class GridIndex {
 public:
  GridIndex(std::span<const Eigen::Vector3d> points, double cell);

  // Distance to the nearest point, or +inf when none lies within max_dist.
  double Nearest(const Eigen::Vector3d& q, double max_dist) const;
  double cell() const { return cell_; }

 private:
  struct Key {
    int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    size_t operator()(const Key& k) const;
  };
  Key KeyOf(const Eigen::Vector3d& p) const;

  std::vector<Eigen::Vector3d> points_;
  double cell_;
  std::unordered_map<Key, std::vector<uint32_t>, KeyHash> cells_;
};

// Reference oracle: linear scan.
double BruteForceNearest(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& q);

struct ThresholdScore {
  double tau = 0.0;
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double f_score = 0.0;    // percent
};

struct EvalConfig {
  double max_dist = 1.0;                     // outlier cut for accuracy / completeness
  std::vector<double> thresholds{0.05, 0.1};  // F-score distances
  double gt_factor = 2.0;                     // GT depth sampled at this multiple of each view's resolution

  void Validate() const;
};

struct EvalReport {
  double accuracy = 0.0;
  double completeness = 0.0;
  double overall = 0.0;
  double max_dist = 0.0;
  int64_t est_points = 0;
  int64_t gt_points = 0;
  int64_t accuracy_rejected = 0;      // est points farther than max_dist
  int64_t completeness_rejected = 0;  // gt points farther than max_dist
  std::vector<ThresholdScore> scores;
};

// Per-point nearest distances from `from` to `to` (+inf beyond max_dist).
std::vector<double> NearestDistances(std::span<const Eigen::Vector3d> from, std::span<const Eigen::Vector3d> to,
                                     double max_dist, double cell);

// Mean nearest distance est -> gt over distances <= max_dist; NaN when every
// point is rejected.
double Accuracy(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double max_dist);
double Completeness(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double max_dist);
ThresholdScore PrecisionRecallF(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double tau);

EvalReport Evaluate(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, const EvalConfig& cfg);

// Dense samples of the scene surfaces visible from the cameras: GT depth ray
// cast at `factor` times each camera's resolution, backprojected.
std::vector<Eigen::Vector3d> GroundTruthCloud(const SceneSpec& scene, std::span<const Camera> cams, double factor);

nlohmann::json ToJson(const EvalReport& r);
// Fixed-column table: acc, comp, overall, then precision, recall, F per tau.
std::string FormatTable(const EvalReport& r);

}  // namespace mmvs
