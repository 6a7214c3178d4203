#include "mmvs/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mmvs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double MeanWithin(const std::vector<double>& d, double max_dist, int64_t* rejected) {
  double s = 0;
  int64_t n = 0, bad = 0;
  for (double v : d) {
    if (v <= max_dist) {
      s += v;
      ++n;
    } else {
      ++bad;
    }
  }
  if (rejected) *rejected = bad;
  return n > 0 ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

void RequireNonEmpty(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt) {
  if (est.empty()) throw std::invalid_argument("estimated point cloud is empty");
  if (gt.empty()) throw std::invalid_argument("ground-truth point cloud is empty");
}

// Cell size for a query radius: tau, widened when the cloud is sparse
// relative to it so that shells stay few.
double CellFor(std::span<const Eigen::Vector3d> pts, double tau) {
  if (pts.empty()) return tau;
  Eigen::Vector3d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d ext = (hi - lo).cwiseMax(1e-12);
  const double spacing = std::cbrt(ext.prod() / static_cast<double>(pts.size()));
  return std::max(tau, spacing);
}

double Percent(int64_t k, int64_t n) { return n > 0 ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0; }

}  // namespace

size_t GridIndex::KeyHash::operator()(const Key& k) const {
  uint64_t h = static_cast<uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
  h ^= static_cast<uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
  h ^= static_cast<uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
  return static_cast<size_t>(h);
}

GridIndex::Key GridIndex::KeyOf(const Eigen::Vector3d& p) const {
  return {static_cast<int64_t>(std::floor(p.x() / cell_)), static_cast<int64_t>(std::floor(p.y() / cell_)),
          static_cast<int64_t>(std::floor(p.z() / cell_))};
}

GridIndex::GridIndex(std::span<const Eigen::Vector3d> points, double cell)
    : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0) || !std::isfinite(cell)) throw std::invalid_argument("grid cell must be positive");
  for (uint32_t i = 0; i < points_.size(); ++i) cells_[KeyOf(points_[i])].push_back(i);
}

double GridIndex::Nearest(const Eigen::Vector3d& q, double max_dist) const {
  if (points_.empty()) return kInf;
  const Key c = KeyOf(q);
  double best_sq = kInf;
  // Points in shell r + 1 are at least r cells away.
  for (int64_t r = 0;; ++r) {
    for (int64_t dx = -r; dx <= r; ++dx)
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dz = -r; dz <= r; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (uint32_t i : it->second) best_sq = std::min(best_sq, (points_[i] - q).squaredNorm());
        }
    const double bound = static_cast<double>(r) * cell_;
    if (bound * bound >= best_sq || bound > max_dist) break;
  }
  const double d = std::sqrt(best_sq);
  return d <= max_dist ? d : kInf;
}

double BruteForceNearest(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& q) {
  double best_sq = kInf;
  for (const auto& p : points) best_sq = std::min(best_sq, (p - q).squaredNorm());
  return std::sqrt(best_sq);
}

void EvalConfig::Validate() const {
  if (!(max_dist > 0)) throw std::invalid_argument("eval max_dist must be > 0");
  if (thresholds.empty()) throw std::invalid_argument("eval needs at least one threshold");
  for (double t : thresholds)
    if (!(t > 0)) throw std::invalid_argument("eval thresholds must be > 0");
  if (!(gt_factor > 0)) throw std::invalid_argument("eval gt_factor must be > 0");
}

std::vector<double> NearestDistances(std::span<const Eigen::Vector3d> from, std::span<const Eigen::Vector3d> to,
                                     double max_dist, double cell) {
  const GridIndex index(to, cell);
  std::vector<double> d(from.size());
  for (size_t i = 0; i < from.size(); ++i) d[i] = index.Nearest(from[i], max_dist);
  return d;
}

double Accuracy(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double max_dist) {
  RequireNonEmpty(est, gt);
  return MeanWithin(NearestDistances(est, gt, max_dist, CellFor(gt, max_dist / 8)), max_dist, nullptr);
}

double Completeness(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double max_dist) {
  return Accuracy(gt, est, max_dist);
}

ThresholdScore PrecisionRecallF(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, double tau) {
  RequireNonEmpty(est, gt);
  if (!(tau > 0)) throw std::invalid_argument("F-score threshold must be > 0");
  const auto de = NearestDistances(est, gt, tau, CellFor(gt, tau));
  const auto dg = NearestDistances(gt, est, tau, CellFor(est, tau));
  int64_t pe = 0, pg = 0;
  for (double v : de) pe += v < tau;
  for (double v : dg) pg += v < tau;
  ThresholdScore s;
  s.tau = tau;
  s.precision = Percent(pe, static_cast<int64_t>(est.size()));
  s.recall = Percent(pg, static_cast<int64_t>(gt.size()));
  s.f_score = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

EvalReport Evaluate(std::span<const Eigen::Vector3d> est, std::span<const Eigen::Vector3d> gt, const EvalConfig& cfg) {
  cfg.Validate();
  RequireNonEmpty(est, gt);
  EvalReport r;
  r.max_dist = cfg.max_dist;
  r.est_points = static_cast<int64_t>(est.size());
  r.gt_points = static_cast<int64_t>(gt.size());
  const auto de = NearestDistances(est, gt, cfg.max_dist, CellFor(gt, cfg.max_dist / 8));
  const auto dg = NearestDistances(gt, est, cfg.max_dist, CellFor(est, cfg.max_dist / 8));
  r.accuracy = MeanWithin(de, cfg.max_dist, &r.accuracy_rejected);
  r.completeness = MeanWithin(dg, cfg.max_dist, &r.completeness_rejected);
  r.overall = (r.accuracy + r.completeness) / 2;
  for (double tau : cfg.thresholds) {
    ThresholdScore s;
    s.tau = tau;
    int64_t pe = 0, pg = 0;
    if (tau <= cfg.max_dist) {
      for (double v : de) pe += v < tau;
      for (double v : dg) pg += v < tau;
      s.precision = Percent(pe, r.est_points);
      s.recall = Percent(pg, r.gt_points);
      s.f_score = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    } else {
      s = PrecisionRecallF(est, gt, tau);
    }
    r.scores.push_back(s);
  }
  return r;
}

std::vector<Eigen::Vector3d> GroundTruthCloud(const SceneSpec& scene, std::span<const Camera> cams, double factor) {
  if (!(factor > 0)) throw std::invalid_argument("GT sampling factor must be > 0");
  std::vector<Eigen::Vector3d> out;
  for (const Camera& base : cams) {
    const Camera cam = base.Scaled(factor);
    const Tensor depth = RenderDepth(scene, cam);
    const auto d = depth.values();
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const double z = d[static_cast<size_t>(y) * cam.width + x];
        if (z > 0) out.push_back(Backproject(cam, Eigen::Vector2d(x, y), z));
      }
  }
  return out;
}

nlohmann::json ToJson(const EvalReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : r.scores) {
    scores.push_back({{"tau", s.tau}, {"precision", s.precision}, {"recall", s.recall}, {"f_score", s.f_score}});
  }
  return {{"accuracy", num(r.accuracy)},
          {"completeness", num(r.completeness)},
          {"overall", num(r.overall)},
          {"max_dist", r.max_dist},
          {"est_points", r.est_points},
          {"gt_points", r.gt_points},
          {"accuracy_rejected", r.accuracy_rejected},
          {"completeness_rejected", r.completeness_rejected},
          {"thresholds", scores}};
}

std::string FormatTable(const EvalReport& r) {
  std::ostringstream os;
  char buf[64];
  os << "      acc.     comp.     over.";
  for (const auto& s : r.scores) {
    std::snprintf(buf, sizeof buf, "   prec@%-5g rec@%-5g   F@%-5g", s.tau, s.tau, s.tau);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f", r.accuracy, r.completeness, r.overall);
  os << buf;
  for (const auto& s : r.scores) {
    std::snprintf(buf, sizeof buf, "%12.2f%11.2f%9.2f", s.precision, s.recall, s.f_score);
    os << buf;
  }
  os << "\n";
  return os.str();
}

}  // namespace mmvs
