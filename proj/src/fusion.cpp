#include "mmvs/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mmvs/io.hpp"

namespace mmvs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kConsumeReprojPx = 2.0;
constexpr double kConsumeRelDepth = 0.05;

struct Match {
  double reproj = kInf;
  double rel = kInf;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  int64_t index = -1;
};

Match MatchPixel(const Eigen::Vector2d& p, double d, const Camera& ref, const std::span<const double> src_depth,
                 const Camera& src) {
  Match m;
  const Eigen::Vector3d x = Backproject(ref, p, d);
  const Projection q = Project(src, x);
  if (!q.in_front) return m;
  const double fx = q.pixel.x(), fy = q.pixel.y();
  if (!(fx > -0.5 && fy > -0.5 && fx < src.width - 0.5 && fy < src.height - 0.5)) return m;
  const long qx = std::lround(fx), qy = std::lround(fy);
  m.index = qy * src.width + qx;
  const double ds = src_depth[static_cast<size_t>(m.index)];
  if (!(ds > 0)) return m;
  m.point = Backproject(src, Eigen::Vector2d(static_cast<double>(qx), static_cast<double>(qy)), ds);
  const Projection back = Project(ref, m.point);
  if (!back.in_front) return m;
  m.reproj = (back.pixel - p).norm();
  m.rel = std::abs(back.depth - d) / d;
  return m;
}

void CheckMap(const Tensor& depth, const Camera& cam, const char* what) {
  if (depth.rank() != 2 || depth.dim(0) != cam.height || depth.dim(1) != cam.width) {
    throw DimensionError(std::string(what) + " depth map " + ShapeString(depth.shape()) + " does not match its " +
                         std::to_string(cam.width) + "x" + std::to_string(cam.height) + " camera");
  }
}

template <typename T>
void Put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::vector<Eigen::Vector3d> PointCloud::Positions() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position.cast<double>());
  return out;
}

uint8_t ColorByte(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void FusionConfig::Validate() const {
  if (!(prob_threshold >= 0 && prob_threshold <= 1)) throw std::invalid_argument("prob_threshold must be in [0,1]");
  if (!(reproj_px > 0) || !(rel_depth > 0)) throw std::invalid_argument("consistency thresholds must be > 0");
  if (min_views < 1) throw std::invalid_argument("min_views must be >= 1");
  if (max_neighbors < 0) throw std::invalid_argument("max_neighbors must be >= 0");
  if (conf_threshold > 1) throw std::invalid_argument("conf_threshold must be <= 1");
}

Tensor ConfidenceFilter(const Tensor& depth, const Tensor& prob, double threshold) {
  if (depth.shape() != prob.shape()) {
    throw DimensionError("depth " + ShapeString(depth.shape()) + " and probability " + ShapeString(prob.shape()) +
                         " differ");
  }
  std::vector<double> out(depth.values().begin(), depth.values().end());
  const auto p = prob.values();
  for (size_t i = 0; i < out.size(); ++i)
    if (!(p[i] > threshold)) out[i] = 0.0;
  return Tensor::FromValues(depth.shape(), std::move(out));
}

ConsistencyResult ConsistencyCheck(const Tensor& depth_ref, const Camera& cam_ref, const Tensor& depth_src,
                                   const Camera& cam_src, double reproj_px, double rel_depth) {
  CheckMap(depth_ref, cam_ref, "reference");
  CheckMap(depth_src, cam_src, "source");
  const int64_t n = depth_ref.numel();
  ConsistencyResult r;
  r.consistent.assign(n, 0);
  r.reproj_error.assign(n, kInf);
  r.rel_error.assign(n, kInf);
  r.src_point.assign(n, Eigen::Vector3d::Zero());
  r.src_index.assign(n, -1);
  const auto dr = depth_ref.values();
  const auto ds = depth_src.values();
  for (int64_t i = 0; i < n; ++i) {
    if (!(dr[i] > 0)) continue;
    const Eigen::Vector2d p(static_cast<double>(i % cam_ref.width), static_cast<double>(i / cam_ref.width));
    const Match m = MatchPixel(p, dr[i], cam_ref, ds, cam_src);
    r.reproj_error[i] = m.reproj;
    r.rel_error[i] = m.rel;
    r.src_point[i] = m.point;
    r.src_index[i] = m.index;
    r.consistent[i] = m.reproj < reproj_px && m.rel < rel_depth;
  }
  return r;
}

PointCloud Fuse(std::vector<FusionView> views, const FusionConfig& cfg) {
  cfg.Validate();
  if (views.size() < 2) throw std::invalid_argument("fusion needs at least two views");
  std::sort(views.begin(), views.end(), [](const FusionView& a, const FusionView& b) { return a.view_id < b.view_id; });
  for (size_t i = 1; i < views.size(); ++i) {
    if (views[i].view_id == views[i - 1].view_id) {
      throw std::invalid_argument("duplicate view id " + std::to_string(views[i].view_id));
    }
  }
  for (const FusionView& v : views) {
    CheckMap(v.depth, v.camera, "view");
    if (v.image.rank() != 3 || v.image.dim(0) != 3 || v.image.dim(1) != v.depth.dim(0) ||
        v.image.dim(2) != v.depth.dim(1)) {
      throw DimensionError("view " + std::to_string(v.view_id) + ": image " + ShapeString(v.image.shape()) +
                           " does not match depth " + ShapeString(v.depth.shape()));
    }
    if (v.prob.defined() && v.prob.shape() != v.depth.shape()) throw DimensionError("probability map size mismatch");
    if (v.conf.defined() && v.conf.shape() != v.depth.shape()) throw DimensionError("mask map size mismatch");
  }

  const size_t nv = views.size();
  std::vector<std::vector<uint8_t>> consumed(nv);
  for (size_t v = 0; v < nv; ++v) consumed[v].assign(views[v].depth.numel(), 0);

  std::vector<std::vector<size_t>> neighbors(nv);
  for (size_t r = 0; r < nv; ++r) {
    for (size_t s = 0; s < nv; ++s)
      if (s != r) neighbors[r].push_back(s);
    std::stable_sort(neighbors[r].begin(), neighbors[r].end(), [&](size_t a, size_t b) {
      return ViewAngle(views[r].camera, views[a].camera) < ViewAngle(views[r].camera, views[b].camera);
    });
    if (cfg.max_neighbors > 0 && neighbors[r].size() > static_cast<size_t>(cfg.max_neighbors)) {
      neighbors[r].resize(cfg.max_neighbors);
    }
  }

  PointCloud cloud;
  for (size_t r = 0; r < nv; ++r) {
    const FusionView& ref = views[r];
    const auto depth = ref.depth.values();
    const auto img = ref.image.values();
    const int64_t hw = ref.depth.numel();
    for (int64_t i = 0; i < hw; ++i) {
      const double d = depth[i];
      if (!(d > 0) || consumed[r][i]) continue;
      const Eigen::Vector2d p(static_cast<double>(i % ref.camera.width), static_cast<double>(i / ref.camera.width));
      const bool passes = (!ref.prob.defined() || ref.prob.values()[i] > cfg.prob_threshold) &&
                          (cfg.conf_threshold < 0 || !ref.conf.defined() || ref.conf.values()[i] > cfg.conf_threshold);
      Eigen::Vector3d sum = Backproject(ref.camera, p, d);
      int support = 0;
      for (size_t s : neighbors[r]) {
        const Match m = MatchPixel(p, d, ref.camera, views[s].depth.values(), views[s].camera);
        if (m.index < 0) continue;
        if (m.reproj < kConsumeReprojPx && m.rel < kConsumeRelDepth) consumed[s][m.index] = 1;
        if (passes && m.reproj < cfg.reproj_px && m.rel < cfg.rel_depth) {
          sum += m.point;
          ++support;
        }
      }
      if (!passes || support < cfg.min_views) continue;
      CloudPoint pt;
      pt.position = (sum / static_cast<double>(support + 1)).cast<float>();
      for (int c = 0; c < 3; ++c) pt.color[c] = ColorByte(img[c * hw + i]);
      pt.support = support;
      cloud.points.push_back(pt);
    }
  }
  return cloud;
}

void WritePly(const PointCloud& cloud, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::IoError("cannot open " + path + " for writing");
  os << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const CloudPoint& p : cloud.points) {
    for (int k = 0; k < 3; ++k) Put<float>(os, p.position[k]);
    for (int k = 0; k < 3; ++k) Put<uint8_t>(os, p.color[k]);
  }
  if (!os) throw io::IoError("write failed for " + path);
}

PointCloud ReadPly(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::IoError("cannot open " + path);
  auto fail = [&](const std::string& why) { return io::IoError(path + ": " + why); };

  struct Property {
    std::string name;
    int size;
    char kind;  // 'f' float, 'd' double, 'u' unsigned, 's' signed
  };
  std::string line;
  if (!std::getline(is, line) || line != "ply") throw fail("not a PLY file");
  bool binary_le = false, in_vertex = false, saw_vertex = false;
  int64_t count = -1;
  std::vector<Property> props;
  while (true) {
    if (!std::getline(is, line)) throw fail("header not terminated");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      binary_le = fmt == "binary_little_endian";
      if (!binary_le) throw fail("unsupported format '" + fmt + "' (need binary_little_endian)");
    } else if (word == "element") {
      std::string name;
      int64_t n = -1;
      ls >> name >> n;
      if (!ls || n < 0) throw fail("malformed element line '" + line + "'");
      in_vertex = name == "vertex";
      if (in_vertex) {
        saw_vertex = true;
        count = n;
      } else if (n != 0) {
        throw fail("unsupported non-empty element '" + name + "'");
      }
    } else if (word == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") throw fail("list properties are not supported");
      ls >> name;
      if (!ls) throw fail("malformed property line '" + line + "'");
      if (!in_vertex) continue;
      static const std::vector<std::tuple<std::string, int, char>> kTypes = {
          {"float", 4, 'f'},  {"float32", 4, 'f'}, {"double", 8, 'd'}, {"float64", 8, 'd'},
          {"uchar", 1, 'u'},  {"uint8", 1, 'u'},   {"char", 1, 's'},   {"int8", 1, 's'},
          {"ushort", 2, 'u'}, {"uint16", 2, 'u'},  {"short", 2, 's'},  {"int16", 2, 's'},
          {"uint", 4, 'u'},   {"uint32", 4, 'u'},  {"int", 4, 's'},    {"int32", 4, 's'}};
      auto it = std::find_if(kTypes.begin(), kTypes.end(), [&](const auto& t) { return std::get<0>(t) == type; });
      if (it == kTypes.end()) throw fail("unknown property type '" + type + "'");
      props.push_back({name, std::get<1>(*it), std::get<2>(*it)});
    } else {
      throw fail("unexpected header line '" + line + "'");
    }
  }
  if (!binary_le) throw fail("missing format line");
  if (!saw_vertex) throw fail("no vertex element");
  auto find = [&](const std::string& n) -> int {
    for (size_t i = 0; i < props.size(); ++i)
      if (props[i].name == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  const int ir = find("red"), ig = find("green"), ib = find("blue");
  if (ix < 0 || iy < 0 || iz < 0) throw fail("vertex element lacks x/y/z");

  size_t stride = 0;
  std::vector<size_t> offset;
  for (const auto& p : props) {
    offset.push_back(stride);
    stride += p.size;
  }
  std::vector<char> buf(stride * static_cast<size_t>(count));
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw fail("truncated payload: expected " + std::to_string(count) + " vertices");
  }
  auto read = [&](const char* rec, int k) -> double {
    const char* src = rec + offset[k];
    const Property& p = props[k];
    switch (p.kind) {
      case 'f': {
        float v;
        std::memcpy(&v, src, 4);
        return v;
      }
      case 'd': {
        double v;
        std::memcpy(&v, src, 8);
        return v;
      }
      case 'u': {
        uint32_t v = 0;
        std::memcpy(&v, src, p.size);
        return v;
      }
      default: {
        int32_t v = 0;
        std::memcpy(&v, src, p.size);
        const int shift = 32 - 8 * p.size;
        return static_cast<double>((v << shift) >> shift);
      }
    }
  };
  PointCloud cloud;
  cloud.points.resize(count);
  for (int64_t n = 0; n < count; ++n) {
    const char* rec = buf.data() + n * stride;
    CloudPoint& pt = cloud.points[n];
    pt.position = Eigen::Vector3f(static_cast<float>(read(rec, ix)), static_cast<float>(read(rec, iy)),
                                  static_cast<float>(read(rec, iz)));
    if (ir >= 0 && ig >= 0 && ib >= 0) {
      pt.color = {static_cast<uint8_t>(read(rec, ir)), static_cast<uint8_t>(read(rec, ig)),
                  static_cast<uint8_t>(read(rec, ib))};
    }
  }
  return cloud;
}

}  // namespace mmvs
