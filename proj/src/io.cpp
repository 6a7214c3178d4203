#include "mmvs/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace mmvs::io {

namespace {

std::string ReadToken(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  if (tok.empty()) throw IoError("unexpected end of header");
  return tok;
}

int64_t ParseDim(const std::string& tok) {
  try {
    const long long v = std::stoll(tok);
    if (v <= 0 || v > (1 << 20)) throw IoError("bad image dimension " + tok);
    return v;
  } catch (const std::logic_error&) {
    throw IoError("bad image dimension " + tok);
  }
}

}  // namespace

void WritePfm(const std::string& path, const Tensor& image) {
  int64_t c, h, w;
  if (image.rank() == 2) {
    c = 1, h = image.dim(0), w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    c = image.dim(0), h = image.dim(1), w = image.dim(2);
  } else {
    throw DimensionError("WritePfm: unsupported shape " + ShapeString(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << (c == 3 ? "PF" : "Pf") << "\n" << w << " " << h << "\n-1.0\n";
  const auto v = image.values();
  std::vector<float> row(c * w);
  for (int64_t y = h - 1; y >= 0; --y) {
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) row[x * c + ch] = static_cast<float>(v[(ch * h + y) * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw IoError("failed writing " + path);
}

Tensor ReadPfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  const std::string magic = ReadToken(is);
  int64_t c;
  if (magic == "PF") {
    c = 3;
  } else if (magic == "Pf") {
    c = 1;
  } else {
    throw IoError(path + ": not a PFM file");
  }
  const int64_t w = ParseDim(ReadToken(is));
  const int64_t h = ParseDim(ReadToken(is));
  const double scale = std::stod(ReadToken(is));
  if (scale >= 0) throw IoError(path + ": big-endian PFM not supported");
  std::vector<float> buf(c * h * w);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError(path + ": truncated PFM payload");
  }
  std::vector<double> v(buf.size());
  for (int64_t y = 0; y < h; ++y) {
    const int64_t src_row = h - 1 - y;
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) v[(ch * h + y) * w + x] = buf[(src_row * w + x) * c + ch];
  }
  if (c == 1) return Tensor::FromValues({h, w}, std::move(v));
  return Tensor::FromValues({c, h, w}, std::move(v));
}

void WritePpm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("WritePpm expects [3,H,W]");
  const int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P6\n" << w << " " << h << "\n255\n";
  const auto v = image.values();
  std::vector<unsigned char> buf(3 * h * w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const double p = std::clamp(v[(ch * h + y) * w + x], 0.0, 1.0);
        buf[(y * w + x) * 3 + ch] = static_cast<unsigned char>(std::lround(p * 255.0));
      }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path);
}

Tensor ReadPpm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  if (ReadToken(is) != "P6") throw IoError(path + ": not a binary PPM");
  const int64_t w = ParseDim(ReadToken(is));
  const int64_t h = ParseDim(ReadToken(is));
  if (ReadToken(is) != "255") throw IoError(path + ": only 8-bit PPM supported");
  std::vector<unsigned char> buf(3 * h * w);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw IoError(path + ": truncated PPM payload");
  }
  std::vector<double> v(buf.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) v[(ch * h + y) * w + x] = buf[(y * w + x) * 3 + ch] / 255.0;
  return Tensor::FromValues({3, h, w}, std::move(v));
}

Tensor ReadImage(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm") return ReadPpm(path);
  return ReadPfm(path);
}

void WriteCameraText(const std::string& path, const CameraFile& cam) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r) os << cam.camera.K(r, 0) << " " << cam.camera.K(r, 1) << " " << cam.camera.K(r, 2) << "\n";
  for (int r = 0; r < 3; ++r) {
    os << cam.camera.R(r, 0) << " " << cam.camera.R(r, 1) << " " << cam.camera.R(r, 2) << " " << cam.camera.t(r)
       << "\n";
  }
  os << cam.depth_min << " " << cam.depth_max << "\n";
  if (!os) throw IoError("failed writing " + path);
}

CameraFile ReadCameraText(const std::string& path, int width, int height) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<double> v;
  double x;
  while (is >> x) v.push_back(x);
  if (!is.eof()) throw IoError(path + ": non-numeric content");
  if (v.size() != 23) throw IoError(path + ": expected 23 numbers, found " + std::to_string(v.size()));
  CameraFile cf;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cf.camera.K(r, c) = v[r * 3 + c];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cf.camera.R(r, c) = v[9 + r * 4 + c];
    cf.camera.t(r) = v[9 + r * 4 + 3];
  }
  cf.depth_min = v[21];
  cf.depth_max = v[22];
  cf.camera.width = width;
  cf.camera.height = height;
  return cf;
}

}  // namespace mmvs::io
