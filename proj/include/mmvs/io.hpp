#pragma once

#include <string>

#include "mmvs/geometry.hpp"
#include "mmvs/tensor.hpp"

namespace mmvs::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PFM: "PF" (3 channels) or "Pf" (1 channel), little-endian, rows stored
// bottom to top. Tensors are [C,H,W] (C = 1 or 3) or [H,W].
void WritePfm(const std::string& path, const Tensor& image);
Tensor ReadPfm(const std::string& path);

// Binary 8-bit PPM of a [3,H,W] image in [0,1].
void WritePpm(const std::string& path, const Tensor& image);
Tensor ReadPpm(const std::string& path);

// Reads .pfm or .ppm by extension.
Tensor ReadImage(const std::string& path);

struct CameraFile {
  Camera camera;
  double depth_min = 0.0;
  double depth_max = 0.0;
};

// Plain text: 3 lines of K, 3 lines of [R|t], then "depth_min depth_max".
// Width and height are not stored; callers take them from the image.
void WriteCameraText(const std::string& path, const CameraFile& cam);
CameraFile ReadCameraText(const std::string& path, int width, int height);

}  // namespace mmvs::io
