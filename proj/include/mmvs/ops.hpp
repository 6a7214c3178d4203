#pragma once

#include <array>
#include <span>

#include "mmvs/tensor.hpp"

// Differentiable primitives. Every op records a backward closure when grad
// mode is on and an input requires a gradient.
namespace mmvs::ops {

// Binary elementwise ops. The smaller operand may have a shape equal to the
// trailing dimensions of the larger one (e.g. [H,W] against [C,H,W]); its
// gradient is reduced over the broadcast leading dimensions.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Div(const Tensor& a, const Tensor& b);

Tensor AddScalar(const Tensor& a, double s);
Tensor MulScalar(const Tensor& a, double s);
Tensor Neg(const Tensor& a);

Tensor Abs(const Tensor& a);
Tensor Relu(const Tensor& a);
Tensor Sigmoid(const Tensor& a);
Tensor Exp(const Tensor& a);
// Natural log; input must be strictly positive.
Tensor Log(const Tensor& a);
Tensor Square(const Tensor& a);

Tensor Sum(const Tensor& a);
Tensor Mean(const Tensor& a);
// Reduce over axis 0: [N, ...] -> [...].
Tensor SumLeading(const Tensor& a);
Tensor MeanLeading(const Tensor& a);

// Concatenation along axis 0; trailing dimensions must agree.
Tensor Concat(std::span<const Tensor> parts);
// Slice index i of axis 0: [N, ...] -> [...].
Tensor Select(const Tensor& a, int64_t i);
// [C, S...] -> [C, depth, S...] repeating along the new axis 1.
Tensor BroadcastDepth(const Tensor& a, int64_t depth);

// Cross-correlation over [C,D,H,W] with kernel [O,C,kd,kh,kw] and bias [O].
Tensor Conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::array<int, 3> stride, std::array<int, 3> padding);
// [C,H,W] with kernel [O,C,kh,kw] and bias [O].
Tensor Conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

// Nearest-neighbour x2 upsampling of every spatial dimension of [C, S...].
Tensor UpsampleNearest2x(const Tensor& x);

// Per-channel normalization over all spatial positions of [C, S...] with a
// learnable scale and shift of shape [C].
Tensor SpatialNorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Softmax along axis 0 of [D, S...], max-subtracted.
Tensor SoftmaxLeading(const Tensor& x);

// Expectation of depth_values under prob [D, H, W] -> [H, W].
Tensor SoftArgmin(const Tensor& prob, std::span<const double> depth_values);

struct SampleResult {
  Tensor values;  // [C, S...]
  Tensor valid;   // [S...], 1 where the sample is inside the image
};

// Bilinear interpolation of image [C,H,W] at continuous pixel coordinates
// coords [2, S...] (x first, y second; pixel centres at integers). A sample is
// valid iff 0 <= x <= W-1 and 0 <= y <= H-1, i.e. every neighbour carrying a
// nonzero weight is inside; invalid samples are 0 and carry no gradient.
SampleResult BilinearSample(const Tensor& image, const Tensor& coords);

// 3x3 box mean over the last two dimensions with reflection padding.
Tensor BoxFilter3(const Tensor& x);

// Forward differences along the last (x) or second-to-last (y) dimension.
Tensor DiffX(const Tensor& x);
Tensor DiffY(const Tensor& x);

// Average pooling of [C,H,W] with a square window and equal stride.
Tensor AvgPool(const Tensor& x, int factor);

}  // namespace mmvs::ops
