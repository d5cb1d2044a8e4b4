#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "bvxl/tensor.h"

namespace bvxl {

using Extent3 = std::array<std::size_t, 3>;

/// Geometry of one dilated volumetric convolution layer.
///
/// The kernel index set is {-a..a} x {-b..b} x {-c..c} for kernel_bounds (a, b, c).
/// Output voxel v reads input voxels v - dilation * t, shifted by the padding, so
/// with padding == dilation * a the spatial extent is preserved.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 kernel_bounds{1, 1, 1};
  std::size_t dilation = 1;
  std::size_t padding = 1;

  Extent3 kernel_extent() const {
    return {2 * kernel_bounds[0] + 1, 2 * kernel_bounds[1] + 1, 2 * kernel_bounds[2] + 1};
  }
  std::size_t taps() const {
    const auto k = kernel_extent();
    return k[0] * k[1] * k[2];
  }
  Shape weight_shape() const {
    const auto k = kernel_extent();
    return {out_channels, in_channels, k[0], k[1], k[2]};
  }
  /// Throws ShapeError naming the axis when an output extent would be non-positive.
  Extent3 output_extent(const Extent3& input) const;
};

/// out[f, v] = bias[f] + sum_c sum_t w[f, c, t] * h[c, v - l t] with zero padding.
///
/// input: [Cin, D, H, W]; weights: [F, Cin, 2a+1, 2b+1, 2c+1]; bias: [F] or undefined.
/// Implemented as im2col followed by a matrix product, chunked along the output
/// depth axis to bound the column buffer. Single-threaded and deterministic.
template <typename T>
BasicTensor<T> dilated_conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, const ConvSpec& spec);

/// Gaussian sample of a convolution with independent weights: out = (w_mean *_l h) +
/// sqrt(w_var *_l h^2) * noise, with noise laid out like the output [F, D', H', W'].
/// Both moments share one column pass. Differentiable in input, w_mean and w_var;
/// the variance gradient is zero wherever the output variance is zero.
template <typename T>
BasicTensor<T> conv3d_gaussian_sample(const BasicTensor<T>& input, const BasicTensor<T>& w_mean,
                                      const BasicTensor<T>& w_var, const ConvSpec& spec, std::vector<T> noise);

/// Input extent that influences one output voxel of the stacked layers.
Extent3 receptive_field(std::span<const ConvSpec> specs);

}  // namespace bvxl
