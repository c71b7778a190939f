#pragma once

#include <cstdint>

#include "fine_imitate/tensor.hpp"

namespace fi::numerics {

/// Weights of one convolution: kernels {kh, kw, Cin, Cout} and biases {Cout}.
struct LayerParams {
  Tensor kernels;
  Tensor biases;
  std::uint64_t init_seed = 0;

  std::size_t kernel_h() const { return kernels.dim(0); }
  std::size_t kernel_w() const { return kernels.dim(1); }
  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }

  /// Zero-filled params with the same shapes.
  LayerParams zeros_like() const;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// He (fan-in) normal initialisation with zero biases. Deterministic in `seed`.
LayerParams make_conv_params(std::size_t kernel_size, std::size_t in_channels,
                             std::size_t out_channels, std::uint64_t seed);

/// Checks the LayerParams invariants: odd square-ish kernels, bias length Cout.
void validate(const LayerParams& params);

/// Output extent of a same-padded convolution along one axis.
constexpr std::size_t conv_output_extent(std::size_t in, std::size_t stride) {
  return (in + stride - 1) / stride;
}

/// 2-D convolution over a {W, H, Cin} map with zero "same" padding (k / 2 on
/// each side). Output is {ceil(W / stride), ceil(H / stride), Cout}.
Tensor conv_forward(const Tensor& input, const LayerParams& params, std::size_t stride);

struct ConvGrads {
  Tensor grad_input;
  LayerParams grad_params;
};

ConvGrads conv_backward(const Tensor& input, const LayerParams& params, std::size_t stride,
                        const Tensor& upstream_grad);

Tensor relu_forward(const Tensor& x);

/// Passes `upstream` where the forward input was strictly positive.
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

}  // namespace fi::numerics
