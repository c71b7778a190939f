#include "fine_imitate/layers.hpp"

#include <cmath>
#include <random>

namespace fi::numerics {

LayerParams LayerParams::zeros_like() const {
  return LayerParams{Tensor(kernels.dims()), Tensor(biases.dims()), init_seed};
}

LayerParams make_conv_params(std::size_t kernel_size, std::size_t in_channels,
                             std::size_t out_channels, std::uint64_t seed) {
  if (kernel_size % 2 == 0) throw ShapeError("kernel size must be odd, got " + std::to_string(kernel_size));
  LayerParams p{Tensor({kernel_size, kernel_size, in_channels, out_channels}), Tensor({out_channels}), seed};
  const double fan_in = static_cast<double>(kernel_size * kernel_size * in_channels);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (double& w : p.kernels.values()) w = normal(rng);
  return p;
}

void validate(const LayerParams& params) {
  if (params.kernels.rank() != 4) {
    throw ShapeError("kernels must be rank 4 {kh, kw, Cin, Cout}, got " + params.kernels.shape_string());
  }
  if (params.kernel_h() % 2 == 0 || params.kernel_w() % 2 == 0) {
    throw ShapeError("kernel spatial extents must be odd, got " + params.kernels.shape_string());
  }
  if (params.biases.rank() != 1 || params.biases.dim(0) != params.out_channels()) {
    throw ShapeError("biases " + params.biases.shape_string() + " do not match kernels " +
                     params.kernels.shape_string());
  }
}

namespace {

void check_conv_args(const Tensor& input, const LayerParams& params, std::size_t stride) {
  validate(params);
  if (stride != 1 && stride != 2) throw ShapeError("stride must be 1 or 2, got " + std::to_string(stride));
  if (input.rank() != 3 || input.dim(2) != params.in_channels()) {
    throw ShapeError("conv input " + input.shape_string() + " incompatible with kernels " +
                     params.kernels.shape_string());
  }
}

}  // namespace

Tensor conv_forward(const Tensor& input, const LayerParams& params, std::size_t stride) {
  check_conv_args(input, params, stride);
  const std::size_t in_w = input.dim(0), in_h = input.dim(1), cin = input.dim(2);
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w(), cout = params.out_channels();
  const std::size_t out_w = conv_output_extent(in_w, stride), out_h = conv_output_extent(in_h, stride);
  const auto pad_x = static_cast<std::ptrdiff_t>(kw / 2), pad_y = static_cast<std::ptrdiff_t>(kh / 2);

  Tensor out({out_w, out_h, cout});
  const double* in = input.data();
  const double* kern = params.kernels.data();
  const double* bias = params.biases.data();
  for (std::size_t ox = 0; ox < out_w; ++ox) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      double* o = out.data() + (ox * out_h + oy) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_x;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_y;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
          const double* px = in + (static_cast<std::size_t>(ix) * in_h + static_cast<std::size_t>(iy)) * cin;
          const double* w = kern + (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = px[ci];
            const double* wr = w + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * wr[co];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv_backward(const Tensor& input, const LayerParams& params, std::size_t stride,
                        const Tensor& upstream_grad) {
  check_conv_args(input, params, stride);
  const std::size_t in_w = input.dim(0), in_h = input.dim(1), cin = input.dim(2);
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w(), cout = params.out_channels();
  const std::size_t out_w = conv_output_extent(in_w, stride), out_h = conv_output_extent(in_h, stride);
  const std::vector<std::size_t> expected{out_w, out_h, cout};
  if (upstream_grad.dims() != expected) {
    throw ShapeError("upstream gradient " + upstream_grad.shape_string() + " does not match conv output " +
                     shape_string(expected));
  }
  const auto pad_x = static_cast<std::ptrdiff_t>(kw / 2), pad_y = static_cast<std::ptrdiff_t>(kh / 2);

  ConvGrads g{Tensor(input.dims()), params.zeros_like()};
  const double* in = input.data();
  const double* kern = params.kernels.data();
  double* gin = g.grad_input.data();
  double* gk = g.grad_params.kernels.data();
  double* gb = g.grad_params.biases.data();
  for (std::size_t ox = 0; ox < out_w; ++ox) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* up = upstream_grad.data() + (ox * out_h + oy) * cout;
      for (std::size_t co = 0; co < cout; ++co) gb[co] += up[co];
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_x;
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_y;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
          const std::size_t pix = (static_cast<std::size_t>(ix) * in_h + static_cast<std::size_t>(iy)) * cin;
          const double* px = in + pix;
          double* gpx = gin + pix;
          const std::size_t woff = (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* wr = kern + woff + ci * cout;
            double* gwr = gk + woff + ci * cout;
            const double v = px[ci];
            double acc = 0.0;
            for (std::size_t co = 0; co < cout; ++co) {
              acc += wr[co] * up[co];
              gwr[co] += v * up[co];
            }
            gpx[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  require_same_shape(x, upstream, "relu_backward");
  Tensor out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return out;
}

}  // namespace fi::numerics
