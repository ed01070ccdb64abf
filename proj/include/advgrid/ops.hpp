#pragma once

// Layer primitives for the malware CNN: valid-padding stride-1 convolution,
// ReLU, and a dense layer fused with softmax cross-entropy. Activations use
// HWC layout; filters are K x K x Cin x Cout.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "advgrid/tensor.hpp"

namespace advgrid::ops {

namespace detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

struct ConvGeometry {
  std::size_t h, w, cin, k, cout, oh, ow;
  std::size_t patch() const { return k * k * cin; }
  std::size_t positions() const { return oh * ow; }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& filters,
                                  const char* op) {
  auto fail = [&](const std::string& why) {
    throw ShapeError(std::string(op) + ": " + why + " (input " +
                     to_string(input) + ", filters " + to_string(filters) + ")");
  };
  if (input.size() != 3) fail("input must be H x W x Cin");
  if (filters.size() != 4) fail("filters must be K x K x Cin x Cout");
  if (filters[0] != filters[1]) fail("filters must be square");
  if (filters[2] != input[2]) fail("channel mismatch");
  if (filters[0] > input[0] || filters[0] > input[1])
    fail("kernel larger than input");
  ConvGeometry g{input[0], input[1], input[2], filters[0], filters[3], 0, 0};
  g.oh = g.h - g.k + 1;
  g.ow = g.w - g.k + 1;
  return g;
}

/// Unfolds every K x K x Cin receptive field into one row.
inline RowMatrix im2col(const double* input, const ConvGeometry& g) {
  RowMatrix patches(g.positions(), g.patch());
  const std::size_t run = g.k * g.cin;
  for (std::size_t i = 0; i < g.oh; ++i) {
    for (std::size_t j = 0; j < g.ow; ++j) {
      double* row = patches.data() + (i * g.ow + j) * g.patch();
      for (std::size_t kr = 0; kr < g.k; ++kr) {
        const double* src = input + ((i + kr) * g.w + j) * g.cin;
        std::copy(src, src + run, row + kr * run);
      }
    }
  }
  return patches;
}

/// Adjoint of im2col: scatters patch rows back onto the input grid.
inline void col2im_add(const double* patches, const ConvGeometry& g,
                       double* out) {
  const std::size_t run = g.k * g.cin;
  for (std::size_t i = 0; i < g.oh; ++i) {
    for (std::size_t j = 0; j < g.ow; ++j) {
      const double* row = patches + (i * g.ow + j) * g.patch();
      for (std::size_t kr = 0; kr < g.k; ++kr) {
        double* dst = out + ((i + kr) * g.w + j) * g.cin;
        const double* src = row + kr * run;
        for (std::size_t t = 0; t < run; ++t) dst[t] += src[t];
      }
    }
  }
}

}  // namespace detail

/// output[i,j,c] = bias[c] + sum_{k,l,m} input[i+k, j+l, m] * filters[k,l,m,c]
inline Tensor conv2d_forward(const Tensor& input, const Tensor& filters,
                             const Tensor& bias) {
  auto g = detail::conv_geometry(input.shape(), filters.shape(),
                                 "conv2d_forward");
  if (bias.shape() != Shape{g.cout}) {
    throw ShapeError("conv2d_forward: bias " + to_string(bias.shape()) +
                     " does not match filters " + to_string(filters.shape()));
  }
  auto patches = detail::im2col(input.data(), g);
  Tensor out({g.oh, g.ow, g.cout});
  detail::MatrixMap o(out.data(), g.positions(), g.cout);
  detail::ConstMatrixMap f(filters.data(), g.patch(), g.cout);
  o.noalias() = patches * f;
  o.rowwise() += detail::ConstVectorMap(bias.data(), g.cout).transpose();
  return out;
}

struct Conv2dGrads {
  Tensor input;  // empty when not requested
  Tensor filters;
  Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& grad_out,
                                   const Tensor& cached_input,
                                   const Tensor& filters,
                                   bool want_input = true) {
  auto g = detail::conv_geometry(cached_input.shape(), filters.shape(),
                                 "conv2d_backward");
  if (grad_out.shape() != Shape{g.oh, g.ow, g.cout}) {
    throw ShapeError("conv2d_backward: grad_out " + to_string(grad_out.shape()) +
                     " does not match forward output " +
                     to_string(Shape{g.oh, g.ow, g.cout}));
  }
  detail::ConstMatrixMap go(grad_out.data(), g.positions(), g.cout);
  detail::ConstMatrixMap f(filters.data(), g.patch(), g.cout);

  Conv2dGrads grads{Tensor(), Tensor(filters.shape()), Tensor({g.cout})};
  auto patches = detail::im2col(cached_input.data(), g);
  detail::MatrixMap(grads.filters.data(), g.patch(), g.cout).noalias() =
      patches.transpose() * go;
  detail::VectorMap(grads.bias.data(), g.cout) = go.colwise().sum().transpose();

  if (want_input) {
    detail::RowMatrix dpatches = go * f.transpose();
    grads.input = Tensor(cached_input.shape());
    detail::col2im_add(dpatches.data(), g, grads.input.data());
  }
  return grads;
}

/// Input gradients for S independent upstream seeds at once.
/// grad_out: S x H' x W' x Cout  ->  S x H x W x Cin.
inline Tensor conv2d_backward_input_batched(const Tensor& grad_out,
                                            const Shape& input_shape,
                                            const Tensor& filters) {
  auto g = detail::conv_geometry(input_shape, filters.shape(),
                                 "conv2d_backward_input_batched");
  if (grad_out.rank() != 4 || grad_out.dim(1) != g.oh ||
      grad_out.dim(2) != g.ow || grad_out.dim(3) != g.cout) {
    throw ShapeError("conv2d_backward_input_batched: grad_out " +
                     to_string(grad_out.shape()) + " vs filters " +
                     to_string(filters.shape()));
  }
  const std::size_t seeds = grad_out.dim(0);
  detail::ConstMatrixMap go(grad_out.data(), seeds * g.positions(), g.cout);
  detail::ConstMatrixMap f(filters.data(), g.patch(), g.cout);
  detail::RowMatrix dpatches = go * f.transpose();

  Tensor out({seeds, g.h, g.w, g.cin});
  const std::size_t in_size = g.h * g.w * g.cin;
  const std::size_t patch_block = g.positions() * g.patch();
  for (std::size_t s = 0; s < seeds; ++s) {
    detail::col2im_add(dpatches.data() + s * patch_block, g,
                       out.data() + s * in_size);
  }
  return out;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Passes the upstream gradient where the forward input was strictly positive.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
  Tensor::require_same_shape(grad_out, input, "relu_backward");
  Tensor out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input[i] > 0.0)) out[i] = 0.0;
  return out;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : p.values()) peak = std::max(peak, v);
  double total = 0.0;
  for (double& v : p.values()) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : p.values()) v /= total;
  return p;
}

/// -log softmax(logits)[label], via log-sum-exp so it stays finite.
inline double cross_entropy_from_logits(const Tensor& logits,
                                        std::size_t label) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : logits.values()) peak = std::max(peak, v);
  double total = 0.0;
  for (double v : logits.values()) total += std::exp(v - peak);
  return std::log(total) + peak - logits[label];
}

struct DenseXent {
  Tensor logits;
  Tensor probs;
  double loss = 0.0;
};

inline void check_dense(const Tensor& input, const Tensor& weights,
                        const Tensor& bias, const char* op) {
  if (input.rank() != 1 || weights.rank() != 2 || weights.dim(0) != input.dim(0) ||
      bias.shape() != Shape{weights.dim(1)}) {
    throw ShapeError(std::string(op) + ": input " + to_string(input.shape()) +
                     ", weights " + to_string(weights.shape()) + ", bias " +
                     to_string(bias.shape()));
  }
}

inline Tensor dense_logits(const Tensor& input, const Tensor& weights,
                           const Tensor& bias) {
  check_dense(input, weights, bias, "dense_logits");
  const std::size_t d = weights.dim(0), c = weights.dim(1);
  Tensor logits = bias;
  detail::VectorMap(logits.data(), c).noalias() +=
      detail::ConstMatrixMap(weights.data(), d, c).transpose() *
      detail::ConstVectorMap(input.data(), d);
  return logits;
}

inline DenseXent dense_softmax_xent(const Tensor& input, const Tensor& weights,
                                    const Tensor& bias, std::size_t label) {
  check_dense(input, weights, bias, "dense_softmax_xent");
  if (label >= weights.dim(1)) {
    throw std::out_of_range("dense_softmax_xent: label " +
                            std::to_string(label) + " outside [0, " +
                            std::to_string(weights.dim(1)) + ")");
  }
  DenseXent r;
  r.logits = dense_logits(input, weights, bias);
  r.probs = softmax(r.logits);
  r.loss = cross_entropy_from_logits(r.logits, label);
  return r;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Gradients of -log softmax(xW + b)[label]; the logit gradient is probs - onehot.
inline DenseGrads dense_softmax_xent_backward(const Tensor& input,
                                              const Tensor& weights,
                                              const Tensor& probs,
                                              std::size_t label) {
  if (probs.shape() != Shape{weights.dim(1)})
    throw ShapeError("dense_softmax_xent_backward: probs " +
                     to_string(probs.shape()) + " vs weights " +
                     to_string(weights.shape()));
  check_dense(input, weights, probs, "dense_softmax_xent_backward");
  if (label >= weights.dim(1))
    throw std::out_of_range("dense_softmax_xent_backward: label out of range");
  const std::size_t d = weights.dim(0), c = weights.dim(1);
  DenseGrads g{Tensor({d}), Tensor({d, c}), probs};
  g.bias[label] -= 1.0;
  detail::ConstVectorMap dz(g.bias.data(), c);
  detail::ConstVectorMap x(input.data(), d);
  detail::MatrixMap(g.weights.data(), d, c).noalias() = x * dz.transpose();
  detail::VectorMap(g.input.data(), d).noalias() =
      detail::ConstMatrixMap(weights.data(), d, c) * dz;
  return g;
}

}  // namespace advgrid::ops
