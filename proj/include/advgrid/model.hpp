#pragma once

// The malware CNN: a stack of (conv -> ReLU) blocks followed by a dense
// softmax layer. Shapes default to the 28x28 / 64-128-128 / 25-class network;
// smaller architectures exist for gradient-checking in tests.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "advgrid/image.hpp"
#include "advgrid/ops.hpp"
#include "advgrid/tensor.hpp"

namespace advgrid {

struct ConvSpec {
  std::size_t kernel;
  std::size_t channels;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct Architecture {
  std::size_t input_side = kImageSide;
  std::vector<ConvSpec> convs{{14, 64}, {5, 128}, {1, 128}};
  std::size_t classes = kNumFamilies;

  friend bool operator==(const Architecture&, const Architecture&) = default;

  std::size_t input_pixels() const { return input_side * input_side; }

  /// Spatial side after every valid convolution.
  std::size_t final_side() const {
    std::size_t side = input_side;
    for (const auto& c : convs) {
      if (c.kernel == 0 || c.kernel > side)
        throw ShapeError("architecture: kernel " + std::to_string(c.kernel) +
                         " does not fit a " + std::to_string(side) + "-wide map");
      side = side - c.kernel + 1;
    }
    return side;
  }

  std::size_t flatten_size() const {
    const std::size_t side = final_side();
    return side * side * (convs.empty() ? 1 : convs.back().channels);
  }
};

struct ConvParams {
  Tensor filters;  // K x K x Cin x Cout
  Tensor bias;     // Cout
};

/// All trainable tensors; also used for gradients and optimizer state.
struct Parameters {
  std::vector<ConvParams> convs;
  Tensor dense_weights;  // D x C
  Tensor dense_bias;     // C

  static Parameters zeros(const Architecture& arch) {
    Parameters p;
    std::size_t cin = 1;
    for (const auto& c : arch.convs) {
      p.convs.push_back({Tensor({c.kernel, c.kernel, cin, c.channels}),
                         Tensor({c.channels})});
      cin = c.channels;
    }
    p.dense_weights = Tensor({arch.flatten_size(), arch.classes});
    p.dense_bias = Tensor({arch.classes});
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    for (auto& c : convs) {
      f(c.filters);
      f(c.bias);
    }
    f(dense_weights);
    f(dense_bias);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& c : convs) {
      f(c.filters);
      f(c.bias);
    }
    f(dense_weights);
    f(dense_bias);
  }

  /// Calls f(mine, theirs) over matching tensors.
  template <class F>
  void zip(const Parameters& other, F&& f) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      f(convs[i].filters, other.convs.at(i).filters);
      f(convs[i].bias, other.convs.at(i).bias);
    }
    f(dense_weights, other.dense_weights);
    f(dense_bias, other.dense_bias);
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (a.convs.size() != b.convs.size()) return false;
    for (std::size_t i = 0; i < a.convs.size(); ++i)
      if (!(a.convs[i].filters == b.convs[i].filters) ||
          !(a.convs[i].bias == b.convs[i].bias))
        return false;
    return a.dense_weights == b.dense_weights && a.dense_bias == b.dense_bias;
  }
};

struct CnnModel {
  Architecture arch;
  Parameters params;
  std::uint64_t init_seed = 0;
  std::map<std::string, std::string> metadata;  // e.g. epochs, hardening attack

  bool all_finite() const {
    bool ok = true;
    params.for_each([&](const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
  }
};

/// Glorot-uniform weights, zero biases. Conv fan-in/out are K*K*Cin / K*K*Cout.
inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline CnnModel init_model(std::uint64_t seed, Architecture arch = {}) {
  CnnModel m{arch, Parameters::zeros(arch), seed, {}};
  std::mt19937_64 rng(seed);
  auto fill = [&](Tensor& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng);
  };
  for (auto& c : m.params.convs) {
    const auto& s = c.filters.shape();
    fill(c.filters, glorot_bound(s[0] * s[1] * s[2], s[0] * s[1] * s[3]));
  }
  fill(m.params.dense_weights,
       glorot_bound(m.params.dense_weights.dim(0), m.params.dense_weights.dim(1)));
  return m;
}

/// Activations retained for backpropagation.
struct ForwardPass {
  std::vector<Tensor> conv_inputs;  // conv_inputs[0] is the image
  std::vector<Tensor> pre_relu;     // raw conv outputs
  Tensor features;                  // flattened final activation
  Tensor logits;
  Tensor probs;
};

inline void check_input(const CnnModel& m, const Tensor& x) {
  const Shape want{m.arch.input_side, m.arch.input_side, 1};
  if (x.shape() != want)
    throw ShapeError("model input " + to_string(x.shape()) + ", expected " +
                     to_string(want));
}

inline ForwardPass forward(const CnnModel& m, const Tensor& x) {
  check_input(m, x);
  ForwardPass f;
  Tensor act = x;
  for (const auto& layer : m.params.convs) {
    f.conv_inputs.push_back(act);
    f.pre_relu.push_back(ops::conv2d_forward(act, layer.filters, layer.bias));
    act = ops::relu(f.pre_relu.back());
  }
  f.features = act.reshaped({act.size()});
  f.logits = ops::dense_logits(f.features, m.params.dense_weights, m.params.dense_bias);
  f.probs = ops::softmax(f.logits);
  return f;
}

inline double loss_of(const ForwardPass& f, std::size_t label) {
  return ops::cross_entropy_from_logits(f.logits, label);
}

/// Adds d(loss)/d(params) for one example into `grads`.
inline void accumulate_gradients(const CnnModel& m, const ForwardPass& f,
                                 std::size_t label, Parameters& grads) {
  auto dense = ops::dense_softmax_xent_backward(f.features, m.params.dense_weights,
                                                f.probs, label);
  grads.dense_weights += dense.weights;
  grads.dense_bias += dense.bias;
  Tensor upstream = dense.input.reshaped(f.pre_relu.back().shape());
  for (std::size_t l = m.params.convs.size(); l-- > 0;) {
    upstream = ops::relu_backward(upstream, f.pre_relu[l]);
    auto g = ops::conv2d_backward(upstream, f.conv_inputs[l],
                                  m.params.convs[l].filters, l > 0);
    grads.convs[l].filters += g.filters;
    grads.convs[l].bias += g.bias;
    if (l > 0) upstream = std::move(g.input);
  }
}

/// Backpropagates S logit-space seeds (S x C) to the input: S x (H*W).
inline Tensor backward_to_input(const CnnModel& m, const ForwardPass& f,
                                const Tensor& logit_seeds) {
  const std::size_t classes = m.arch.classes;
  if (logit_seeds.rank() != 2 || logit_seeds.dim(1) != classes)
    throw ShapeError("backward_to_input: seeds " + to_string(logit_seeds.shape()));
  const std::size_t seeds = logit_seeds.dim(0);
  const std::size_t d = f.features.size();

  const auto& last = f.pre_relu.back().shape();
  Tensor upstream({seeds, last[0], last[1], last[2]});
  ops::detail::MatrixMap(upstream.data(), seeds, d).noalias() =
      ops::detail::ConstMatrixMap(logit_seeds.data(), seeds, classes) *
      ops::detail::ConstMatrixMap(m.params.dense_weights.data(), d, classes)
          .transpose();

  for (std::size_t l = m.params.convs.size(); l-- > 0;) {
    const Tensor& gate = f.pre_relu[l];
    for (std::size_t s = 0; s < seeds; ++s) {
      double* block = upstream.data() + s * gate.size();
      for (std::size_t i = 0; i < gate.size(); ++i)
        if (!(gate[i] > 0.0)) block[i] = 0.0;
    }
    upstream = ops::conv2d_backward_input_batched(
        upstream, f.conv_inputs[l].shape(), m.params.convs[l].filters);
  }
  return upstream.reshaped({seeds, m.arch.input_pixels()});
}

/// d loss(x, label) / dx, same shape as x.
inline Tensor input_gradient(const CnnModel& m, const Tensor& x,
                             std::size_t label) {
  if (label >= m.arch.classes) throw std::out_of_range("input_gradient: label");
  auto f = forward(m, x);
  Tensor seed({1, m.arch.classes});
  for (std::size_t c = 0; c < m.arch.classes; ++c) seed[c] = f.probs[c];
  seed[label] -= 1.0;
  return backward_to_input(m, f, seed).reshaped(x.shape());
}

inline Tensor input_gradient(const CnnModel& m, const GrayImage& x,
                             std::size_t label) {
  return input_gradient(m, x.pixels, label);
}

enum class JacobianMode { softmax, logits };

struct JacobianResult {
  Tensor jacobian;  // C x (H*W)
  Tensor probs;
};

/// Row c = d F_c / dx, with F the softmax output (or the logits).
inline JacobianResult class_jacobian_with_probs(
    const CnnModel& m, const Tensor& x, JacobianMode mode = JacobianMode::softmax) {
  auto f = forward(m, x);
  const std::size_t c = m.arch.classes;
  Tensor seeds({c, c});
  for (std::size_t i = 0; i < c; ++i) seeds.at(i, i) = 1.0;
  Tensor jz = backward_to_input(m, f, seeds);
  if (mode == JacobianMode::logits) return {std::move(jz), f.probs};

  // dF/dx = (diag(p) - p p^T) dz/dx
  Eigen::Map<const Eigen::VectorXd> p(f.probs.data(), c);
  ops::detail::RowMatrix softmax_jac = -p * p.transpose();
  softmax_jac.diagonal() += p;
  Tensor jf(jz.shape());
  ops::detail::MatrixMap(jf.data(), c, jz.dim(1)).noalias() =
      softmax_jac * ops::detail::ConstMatrixMap(jz.data(), c, jz.dim(1));
  return {std::move(jf), f.probs};
}

inline Tensor class_jacobian(const CnnModel& m, const Tensor& x,
                             JacobianMode mode = JacobianMode::softmax) {
  return class_jacobian_with_probs(m, x, mode).jacobian;
}

inline Tensor class_jacobian(const CnnModel& m, const GrayImage& x,
                             JacobianMode mode = JacobianMode::softmax) {
  return class_jacobian(m, x.pixels, mode);
}

/// First index of the maximum, so ties resolve toward the lower class.
inline std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(
      std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

struct Prediction {
  Tensor probs;
  std::size_t label = 0;
};

inline Prediction predict(const CnnModel& m, const Tensor& x) {
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::domain_error("predict: input pixel outside [0,1]");
  auto f = forward(m, x);
  const std::size_t label = argmax(f.probs);
  return {std::move(f.probs), label};
}

inline Prediction predict(const CnnModel& m, const GrayImage& x) {
  return predict(m, x.pixels);
}

}  // namespace advgrid
