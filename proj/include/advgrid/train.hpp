#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advgrid/dataset.hpp"
#include "advgrid/model.hpp"

namespace advgrid {

enum class OptimizerKind { sgd, momentum };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::momentum;
  std::uint64_t shuffle_seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("train: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("train: momentum must be in [0,1)");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  // Populated by adversarial training only.
  double clean_loss = 0.0;
  double adversarial_loss = 0.0;
  std::size_t adversarial_examples = 0;
  std::size_t attack_fallbacks = 0;
};

using TrainTrace = std::vector<EpochStats>;
using ProgressSink = std::function<void(const EpochStats&)>;

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SGD, optionally with heavy-ball momentum: v = mu*v - lr*g; w += v.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const Architecture& arch)
      : cfg_(cfg), velocity_(Parameters::zeros(arch)) {}

  void apply(Parameters& params, const Parameters& grads) {
    if (cfg_.optimizer == OptimizerKind::sgd) {
      params.zip(grads, [&](Tensor& w, const Tensor& g) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg_.learning_rate * g[i];
      });
      return;
    }
    velocity_.zip(grads, [&](Tensor& v, const Tensor& g) {
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = cfg_.momentum * v[i] - cfg_.learning_rate * g[i];
    });
    params.zip(velocity_, [](Tensor& w, const Tensor& v) { w += v; });
  }

 private:
  TrainConfig cfg_;
  Parameters velocity_;
};

/// Lets a caller swap batch inputs before the gradient step. `inputs` starts as
/// the clean images; `replaced[i]` marks substituted entries.
using BatchHook = std::function<void(const CnnModel& current,
                                     std::span<const std::size_t> indices,
                                     std::vector<Tensor>& inputs,
                                     std::vector<char>& replaced, EpochStats&)>;

namespace detail {

inline TrainTrace run_training(CnnModel& model, const LabeledDataset& data,
                               const TrainConfig& cfg, const ProgressSink& sink,
                               const BatchHook& hook) {
  cfg.validate();
  if (data.examples.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& e : data.examples)
    if (!e.label || *e.label >= model.arch.classes)
      throw std::invalid_argument("train: example label missing or out of range");

  Optimizer opt(cfg, model.arch);
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  TrainTrace trace;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0, clean_sum = 0.0, adv_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0, batch = 0; start < order.size();
         start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<Tensor> inputs;
      inputs.reserve(idx.size());
      for (auto i : idx) inputs.push_back(data.examples[i].pixels);
      std::vector<char> replaced(idx.size(), 0);
      if (hook) hook(model, idx, inputs, replaced, stats);

      Parameters grads = Parameters::zeros(model.arch);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::size_t label = *data.examples[idx[k]].label;
        auto f = forward(model, inputs[k]);
        const double loss = loss_of(f, label);
        if (!std::isfinite(loss))
          throw DivergenceError("training diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + ", batch " +
                                std::to_string(batch));
        loss_sum += loss;
        (replaced[k] ? adv_sum : clean_sum) += loss;
        if (argmax(f.probs) == label) ++correct;
        accumulate_gradients(model, f, label, grads);
      }
      const double scale = 1.0 / static_cast<double>(idx.size());
      grads.for_each([&](Tensor& t) { t *= scale; });
      opt.apply(model.params, grads);
    }

    const double n = static_cast<double>(order.size());
    stats.mean_loss = loss_sum / n;
    stats.train_accuracy = static_cast<double>(correct) / n;
    const double n_adv = static_cast<double>(stats.adversarial_examples);
    stats.adversarial_loss = n_adv > 0 ? adv_sum / n_adv : 0.0;
    stats.clean_loss = n - n_adv > 0 ? clean_sum / (n - n_adv) : 0.0;
    if (!model.all_finite())
      throw DivergenceError("training diverged: non-finite parameters after epoch " +
                            std::to_string(epoch));
    trace.push_back(stats);
    if (sink) sink(stats);
  }
  return trace;
}

}  // namespace detail

/// Mini-batch training on categorical cross-entropy; updates `model` in place.
inline TrainTrace train(CnnModel& model, const LabeledDataset& data,
                        const TrainConfig& cfg, const ProgressSink& sink = {}) {
  return detail::run_training(model, data, cfg, sink, {});
}

inline double evaluate(const CnnModel& model, const LabeledDataset& test) {
  if (test.examples.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::size_t correct = 0;
  for (const auto& e : test.examples)
    if (predict(model, e.pixels).label == *e.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace advgrid
