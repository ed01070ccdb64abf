#pragma once

// Proactive defense: adversarial training, and cross-attack robustness grids.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advgrid/attacks.hpp"
#include "advgrid/train.hpp"

namespace advgrid {

struct DefenseConfig {
  AttackSpec attack;
  double mix_ratio = 0.5;            // share of each batch replaced by attacks
  bool regenerate_every_batch = true;  // attack current weights, else the initial ones
  bool from_scratch = false;         // re-initialize before hardening
  std::uint64_t init_seed = 0;       // used when from_scratch
  TrainConfig train;
  std::size_t jobs = 1;

  void validate() const {
    if (!(mix_ratio > 0.0 && mix_ratio <= 1.0))
      throw std::invalid_argument("defense: mix_ratio must be in (0,1]");
    attack.validate();
    train.validate();
  }

  std::string describe() const {
    std::ostringstream os;
    os << "adversarial-training attack={" << attack.describe() << "} mix=" << mix_ratio
       << " regenerate=" << (regenerate_every_batch ? "batch" : "initial")
       << " start=" << (from_scratch ? "scratch" : "trained");
    return os.str();
  }
};

struct DefenseResult {
  CnnModel model;
  TrainTrace trace;
  std::size_t attack_fallbacks = 0;
};

inline std::size_t adversarial_share(std::size_t batch, double mix_ratio) {
  const auto n = static_cast<std::size_t>(std::lround(mix_ratio * static_cast<double>(batch)));
  return std::clamp<std::size_t>(n, 1, batch);
}

/// Retrains on batches whose first round(mix_ratio * |batch|) (shuffled)
/// examples are replaced by adversarial versions. Never sees test data.
inline DefenseResult adversarial_train(const CnnModel& start,
                                       const LabeledDataset& train_set,
                                       const DefenseConfig& cfg,
                                       const ProgressSink& sink = {}) {
  cfg.validate();
  DefenseResult out;
  out.model = cfg.from_scratch ? init_model(cfg.init_seed, start.arch) : start;
  const CnnModel reference = out.model;

  BatchHook hook = [&](const CnnModel& current, std::span<const std::size_t> idx,
                       std::vector<Tensor>& inputs, std::vector<char>& replaced,
                       EpochStats& stats) {
    const CnnModel& victim = cfg.regenerate_every_batch ? current : reference;
    const std::size_t n_adv = adversarial_share(idx.size(), cfg.mix_ratio);
    std::vector<std::optional<Tensor>> generated(n_adv);
    parallel_for(n_adv, cfg.jobs, [&](std::size_t k) {
      const auto& ex = train_set.examples[idx[k]];
      try {
        generated[k] = run_attack(victim, ex, *ex.label, cfg.attack).adversarial.pixels;
      } catch (const std::invalid_argument&) {
        // e.g. nothing perturbable under the mask: keep the clean example
      }
    });
    for (std::size_t k = 0; k < n_adv; ++k) {
      if (!generated[k]) {
        ++stats.attack_fallbacks;
        continue;
      }
      inputs[k] = std::move(*generated[k]);
      replaced[k] = 1;
      ++stats.adversarial_examples;
    }
  };
  out.trace = detail::run_training(out.model, train_set, cfg.train, sink, hook);
  for (const auto& e : out.trace) out.attack_fallbacks += e.attack_fallbacks;
  out.model.metadata["hardened_with"] = cfg.describe();
  return out;
}

struct RobustnessMatrix {
  std::vector<std::string> models;
  std::vector<std::string> attacks;
  std::vector<std::vector<double>> accuracy;  // [model][attack]
};

inline RobustnessMatrix robustness_matrix(
    const std::vector<std::pair<std::string, const CnnModel*>>& models,
    const LabeledDataset& test_set, const std::vector<AttackSpec>& specs,
    std::size_t jobs = 1) {
  if (specs.empty()) throw std::invalid_argument("robustness_matrix: no attack specs");
  if (models.empty()) throw std::invalid_argument("robustness_matrix: no models");
  RobustnessMatrix m;
  for (const auto& s : specs) m.attacks.push_back(s.describe());
  for (const auto& [name, model] : models) {
    m.models.push_back(name);
    auto& row = m.accuracy.emplace_back();
    for (const auto& s : specs)
      row.push_back(attack_batch(*model, test_set.examples, s, jobs).summary.adversarial_accuracy);
  }
  return m;
}

inline RobustnessMatrix robustness_matrix(const CnnModel& model,
                                          const LabeledDataset& test_set,
                                          const std::vector<AttackSpec>& specs,
                                          std::size_t jobs = 1) {
  return robustness_matrix({{"model", &model}}, test_set, specs, jobs);
}

}  // namespace advgrid
