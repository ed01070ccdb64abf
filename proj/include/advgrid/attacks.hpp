#pragma once

// White-box evasion attacks on the malware classifier. Every attack edits only
// the pixels its perturbation mask allows and keeps the image inside [0,1].
//
//   fgsm: x' = clip[0,1](x + eps * sign(grad_x loss(x, label)))
//   bim : x_{n+1} = clip_{x,eps}(x_n + step * sign(grad_x loss(x_n, label)))
//   jsma: repeatedly raise the pixel pair with the largest saliency toward a
//         target class until it wins or the gamma budget is spent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advgrid/image.hpp"
#include "advgrid/model.hpp"
#include "advgrid/parallel.hpp"

namespace advgrid {

enum class AttackKind { fgsm, bim, jsma };
enum class TargetRule { least_likely, round_robin };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::bim: return "bim";
    case AttackKind::jsma: return "jsma";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "bim") return AttackKind::bim;
  if (s == "jsma") return AttackKind::jsma;
  throw std::invalid_argument("unknown attack '" + s + "'");
}

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 0.1;
  std::size_t iterations = 10;       // bim
  std::optional<double> step_size;   // bim; defaults to epsilon / 4
  double gamma = 0.1;                // jsma: max fraction of features changed
  double theta = 1.0;                // jsma: per-feature change
  std::optional<std::size_t> target; // jsma
  TargetRule target_rule = TargetRule::least_likely;
  MaskPolicy mask = ZeroRegion{};
  JacobianMode jacobian = JacobianMode::softmax;

  double bim_step() const { return step_size.value_or(epsilon / 4.0); }

  /// Maximum number of distinct pixels jsma may change.
  std::size_t feature_budget() const {
    // Guard against 0.1 * 784 = 78.40000000000001 style representation noise.
    const double raw = gamma * static_cast<double>(kImagePixels);
    return static_cast<std::size_t>(std::ceil(raw - 1e-9));
  }

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("attack: epsilon must be >= 0");
    if (kind == AttackKind::bim) {
      if (iterations < 1) throw std::invalid_argument("bim: iterations must be >= 1");
      if (!(bim_step() > 0.0) && epsilon > 0.0)
        throw std::invalid_argument("bim: step_size must be > 0");
    }
    if (kind == AttackKind::jsma) {
      if (!(gamma > 0.0 && gamma <= 1.0))
        throw std::invalid_argument("jsma: gamma must be in (0,1]");
      if (theta == 0.0 || !std::isfinite(theta))
        throw std::invalid_argument("jsma: theta must be nonzero");
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == AttackKind::jsma) {
      os << " gamma=" << gamma << " theta=" << theta << " target="
         << (target ? std::to_string(*target)
                    : (target_rule == TargetRule::least_likely ? "least-likely"
                                                               : "round-robin"))
         << " jacobian=" << (jacobian == JacobianMode::softmax ? "softmax" : "logits");
    } else {
      os << " eps=" << epsilon;
      if (kind == AttackKind::bim) os << " iters=" << iterations << " step=" << bim_step();
    }
    os << " mask=" << to_string(mask);
    return os.str();
  }
};

struct AdvResult {
  GrayImage adversarial;
  bool success = false;
  std::size_t features_perturbed = 0;
  double linf = 0.0;
  double l2 = 0.0;
  std::size_t queries = 0;  // forward + backward passes
  std::size_t prediction = 0;
  std::optional<std::size_t> target;
  std::vector<double> loss_trace;  // bim: loss at x_0 .. x_n
  std::optional<std::string> error;
};

namespace detail {

inline void finalize(const GrayImage& x, AdvResult& r) {
  r.features_perturbed = 0;
  r.linf = 0.0;
  double sq = 0.0;
  for (std::size_t p = 0; p < kImagePixels; ++p) {
    const double d = r.adversarial[p] - x[p];
    if (d != 0.0) ++r.features_perturbed;
    r.linf = std::max(r.linf, std::abs(d));
    sq += d * d;
  }
  r.l2 = std::sqrt(sq);
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void check_label(const CnnModel& m, std::size_t label) {
  if (label >= m.arch.classes)
    throw std::out_of_range("attack: label " + std::to_string(label) + " out of range");
}

}  // namespace detail

inline AdvResult fgsm(const CnnModel& model, const GrayImage& x, std::size_t label,
                      const AttackSpec& spec) {
  spec.validate();
  detail::check_label(model, label);
  const auto mask = derive_mask(x, spec.mask);
  AdvResult r;
  r.adversarial = x;
  const Tensor grad = input_gradient(model, x, label);
  for (std::size_t p = 0; p < kImagePixels; ++p) {
    if (!mask.allowed(p)) continue;
    const double s = detail::sign(grad[p]);
    if (s == 0.0) continue;
    r.adversarial[p] = std::clamp(x[p] + spec.epsilon * s, 0.0, 1.0);
  }
  r.prediction = predict(model, r.adversarial).label;
  r.queries = 3;
  r.success = r.prediction != label;
  detail::finalize(x, r);
  return r;
}

inline AdvResult bim(const CnnModel& model, const GrayImage& x, std::size_t label,
                     const AttackSpec& spec) {
  spec.validate();
  detail::check_label(model, label);
  const auto mask = derive_mask(x, spec.mask);
  const double step = spec.bim_step();
  std::vector<double> lo(kImagePixels), hi(kImagePixels);
  for (std::size_t p = 0; p < kImagePixels; ++p) {
    lo[p] = std::max(0.0, x[p] - spec.epsilon);
    hi[p] = std::min(1.0, x[p] + spec.epsilon);
  }

  AdvResult r;
  r.adversarial = x;
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    auto f = forward(model, r.adversarial.pixels);
    r.loss_trace.push_back(loss_of(f, label));
    Tensor seed({1, model.arch.classes});
    for (std::size_t c = 0; c < model.arch.classes; ++c) seed[c] = f.probs[c];
    seed[label] -= 1.0;
    const Tensor grad = backward_to_input(model, f, seed);
    r.queries += 2;
    for (std::size_t p = 0; p < kImagePixels; ++p) {
      if (!mask.allowed(p)) continue;
      const double s = detail::sign(grad[p]);
      if (s == 0.0) continue;
      r.adversarial[p] = std::clamp(r.adversarial[p] + step * s, lo[p], hi[p]);
    }
  }
  auto f = forward(model, r.adversarial.pixels);
  r.loss_trace.push_back(loss_of(f, label));
  r.prediction = argmax(f.probs);
  r.queries += 1;
  r.success = r.prediction != label;
  detail::finalize(x, r);
  return r;
}

// ---------------------------------------------------------------------------
// JSMA

struct SaliencyPick {
  std::size_t first;
  std::optional<std::size_t> second;  // absent only when a single pixel is eligible
  double score;
};

/// Best pixel pair under the saliency rule. With theta > 0 (increasing), a pair
/// (p,q) qualifies when alpha = dF_t/dp + dF_t/dq > 0 and
/// beta = sum_{c != t} (dF_c/dp + dF_c/dq) < 0, scoring alpha * |beta|.
/// Decreasing mode mirrors the signs. Ties keep the lexicographically first pair.
inline std::optional<SaliencyPick> select_saliency_pair(
    const Tensor& jacobian, std::size_t target,
    const std::vector<std::size_t>& eligible, bool increasing = true) {
  const std::size_t classes = jacobian.dim(0);
  const std::size_t pixels = jacobian.dim(1);
  std::vector<double> a(eligible.size()), b(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    const std::size_t p = eligible[i];
    a[i] = jacobian[target * pixels + p];
    double others = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      if (c != target) others += jacobian[c * pixels + p];
    b[i] = others;
  }
  auto score_of = [&](double alpha, double beta) -> std::optional<double> {
    if (increasing) {
      if (alpha > 0.0 && beta < 0.0) return alpha * -beta;
    } else if (alpha < 0.0 && beta > 0.0) {
      return -alpha * beta;
    }
    return std::nullopt;
  };

  std::optional<SaliencyPick> best;
  if (eligible.size() == 1) {
    if (auto s = score_of(a[0], b[0])) best = SaliencyPick{eligible[0], std::nullopt, *s};
    return best;
  }
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    for (std::size_t j = i + 1; j < eligible.size(); ++j) {
      auto s = score_of(a[i] + a[j], b[i] + b[j]);
      if (s && (!best || *s > best->score))
        best = SaliencyPick{eligible[i], eligible[j], *s};
    }
  }
  return best;
}

/// Class with the smallest probability other than `label` (lowest index on ties).
inline std::size_t least_likely_class(const Tensor& probs, std::size_t label) {
  std::size_t best = label == 0 ? 1 : 0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (c != label && probs[c] < probs[best]) best = c;
  return best;
}

inline AdvResult jsma(const CnnModel& model, const GrayImage& x, std::size_t label,
                      const AttackSpec& spec) {
  spec.validate();
  detail::check_label(model, label);
  const auto mask = derive_mask(x, spec.mask);
  const std::size_t classes = model.arch.classes;
  const bool increasing = spec.theta > 0.0;
  const std::size_t budget = spec.feature_budget();

  AdvResult r;
  r.adversarial = x;
  std::vector<char> modified(kImagePixels, 0);
  std::size_t changed = 0;

  auto jr = class_jacobian_with_probs(model, x.pixels, spec.jacobian);
  r.queries += 1 + classes;
  std::size_t target;
  if (spec.target) {
    target = *spec.target;
    if (target >= classes) throw std::out_of_range("jsma: target out of range");
    if (target == label) throw std::invalid_argument("jsma: target equals true label");
  } else if (spec.target_rule == TargetRule::round_robin) {
    target = (label + 1) % classes;
  } else {
    target = least_likely_class(jr.probs, label);
  }
  r.target = target;

  while (true) {
    r.prediction = argmax(jr.probs);
    if (r.prediction == target) break;

    std::vector<std::size_t> eligible;
    for (std::size_t p = 0; p < kImagePixels; ++p) {
      if (!mask.allowed(p)) continue;
      const double v = r.adversarial[p];
      if (increasing ? v < 1.0 : v > 0.0) eligible.push_back(p);
    }
    auto pick = select_saliency_pair(jr.jacobian, target, eligible, increasing);
    if (!pick) break;

    std::vector<std::size_t> chosen{pick->first};
    if (pick->second) chosen.push_back(*pick->second);
    std::size_t fresh = 0;
    for (auto p : chosen) fresh += modified[p] ? 0 : 1;
    if (changed + fresh > budget) break;

    for (auto p : chosen) {
      r.adversarial[p] = std::clamp(r.adversarial[p] + spec.theta, 0.0, 1.0);
      if (!modified[p]) {
        modified[p] = 1;
        ++changed;
      }
    }
    jr = class_jacobian_with_probs(model, r.adversarial.pixels, spec.jacobian);
    r.queries += 1 + classes;
  }
  r.success = r.prediction == target;
  detail::finalize(x, r);
  return r;
}

inline AdvResult run_attack(const CnnModel& model, const GrayImage& x,
                            std::size_t label, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::fgsm: return fgsm(model, x, label, spec);
    case AttackKind::bim: return bim(model, x, label, spec);
    case AttackKind::jsma: return jsma(model, x, label, spec);
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Batches

struct AttackSummary {
  std::size_t count = 0;
  std::size_t failures = 0;          // examples the attack rejected
  double adversarial_accuracy = 0.0; // model still predicts the true label
  double mean_features_pct = 0.0;    // features perturbed, percent of 784
  double mean_linf = 0.0;
};

struct BatchOutcome {
  std::vector<AdvResult> results;  // same order as the input
  AttackSummary summary;
};

/// Attacks every example. An example the attack rejects (e.g. empty mask) is
/// kept unmodified with `error` set; the call throws only if all of them fail.
inline BatchOutcome attack_batch(const CnnModel& model,
                                 const std::vector<GrayImage>& examples,
                                 const AttackSpec& spec, std::size_t jobs = 1) {
  if (examples.empty()) throw std::invalid_argument("attack_batch: no examples");
  spec.validate();
  BatchOutcome out;
  out.results.resize(examples.size());
  parallel_for(examples.size(), jobs, [&](std::size_t i) {
    const auto& x = examples[i];
    if (!x.label) throw std::invalid_argument("attack_batch: unlabeled example");
    AttackSpec local = spec;
    if (spec.kind == AttackKind::jsma && !spec.target &&
        spec.target_rule == TargetRule::round_robin) {
      const std::size_t c = model.arch.classes;
      local.target = (*x.label + 1 + i % (c - 1)) % c;
    }
    try {
      out.results[i] = run_attack(model, x, *x.label, local);
    } catch (const std::exception& e) {
      AdvResult r;
      r.adversarial = x;
      r.prediction = predict(model, x).label;
      r.error = e.what();
      out.results[i] = std::move(r);
    }
  });

  auto& s = out.summary;
  s.count = examples.size();
  std::size_t still_correct = 0;
  double feat = 0.0, linf = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& r = out.results[i];
    if (r.error) ++s.failures;
    if (r.prediction == *examples[i].label) ++still_correct;
    feat += static_cast<double>(r.features_perturbed);
    linf += r.linf;
  }
  if (s.failures == s.count)
    throw std::runtime_error("attack_batch: every example failed: " +
                             *out.results.front().error);
  const double n = static_cast<double>(s.count);
  s.adversarial_accuracy = static_cast<double>(still_correct) / n;
  s.mean_features_pct = 100.0 * feat / (n * static_cast<double>(kImagePixels));
  s.mean_linf = linf / n;
  return out;
}

}  // namespace advgrid
