#pragma once

// The experiment grid: for every epoch count, train a classifier, attack it with
// each (attack, epsilon/gamma) pair, optionally harden it with adversarial
// training, and emit one report row per cell.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "advgrid/dataset.hpp"
#include "advgrid/defense.hpp"
#include "advgrid/harness/config.hpp"
#include "advgrid/harness/report.hpp"
#include "advgrid/version.hpp"

namespace advgrid::harness {

enum ExitCode : int { kOk = 0, kUsage = 1, kInputError = 2, kNumericFailure = 3, kPartial = 4 };

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline LabeledDataset load_dataset(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.synthetic) return synth_corpus(cfg.dataset_seed, cfg.per_class);
  try {
    LoadReport rep;
    auto ds = load_image_dir(cfg.dataset_path, &rep, &log);
    log << "loaded " << rep.loaded << " images in " << ds.num_classes() << " classes ("
        << rep.skipped.size() << " skipped)\n";
    return ds;
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
}

inline AttackSpec make_spec(const ExperimentConfig& cfg, AttackKind kind, double param) {
  AttackSpec s;
  s.kind = kind;
  s.mask = cfg.mask;
  if (kind == AttackKind::jsma) {
    s.gamma = param;
    s.theta = cfg.jsma_theta;
    s.target_rule = cfg.jsma_target;
    s.jacobian = cfg.jsma_jacobian;
  } else {
    s.epsilon = param;
    s.iterations = cfg.bim_iterations;
    s.step_size = param * cfg.bim_step_fraction;
  }
  return s;
}

/// Capped, seed-chosen subset of the test set, kept in original order.
inline std::vector<GrayImage> capped_subset(const LabeledDataset& test, std::size_t cap,
                                            std::uint64_t seed) {
  if (cap >= test.size()) return test.examples;
  std::vector<std::size_t> idx(test.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<GrayImage> out;
  for (auto i : idx) out.push_back(test.examples[i]);
  return out;
}

inline double accuracy_on(const CnnModel& m, const std::vector<GrayImage>& xs) {
  std::size_t ok = 0;
  for (const auto& x : xs) ok += predict(m, x).label == *x.label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

struct RunOutcome {
  std::vector<ReportRow> rows;
  std::vector<std::string> meta;  // one line per row
  std::vector<std::string> failures;
  int exit_code = kOk;
};

inline void write_outputs(const ExperimentConfig& cfg, const RunOutcome& out) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  std::ofstream(dir / "results.csv", std::ios::binary) << to_csv(out.rows);
  std::ofstream(dir / "tables.txt", std::ios::binary) << render_tables(out.rows);
  std::ofstream meta(dir / "rows.meta", std::ios::binary);
  for (const auto& m : out.meta) meta << m << '\n';
}

namespace detail {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Runs the whole grid, writing results.csv, tables.txt and rows.meta.
inline RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::clog) {
  RunOutcome out;
  const auto data = load_dataset(cfg, log);
  const auto parts = split(data, cfg.train_fraction, cfg.effective_split_seed());
  log << "split: " << parts.train.size() << " train / " << parts.test.size() << " test\n";
  const auto jsma_subset = capped_subset(parts.test, cfg.jsma_cap, cfg.subset_seed());

  bool diverged = false;
  for (std::size_t epochs : cfg.epochs) {
    // One trained model per repeat; reused by every attack cell at this epoch count.
    std::vector<CnnModel> models;
    try {
      for (std::size_t r = 0; r < cfg.repeats; ++r) {
        auto m = init_model(cfg.effective_init_seed() + r);
        TrainConfig tc = cfg.train;
        tc.epochs = epochs;
        tc.shuffle_seed = cfg.effective_shuffle_seed() + r;
        train(m, parts.train, tc, [&](const EpochStats& s) {
          log << "  [train " << epochs << "ep r" << r << "] epoch " << s.epoch << " loss "
              << s.mean_loss << " acc " << s.train_accuracy << '\n';
        });
        m.metadata["epochs"] = std::to_string(epochs);
        models.push_back(std::move(m));
      }
    } catch (const DivergenceError& e) {
      diverged = true;
      out.failures.push_back(e.what());
      log << "error: " << e.what() << '\n';
      continue;
    }

    std::map<std::tuple<int, double, std::size_t>, CnnModel> hardened;
    auto harden = [&](AttackKind kind, double param, std::size_t r) -> const CnnModel& {
      auto key = std::make_tuple(static_cast<int>(kind), param, r);
      auto it = hardened.find(key);
      if (it != hardened.end()) return it->second;
      DefenseConfig dc;
      dc.attack = make_spec(cfg, kind, param);
      dc.mix_ratio = cfg.mix_ratio;
      dc.regenerate_every_batch = cfg.regenerate_every_batch;
      dc.from_scratch = cfg.defense_from_scratch;
      dc.init_seed = cfg.effective_init_seed() + r;
      dc.train = cfg.train;
      dc.train.epochs = cfg.defense_epochs.value_or(epochs);
      dc.train.shuffle_seed = cfg.effective_shuffle_seed() + r;
      dc.jobs = cfg.jobs;
      auto res = adversarial_train(models[r], parts.train, dc);
      return hardened.emplace(key, std::move(res.model)).first->second;
    };

    for (AttackKind kind : cfg.attacks) {
      const bool is_jsma = kind == AttackKind::jsma;
      for (double param : is_jsma ? cfg.gammas : cfg.epsilons) {
        // Row labels for this cell; BIM may be reported under two defenses.
        std::vector<std::pair<std::string, std::optional<AttackKind>>> labels;
        if (kind == AttackKind::fgsm) {
          labels.emplace_back("fgsm", cfg.defense_enabled ? std::optional(AttackKind::fgsm)
                                                          : std::nullopt);
        } else if (kind == AttackKind::bim) {
          if (!cfg.defense_enabled) {
            labels.emplace_back("bim", std::nullopt);
          } else {
            if (cfg.bim_defense != BimDefense::fgsm) labels.emplace_back("bim", AttackKind::bim);
            if (cfg.bim_defense != BimDefense::bim)
              labels.emplace_back("bim[fgsm-trained]", AttackKind::fgsm);
          }
        } else {
          labels.emplace_back("jsma", std::nullopt);
        }

        const auto spec = make_spec(cfg, kind, param);
        const auto& victims = is_jsma ? jsma_subset : parts.test.examples;
        try {
          std::vector<double> clean, adv, feat;
          std::vector<std::size_t> failures;
          const auto t_attack = std::chrono::steady_clock::now();
          for (std::size_t r = 0; r < cfg.repeats; ++r) {
            clean.push_back(100.0 * accuracy_on(models[r], victims));
            auto res = attack_batch(models[r], victims, spec, cfg.jobs);
            adv.push_back(100.0 * res.summary.adversarial_accuracy);
            feat.push_back(res.summary.mean_features_pct);
            failures.push_back(res.summary.failures);
          }
          const double attack_s =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t_attack).count();

          for (const auto& [label, defense] : labels) {
            const auto t_row = std::chrono::steady_clock::now();
            ReportRow row;
            row.attack = label;
            row.epochs = epochs;
            row.param = param;
            row.clean_pct = detail::mean(clean);
            row.adv_pct = detail::mean(adv);
            row.seed = cfg.seed;
            if (is_jsma) row.feat_pct = detail::mean(feat);
            std::vector<double> defended;
            if (defense) {
              for (std::size_t r = 0; r < cfg.repeats; ++r) {
                const auto& h = harden(*defense, param, r);
                defended.push_back(
                    100.0 * attack_batch(h, victims, spec, cfg.jobs).summary.adversarial_accuracy);
              }
              row.defended_pct = detail::mean(defended);
            }
            const double row_s =
                attack_s +
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_row).count();
            if (cfg.record_wall_time) row.wall_s = row_s;

            std::ostringstream meta;
            meta << "row=" << out.rows.size() << " attack=" << label << " epochs=" << epochs
                 << " spec={" << spec.describe() << "}";
            if (defense)
              meta << " defense={" << to_string(*defense) << " mix=" << cfg.mix_ratio
                   << " epochs=" << cfg.defense_epochs.value_or(epochs)
                   << " regenerate=" << (cfg.regenerate_every_batch ? "batch" : "initial")
                   << " start=" << (cfg.defense_from_scratch ? "scratch" : "trained") << "}";
            meta << " seeds={run=" << cfg.seed << " dataset=" << cfg.dataset_seed
                 << " split=" << cfg.effective_split_seed()
                 << " init=" << cfg.effective_init_seed()
                 << " shuffle=" << cfg.effective_shuffle_seed()
                 << " subset=" << cfg.subset_seed() << "} repeats=" << cfg.repeats
                 << " attacked=" << victims.size();
            if (is_jsma) meta << " jsma_cap=" << cfg.jsma_cap;
            meta << " attack_failures=" << failures.front();
            if (cfg.repeats > 1)
              meta << " adv_sd=" << detail::stddev(adv)
                   << (defense ? " defended_sd=" + std::to_string(detail::stddev(defended)) : "");
            meta << " version=" << kVersion;
            out.meta.push_back(meta.str());
            out.rows.push_back(row);
            log << csv_line(row) << '\n';
          }
        } catch (const DivergenceError& e) {
          diverged = true;
          out.failures.push_back(e.what());
          log << "error: " << e.what() << '\n';
        } catch (const std::exception& e) {
          out.failures.push_back(spec.describe() + ": " + e.what());
          log << "error: " << spec.describe() << ": " << e.what() << '\n';
        }
      }
    }
  }

  write_outputs(cfg, out);
  out.exit_code = diverged ? kNumericFailure : (out.failures.empty() ? kOk : kPartial);
  return out;
}

}  // namespace advgrid::harness
