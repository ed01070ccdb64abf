#pragma once

// Stage-by-stage entry points behind the CLI subcommands. Every stage reads and
// writes files (datasets, checkpoints, result rows), so any stage can be re-run.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "advgrid/checkpoint.hpp"
#include "advgrid/harness/experiment.hpp"

namespace advgrid::harness {

namespace fs = std::filesystem;

struct ConvertOptions {
  fs::path input;  // a file or a directory tree of binaries
  fs::path output;
  std::size_t width = 0;  // 0: size-adaptive rule
};

struct ConvertSummary {
  std::size_t converted = 0;
  std::size_t skipped = 0;
};

/// Writes one PGM per binary plus manifest.txt. Binaries inside first-level
/// subdirectories are labeled by the sorted subdirectory index; others get -1.
inline ConvertSummary convert_command(const ConvertOptions& opt, std::ostream& log) {
  std::vector<fs::path> files;
  fs::path root = opt.input;
  if (fs::is_regular_file(opt.input)) {
    files.push_back(opt.input);
    root = opt.input.parent_path();
  } else if (fs::is_directory(opt.input)) {
    for (const auto& e : fs::recursive_directory_iterator(opt.input))
      if (e.is_regular_file()) files.push_back(e.path());
  } else {
    throw InputError("input not found: " + opt.input.string());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::string> classes;
  for (const auto& f : files) {
    auto rel = fs::relative(f, root);
    if (std::distance(rel.begin(), rel.end()) > 1) classes.push_back(rel.begin()->string());
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  fs::create_directories(opt.output);
  std::ofstream manifest(opt.output / "manifest.txt", std::ios::binary);
  ConvertSummary s;
  for (const auto& f : files) {
    auto rel = fs::relative(f, root);
    try {
      auto bytes = read_bytes(f.string());
      auto img = binary_to_image(bytes, opt.width);
      fs::path out_rel = rel;
      out_rel += ".pgm";
      fs::create_directories((opt.output / out_rel).parent_path());
      io::write_pgm(opt.output / out_rel, img);
      long label = -1;
      if (std::distance(rel.begin(), rel.end()) > 1)
        label = std::find(classes.begin(), classes.end(), rel.begin()->string()) - classes.begin();
      manifest << out_rel.generic_string() << ' ' << label << ' ' << bytes.size() << '\n';
      ++s.converted;
    } catch (const std::exception& e) {
      log << "warning: skipping " << f.string() << ": " << e.what() << '\n';
      ++s.skipped;
    }
  }
  return s;
}

inline void synth_command(std::uint64_t seed, std::size_t per_class, const fs::path& out) {
  export_dataset(synth_corpus(seed, per_class), out);
}

/// Dataset from --data when given, otherwise whatever the config names.
inline LabeledDataset resolve_dataset(const ExperimentConfig& cfg,
                                      const std::optional<fs::path>& data, std::ostream& log) {
  if (!data) return load_dataset(cfg, log);
  ExperimentConfig c = cfg;
  c.synthetic = false;
  c.dataset_path = data->string();
  return load_dataset(c, log);
}

struct TrainOptions {
  ExperimentConfig cfg;
  std::optional<fs::path> data;
  std::size_t epochs = 10;
  fs::path model_out;
};

inline CnnModel train_command(const TrainOptions& opt, std::ostream& log) {
  auto ds = resolve_dataset(opt.cfg, opt.data, log);
  auto parts = split(ds, opt.cfg.train_fraction, opt.cfg.effective_split_seed());
  auto model = init_model(opt.cfg.effective_init_seed());
  TrainConfig tc = opt.cfg.train;
  tc.epochs = opt.epochs;
  tc.shuffle_seed = opt.cfg.effective_shuffle_seed();
  train(model, parts.train, tc, [&](const EpochStats& s) {
    log << "epoch " << s.epoch << " loss " << s.mean_loss << " train_acc " << s.train_accuracy
        << '\n';
  });
  model.metadata["epochs"] = std::to_string(opt.epochs);
  log << "test accuracy " << evaluate(model, parts.test) << '\n';
  save_model(model, opt.model_out);
  return model;
}

struct AttackOptions {
  ExperimentConfig cfg;
  std::optional<fs::path> data;
  fs::path model;
  AttackKind kind = AttackKind::fgsm;
  double param = 0.1;  // epsilon or gamma
  std::optional<fs::path> csv_out;
  std::optional<fs::path> examples_out;  // adversarial images as PGM
};

struct AttackCommandResult {
  ReportRow row;
  BatchOutcome outcome;
};

/// Attacks the held-out split (capped for jsma) of the dataset with a saved model.
inline AttackCommandResult attack_command(const AttackOptions& opt, std::ostream& log) {
  const auto model = load_model(opt.model);
  auto ds = resolve_dataset(opt.cfg, opt.data, log);
  auto parts = split(ds, opt.cfg.train_fraction, opt.cfg.effective_split_seed());
  const auto spec = make_spec(opt.cfg, opt.kind, opt.param);
  const auto victims = opt.kind == AttackKind::jsma
                           ? capped_subset(parts.test, opt.cfg.jsma_cap, opt.cfg.subset_seed())
                           : parts.test.examples;
  const auto t0 = std::chrono::steady_clock::now();
  AttackCommandResult res;
  res.row.clean_pct = 100.0 * accuracy_on(model, victims);
  res.outcome = attack_batch(model, victims, spec, opt.cfg.jobs);
  res.row.attack = to_string(opt.kind);
  if (auto it = model.metadata.find("epochs"); it != model.metadata.end())
    res.row.epochs = std::stoul(it->second);
  res.row.param = opt.param;
  res.row.adv_pct = 100.0 * res.outcome.summary.adversarial_accuracy;
  if (opt.kind == AttackKind::jsma) res.row.feat_pct = res.outcome.summary.mean_features_pct;
  if (opt.cfg.record_wall_time)
    res.row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.row.seed = opt.cfg.seed;

  if (opt.csv_out) {
    if (opt.csv_out->has_parent_path()) fs::create_directories(opt.csv_out->parent_path());
    std::ofstream(*opt.csv_out, std::ios::binary) << to_csv({res.row});
  }
  if (opt.examples_out) {
    LabeledDataset adv;
    adv.class_names = ds.class_names;
    for (std::size_t i = 0; i < victims.size(); ++i) {
      auto img = res.outcome.results[i].adversarial;
      img.label = victims[i].label;
      adv.examples.push_back(std::move(img));
    }
    export_dataset(adv, *opt.examples_out);
  }
  return res;
}

struct DefendOptions {
  ExperimentConfig cfg;
  std::optional<fs::path> data;
  fs::path model;
  AttackKind kind = AttackKind::fgsm;
  double param = 0.1;
  std::optional<std::size_t> epochs;  // default: the model's training epochs
  fs::path model_out;
};

struct DefendSummary {
  double clean_before = 0, clean_after = 0, adv_before = 0, adv_after = 0;
};

inline DefendSummary defend_command(const DefendOptions& opt, std::ostream& log) {
  const auto model = load_model(opt.model);
  auto ds = resolve_dataset(opt.cfg, opt.data, log);
  auto parts = split(ds, opt.cfg.train_fraction, opt.cfg.effective_split_seed());
  DefenseConfig dc;
  dc.attack = make_spec(opt.cfg, opt.kind, opt.param);
  dc.mix_ratio = opt.cfg.mix_ratio;
  dc.regenerate_every_batch = opt.cfg.regenerate_every_batch;
  dc.from_scratch = opt.cfg.defense_from_scratch;
  dc.init_seed = opt.cfg.effective_init_seed();
  dc.train = opt.cfg.train;
  std::size_t epochs = 10;
  if (auto it = model.metadata.find("epochs"); it != model.metadata.end())
    epochs = std::stoul(it->second);
  dc.train.epochs = opt.epochs.value_or(opt.cfg.defense_epochs.value_or(epochs));
  dc.train.shuffle_seed = opt.cfg.effective_shuffle_seed();
  dc.jobs = opt.cfg.jobs;
  auto res = adversarial_train(model, parts.train, dc, [&](const EpochStats& s) {
    log << "epoch " << s.epoch << " clean_loss " << s.clean_loss << " adv_loss "
        << s.adversarial_loss << " fallbacks " << s.attack_fallbacks << '\n';
  });
  save_model(res.model, opt.model_out);

  DefendSummary s;
  s.clean_before = evaluate(model, parts.test);
  s.clean_after = evaluate(res.model, parts.test);
  s.adv_before = attack_batch(model, parts.test.examples, dc.attack, dc.jobs)
                     .summary.adversarial_accuracy;
  s.adv_after = attack_batch(res.model, parts.test.examples, dc.attack, dc.jobs)
                    .summary.adversarial_accuracy;
  return s;
}

inline std::string report_command(const fs::path& csv, const std::optional<fs::path>& out) {
  auto text = render_tables(read_csv(csv));
  if (out) {
    fs::create_directories(*out);
    std::ofstream(*out / "tables.txt", std::ios::binary) << text;
  }
  return text;
}

}  // namespace advgrid::harness
