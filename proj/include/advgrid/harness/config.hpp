#pragma once

// Experiment configuration: a line-oriented "key = value" file with [section]
// headers. '#' starts a comment. Example:
//
//   [dataset]
//   source = synthetic
//   seed = 7
//   per_class = 40
//
//   [sweep]
//   attacks = fgsm, bim
//   epochs = 10, 50, 100
//   epsilons = 0.1, 0.2, 0.3

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "advgrid/attacks.hpp"
#include "advgrid/train.hpp"

namespace advgrid::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BimDefense { bim, fgsm, both };

struct ExperimentConfig {
  // [dataset]
  bool synthetic = true;
  std::string dataset_path;
  std::uint64_t dataset_seed = 7;
  std::size_t per_class = 40;
  // [split]
  double train_fraction = 0.7;
  std::optional<std::uint64_t> split_seed;
  // [train]
  TrainConfig train;  // epochs come from the sweep
  std::optional<std::uint64_t> init_seed;
  std::optional<std::uint64_t> shuffle_seed;
  // [sweep]
  std::vector<AttackKind> attacks{AttackKind::fgsm, AttackKind::bim, AttackKind::jsma};
  std::vector<std::size_t> epochs{10, 50, 100};
  std::vector<double> epsilons{0.1, 0.2, 0.3};
  std::vector<double> gammas{0.1, 0.2, 0.3};
  std::size_t bim_iterations = 10;
  double bim_step_fraction = 0.25;
  double jsma_theta = 1.0;
  std::size_t jsma_cap = 200;
  TargetRule jsma_target = TargetRule::least_likely;
  JacobianMode jsma_jacobian = JacobianMode::softmax;
  MaskPolicy mask = ZeroRegion{};
  std::size_t repeats = 1;
  // [defense]
  bool defense_enabled = true;
  double mix_ratio = 0.5;
  bool regenerate_every_batch = true;
  bool defense_from_scratch = false;
  std::optional<std::size_t> defense_epochs;  // default: the cell's epochs
  BimDefense bim_defense = BimDefense::both;
  // [output]
  std::string output_dir = "results";
  bool record_wall_time = false;
  // [run]
  std::uint64_t seed = 42;
  std::size_t jobs = 1;

  std::uint64_t effective_split_seed() const { return split_seed.value_or(seed + 1); }
  std::uint64_t effective_init_seed() const { return init_seed.value_or(seed + 2); }
  std::uint64_t effective_shuffle_seed() const { return shuffle_seed.value_or(seed + 3); }
  std::uint64_t subset_seed() const { return seed + 4; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string value;
  int line;
};

class Reader {
 public:
  Reader(std::map<std::string, Entry> entries, std::string origin)
      : entries_(std::move(entries)), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    auto it = entries_.find(key);
    std::ostringstream os;
    os << origin_;
    if (it != entries_.end()) os << ':' << it->second.line;
    os << ": " << key << ": " << why;
    throw ConfigError(os.str());
  }

  const Entry* find(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  template <class T>
  void number(const std::string& key, T& out) {
    if (auto* e = find(key)) out = parse_number<T>(key, e->value);
  }
  template <class T>
  void number(const std::string& key, std::optional<T>& out) {
    if (auto* e = find(key)) out = parse_number<T>(key, e->value);
  }
  void text(const std::string& key, std::string& out) {
    if (auto* e = find(key)) out = e->value;
  }
  void boolean(const std::string& key, bool& out) {
    if (auto* e = find(key)) {
      if (e->value == "true" || e->value == "yes" || e->value == "1") out = true;
      else if (e->value == "false" || e->value == "no" || e->value == "0") out = false;
      else fail(key, "expected true/false, got '" + e->value + "'");
    }
  }
  template <class T>
  void list(const std::string& key, std::vector<T>& out) {
    if (auto* e = find(key)) {
      out.clear();
      for (const auto& item : split_list(e->value)) out.push_back(parse_number<T>(key, item));
      if (out.empty()) fail(key, "empty list");
    }
  }

  void reject_unknown() const {
    for (const auto& [key, entry] : entries_)
      if (!used_.count(key))
        throw ConfigError(origin_ + ":" + std::to_string(entry.line) + ": unknown key '" +
                          key + "'");
  }

  template <class T>
  T parse_number(const std::string& key, const std::string& text) const {
    try {
      std::size_t used = 0;
      T v;
      if constexpr (std::is_floating_point_v<T>) {
        v = static_cast<T>(std::stod(text, &used));
      } else {
        if (!text.empty() && text[0] == '-') fail(key, "must be non-negative");
        v = static_cast<T>(std::stoull(text, &used));
      }
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::logic_error&) {
      fail(key, "not a number: '" + text + "'");
    }
  }

 private:
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
  std::string origin_;
};

}  // namespace detail

/// Parses and validates; errors carry "origin:line: section.key: reason".
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config") {
  std::map<std::string, detail::Entry> entries;
  std::string section, raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside any [section]");
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    if (entries.count(key))
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    entries[key] = {detail::trim(line.substr(eq + 1)), line_no};
  }

  ExperimentConfig c;
  detail::Reader r(std::move(entries), origin);

  if (auto* e = r.find("dataset.source")) {
    if (e->value == "synthetic") c.synthetic = true;
    else if (e->value == "directory") c.synthetic = false;
    else r.fail("dataset.source", "expected synthetic or directory");
  }
  r.text("dataset.path", c.dataset_path);
  r.number("dataset.seed", c.dataset_seed);
  r.number("dataset.per_class", c.per_class);

  r.number("split.train_fraction", c.train_fraction);
  r.number("split.seed", c.split_seed);

  r.number("train.batch_size", c.train.batch_size);
  r.number("train.learning_rate", c.train.learning_rate);
  r.number("train.momentum", c.train.momentum);
  if (auto* e = r.find("train.optimizer")) {
    if (e->value == "momentum") c.train.optimizer = OptimizerKind::momentum;
    else if (e->value == "sgd") c.train.optimizer = OptimizerKind::sgd;
    else r.fail("train.optimizer", "expected momentum or sgd");
  }
  r.number("train.init_seed", c.init_seed);
  r.number("train.shuffle_seed", c.shuffle_seed);

  if (auto* e = r.find("sweep.attacks")) {
    c.attacks.clear();
    for (const auto& a : detail::split_list(e->value)) {
      try {
        c.attacks.push_back(parse_attack_kind(a));
      } catch (const std::invalid_argument& ex) {
        r.fail("sweep.attacks", ex.what());
      }
    }
    if (c.attacks.empty()) r.fail("sweep.attacks", "empty list");
  }
  r.list("sweep.epochs", c.epochs);
  r.list("sweep.epsilons", c.epsilons);
  r.list("sweep.gammas", c.gammas);
  r.number("sweep.bim_iterations", c.bim_iterations);
  r.number("sweep.bim_step_fraction", c.bim_step_fraction);
  r.number("sweep.jsma_theta", c.jsma_theta);
  r.number("sweep.jsma_cap", c.jsma_cap);
  if (auto* e = r.find("sweep.jsma_target")) {
    if (e->value == "least-likely") c.jsma_target = TargetRule::least_likely;
    else if (e->value == "round-robin") c.jsma_target = TargetRule::round_robin;
    else r.fail("sweep.jsma_target", "expected least-likely or round-robin");
  }
  if (auto* e = r.find("sweep.jsma_jacobian")) {
    if (e->value == "softmax") c.jsma_jacobian = JacobianMode::softmax;
    else if (e->value == "logits") c.jsma_jacobian = JacobianMode::logits;
    else r.fail("sweep.jsma_jacobian", "expected softmax or logits");
  }
  if (auto* e = r.find("sweep.mask")) {
    try {
      c.mask = parse_mask_policy(e->value);
    } catch (const std::exception& ex) {
      r.fail("sweep.mask", ex.what());
    }
  }
  r.number("sweep.repeats", c.repeats);

  r.boolean("defense.enabled", c.defense_enabled);
  r.number("defense.mix_ratio", c.mix_ratio);
  r.boolean("defense.regenerate_every_batch", c.regenerate_every_batch);
  if (auto* e = r.find("defense.start")) {
    if (e->value == "trained") c.defense_from_scratch = false;
    else if (e->value == "scratch") c.defense_from_scratch = true;
    else r.fail("defense.start", "expected trained or scratch");
  }
  r.number("defense.epochs", c.defense_epochs);
  if (auto* e = r.find("defense.bim_training")) {
    if (e->value == "bim") c.bim_defense = BimDefense::bim;
    else if (e->value == "fgsm") c.bim_defense = BimDefense::fgsm;
    else if (e->value == "both") c.bim_defense = BimDefense::both;
    else r.fail("defense.bim_training", "expected bim, fgsm or both");
  }

  r.text("output.dir", c.output_dir);
  r.boolean("output.record_wall_time", c.record_wall_time);
  r.number("run.seed", c.seed);
  r.number("run.jobs", c.jobs);
  r.reject_unknown();

  // Semantic checks.
  if (!c.synthetic && c.dataset_path.empty())
    r.fail("dataset.path", "required when source = directory");
  if (c.synthetic && c.per_class < 2) r.fail("dataset.per_class", "must be >= 2");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    r.fail("split.train_fraction", "must be in (0,1)");
  if (c.train.batch_size < 1) r.fail("train.batch_size", "must be >= 1");
  if (!(c.train.learning_rate > 0.0)) r.fail("train.learning_rate", "must be > 0");
  if (!(c.train.momentum >= 0.0 && c.train.momentum < 1.0))
    r.fail("train.momentum", "must be in [0,1)");
  for (auto e : c.epochs)
    if (e < 1) r.fail("sweep.epochs", "every value must be positive");
  for (auto v : c.epsilons)
    if (!(v > 0.0)) r.fail("sweep.epsilons", "every value must be positive");
  for (auto v : c.gammas)
    if (!(v > 0.0 && v <= 1.0)) r.fail("sweep.gammas", "every value must be in (0,1]");
  if (c.bim_iterations < 1) r.fail("sweep.bim_iterations", "must be >= 1");
  if (!(c.bim_step_fraction > 0.0)) r.fail("sweep.bim_step_fraction", "must be positive");
  if (c.jsma_theta == 0.0) r.fail("sweep.jsma_theta", "must be nonzero");
  if (c.jsma_cap < 1) r.fail("sweep.jsma_cap", "must be >= 1");
  if (c.repeats < 1) r.fail("sweep.repeats", "must be >= 1");
  if (!(c.mix_ratio > 0.0 && c.mix_ratio <= 1.0)) r.fail("defense.mix_ratio", "must be in (0,1]");
  if (c.defense_epochs && *c.defense_epochs < 1) r.fail("defense.epochs", "must be positive");
  if (c.jobs < 1) r.fail("run.jobs", "must be >= 1");
  if (c.output_dir.empty()) r.fail("output.dir", "must not be empty");
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

}  // namespace advgrid::harness
