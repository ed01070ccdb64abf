// advgrid: malware-image adversarial attack experiments from the command line.
//
//   advgrid convert --in binaries/ --out images/
//   advgrid synth   --seed 7 --per-class 40 --out corpus/
//   advgrid train   --data corpus/ --epochs 10 --out model.ckpt
//   advgrid attack  --model model.ckpt --data corpus/ --attack fgsm --param 0.1 --out row.csv
//   advgrid defend  --model model.ckpt --data corpus/ --attack fgsm --param 0.1 --out hard.ckpt
//   advgrid report  --csv results/results.csv
//   advgrid run     --config configs/desk.conf --out results/

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "advgrid/harness/commands.hpp"

using namespace advgrid;
using namespace advgrid::harness;

namespace {

struct Common {
  std::string config;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  std::string out;

  void attach(CLI::App* app, const char* out_help) {
    app->add_option("--config", config, "Experiment config file (key = value)");
    app->add_option("--jobs", jobs, "Worker threads for attack generation");
    app->add_option("--seed", seed, "Global seed (overrides [run] seed)");
    app->add_option("--out", out, out_help);
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_config(config);
    if (jobs) cfg.jobs = std::max<std::size_t>(1, *jobs);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on a CNN malware-image classifier"};
  app.require_subcommand(1);

  // convert
  Common convert_common;
  ConvertOptions convert_opt;
  std::string convert_in;
  auto* convert = app.add_subcommand("convert", "Binaries to 28x28 grayscale PGM images");
  convert_common.attach(convert, "Output directory");
  convert->add_option("--in", convert_in, "Binary file or directory")->required();
  convert->add_option("--width", convert_opt.width, "Fixed row width (default: size rule)");

  // synth
  Common synth_common;
  std::optional<std::size_t> per_class;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic 25-family corpus");
  synth_common.attach(synth, "Output directory");
  synth->add_option("--per-class", per_class, "Examples per family");

  // train
  Common train_common;
  std::string train_data;
  std::size_t train_epochs = 10;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier and save a checkpoint");
  train_common.attach(train_cmd, "Checkpoint path");
  train_cmd->add_option("--data", train_data, "Dataset directory (default: config dataset)");
  train_cmd->add_option("--epochs", train_epochs, "Training epochs");

  // attack / defend share their attack options
  Common attack_common, defend_common;
  std::string attack_data, attack_model, attack_kind = "fgsm", attack_examples;
  double attack_param = 0.1;
  auto* attack = app.add_subcommand("attack", "Attack the test split with a saved model");
  attack_common.attach(attack, "Result CSV path");
  attack->add_option("--data", attack_data, "Dataset directory (default: config dataset)");
  attack->add_option("--model", attack_model, "Checkpoint")->required();
  attack->add_option("--attack", attack_kind, "fgsm | bim | jsma");
  attack->add_option("--param", attack_param, "Epsilon (fgsm/bim) or gamma (jsma)");
  attack->add_option("--examples-out", attack_examples, "Write adversarial images here");

  std::string defend_data, defend_model, defend_kind = "fgsm";
  double defend_param = 0.1;
  std::optional<std::size_t> defend_epochs;
  auto* defend = app.add_subcommand("defend", "Adversarially train a saved model");
  defend_common.attach(defend, "Hardened checkpoint path");
  defend->add_option("--data", defend_data, "Dataset directory (default: config dataset)");
  defend->add_option("--model", defend_model, "Checkpoint to harden")->required();
  defend->add_option("--attack", defend_kind, "fgsm | bim");
  defend->add_option("--param", defend_param, "Epsilon of the training attack");
  defend->add_option("--epochs", defend_epochs, "Adversarial training epochs");

  // report
  Common report_common;
  std::string report_csv;
  auto* report = app.add_subcommand("report", "Render text tables from a results CSV");
  report_common.attach(report, "Directory for tables.txt (optional)");
  report->add_option("--csv", report_csv, "Results CSV")->required();

  // run
  Common run_common;
  auto* run = app.add_subcommand("run", "Run the full experiment grid");
  run_common.attach(run, "Output directory (overrides [output] dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto need_out = [](const Common& c, const char* what) {
    if (c.out.empty()) throw CLI::RequiredError(std::string("--out (") + what + ")");
  };
  auto optional_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };

  try {
    if (*convert) {
      need_out(convert_common, "output directory");
      convert_opt.input = convert_in;
      convert_opt.output = convert_common.out;
      auto s = convert_command(convert_opt, std::cerr);
      std::cout << "converted " << s.converted << " file(s), skipped " << s.skipped << '\n';
      return s.converted == 0 ? kInputError : (s.skipped ? kPartial : kOk);
    }
    if (*synth) {
      need_out(synth_common, "output directory");
      // --seed here is the corpus seed, defaulting to [dataset] seed.
      auto cfg = synth_common.config.empty() ? ExperimentConfig{}
                                             : load_config(synth_common.config);
      const auto seed = synth_common.seed.value_or(cfg.dataset_seed);
      const auto n = per_class.value_or(cfg.per_class);
      synth_command(seed, n, synth_common.out);
      std::cout << "wrote " << n * kNumFamilies << " images to " << synth_common.out << '\n';
      return kOk;
    }
    if (*train_cmd) {
      need_out(train_common, "checkpoint path");
      TrainOptions o{train_common.load(), optional_path(train_data), train_epochs,
                     train_common.out};
      train_command(o, std::cerr);
      return kOk;
    }
    if (*attack) {
      AttackOptions o;
      o.cfg = attack_common.load();
      o.data = optional_path(attack_data);
      o.model = attack_model;
      o.kind = parse_attack_kind(attack_kind);
      o.param = attack_param;
      o.csv_out = optional_path(attack_common.out);
      o.examples_out = optional_path(attack_examples);
      auto res = attack_command(o, std::cerr);
      std::cout << kCsvHeader << '\n' << csv_line(res.row) << '\n';
      return res.outcome.summary.failures ? kPartial : kOk;
    }
    if (*defend) {
      need_out(defend_common, "hardened checkpoint path");
      DefendOptions o;
      o.cfg = defend_common.load();
      o.data = optional_path(defend_data);
      o.model = defend_model;
      o.kind = parse_attack_kind(defend_kind);
      o.param = defend_param;
      o.epochs = defend_epochs;
      o.model_out = defend_common.out;
      auto s = defend_command(o, std::cerr);
      std::cout << "clean accuracy       " << s.clean_before << " -> " << s.clean_after << '\n'
                << "adversarial accuracy " << s.adv_before << " -> " << s.adv_after << '\n';
      return kOk;
    }
    if (*report) {
      std::cout << report_command(report_csv, optional_path(report_common.out));
      return kOk;
    }
    if (*run) {
      auto cfg = run_common.load();
      if (!run_common.out.empty()) cfg.output_dir = run_common.out;
      auto outcome = run_experiment(cfg, std::cerr);
      std::cout << render_tables(outcome.rows);
      for (const auto& f : outcome.failures) std::cerr << "failed: " << f << '\n';
      return outcome.exit_code;
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kUsage;
}
