#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "advgrid/harness/commands.hpp"
#include "support/temp_dir.hpp"

using namespace advgrid;
using namespace advgrid::harness;
using testing_support::TempDir;

namespace {

const fs::path kConfigs = fs::path(ADVGRID_SOURCE_DIR) / "configs";

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "t.conf");
}

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ADVGRID_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Config, DefaultsAndSeedDerivation) {
  auto c = parse("");
  EXPECT_TRUE(c.synthetic);
  EXPECT_EQ(c.train.batch_size, 128u);
  EXPECT_EQ(c.train.learning_rate, 0.001);
  EXPECT_EQ(c.epochs, (std::vector<std::size_t>{10, 50, 100}));
  EXPECT_EQ(c.epsilons, (std::vector<double>{0.1, 0.2, 0.3}));
  EXPECT_EQ(c.gammas, (std::vector<double>{0.1, 0.2, 0.3}));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.effective_split_seed(), 43u);
  EXPECT_EQ(c.effective_init_seed(), 44u);
  EXPECT_EQ(c.effective_shuffle_seed(), 45u);
}

TEST(Config, ShippedFilesParse) {
  for (const char* name : {"full_grid.conf", "desk.conf", "smoke.conf"}) {
    SCOPED_TRACE(name);
    EXPECT_NO_THROW(load_config(kConfigs / name));
  }
  auto desk = load_config(kConfigs / "desk.conf");
  EXPECT_EQ(desk.train.batch_size, 16u);
  EXPECT_EQ(*desk.split_seed, 1u);
  EXPECT_EQ(desk.epochs, (std::vector<std::size_t>{10}));
}

TEST(Config, ValuesAndComments) {
  auto c = parse(R"(
# comment
[sweep]
attacks = jsma, fgsm   # trailing comment
epsilons = 0.05,0.25
mask = trailing-fraction:0.3
jsma_target = round-robin
[defense]
start = scratch
bim_training = fgsm
enabled = no
[run]
jobs = 2
)");
  EXPECT_EQ(c.attacks, (std::vector<AttackKind>{AttackKind::jsma, AttackKind::fgsm}));
  EXPECT_EQ(c.epsilons, (std::vector<double>{0.05, 0.25}));
  ASSERT_TRUE(std::holds_alternative<TrailingFraction>(c.mask));
  EXPECT_EQ(c.jsma_target, TargetRule::round_robin);
  EXPECT_TRUE(c.defense_from_scratch);
  EXPECT_EQ(c.bim_defense, BimDefense::fgsm);
  EXPECT_FALSE(c.defense_enabled);
  EXPECT_EQ(c.jobs, 2u);
}

TEST(Config, ErrorsNameFileLineAndField) {
  EXPECT_EQ(config_error("[sweep]\n\nepochs =\n"), "t.conf:3: sweep.epochs: empty list");
  EXPECT_EQ(config_error("[sweep]\nepsilons = , ,\n"), "t.conf:2: sweep.epsilons: empty list");
  EXPECT_EQ(config_error("[sweep]\nattacks =\n"), "t.conf:2: sweep.attacks: empty list");
  EXPECT_EQ(config_error("[train]\nbatchsize = 3\n"), "t.conf:2: unknown key 'train.batchsize'");
  EXPECT_EQ(config_error("[dataset]\nper_class = ten\n"),
            "t.conf:2: dataset.per_class: not a number: 'ten'");
  EXPECT_EQ(config_error("[dataset]\nper_class = -3\n"),
            "t.conf:2: dataset.per_class: must be non-negative");
  EXPECT_EQ(config_error("[split]\ntrain_fraction = 1.0\n"),
            "t.conf:2: split.train_fraction: must be in (0,1)");
  EXPECT_EQ(config_error("[sweep]\ngammas = 0.1, 1.5\n"),
            "t.conf:2: sweep.gammas: every value must be in (0,1]");
  EXPECT_EQ(config_error("[defense]\nenabled = maybe\n"),
            "t.conf:2: defense.enabled: expected true/false, got 'maybe'");
  EXPECT_EQ(config_error("[sweep]\nepochs = 1\nepochs = 2\n"),
            "t.conf:3: duplicate key 'sweep.epochs'");
  EXPECT_EQ(config_error("seed = 1\n"), "t.conf:1: key outside any [section]");
  EXPECT_EQ(config_error("[run\n"), "t.conf:1: malformed section header");
  EXPECT_EQ(config_error("[run]\nseed\n"), "t.conf:2: expected key = value");
  EXPECT_NE(config_error("[dataset]\nsource = directory\n").find("dataset.path"),
            std::string::npos);
  EXPECT_NE(config_error("[sweep]\nattacks = fgsm, cw\n").find("sweep.attacks"),
            std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/x.conf"), ConfigError);
}

std::vector<ReportRow> sample_rows() {
  std::vector<ReportRow> rows;
  for (std::size_t e : {10u, 50u, 100u})
    for (double eps : {0.1, 0.2, 0.3})
      rows.push_back({"fgsm", e, eps, 99.5, 12.25, 80.75, std::nullopt, std::nullopt, 42});
  rows.push_back({"bim[fgsm-trained]", 10, 0.1, 99.5, 3.0, 40.0, std::nullopt, 1.5, 42});
  rows.push_back({"jsma", 10, 0.2, 100.0, 0.0, std::nullopt, 3.37, std::nullopt, 42});
  return rows;
}

TEST(Report, CsvRoundTrip) {
  const auto rows = sample_rows();
  const auto text = to_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
  EXPECT_EQ(csv_line(rows[9]), "bim[fgsm-trained],10,0.1,99.50,3.00,40.00,n/a,1.500,42");
  std::istringstream in(text);
  EXPECT_EQ(parse_csv(in), rows);

  std::istringstream bad_header("attack,epochs\n");
  EXPECT_THROW(parse_csv(bad_header), std::runtime_error);
  std::istringstream short_row(std::string(kCsvHeader) + "\nfgsm,10,0.1\n");
  EXPECT_THROW(parse_csv(short_row), std::runtime_error);
  std::istringstream bad_number(std::string(kCsvHeader) + "\nfgsm,x,0.1,1,1,n/a,n/a,n/a,1\n");
  EXPECT_THROW(parse_csv(bad_number), std::runtime_error);
}

TEST(Report, TablesFollowThePublishedLayout) {
  const auto text = render_tables(sample_rows());
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);

  ASSERT_GE(lines.size(), 15u);
  EXPECT_EQ(lines[0], "Fast Gradient Sign Method Attack");
  EXPECT_NE(lines[2].find("| Epochs | Epsilon | Test accuracy on Legitimate Samples (%) | "
                          "Test accuracy of Adversarial Examples (%) | "
                          "Test accuracy after Adversarial training (%) |"),
            std::string::npos);
  // title, rule, header, rule, 9 rows, rule, blank
  EXPECT_EQ(lines[13].front(), '+');
  EXPECT_EQ(lines[14], "");
  std::size_t body = 0;
  for (std::size_t i = 4; i < 13; ++i) body += lines[i].front() == '|';
  EXPECT_EQ(body, 9u);
  EXPECT_NE(lines[4].find("|     10 |     0.1 |"), std::string::npos) << lines[4];

  EXPECT_NE(text.find("Basic Iterative Method Attack (adversarial training on FGSM examples)"),
            std::string::npos);
  EXPECT_NE(text.find("| Epochs | Gamma |"), std::string::npos);
  EXPECT_NE(text.find("Average number of Features Perturbed (%)"), std::string::npos);
  EXPECT_NE(text.find("3.37"), std::string::npos);
}

TEST(Experiment, SmokeRunIsByteIdenticalAcrossRunsAndJobs) {
  TempDir a("smoke-a"), b("smoke-b"), c("smoke-c");
  auto cfg = load_config(kConfigs / "smoke.conf");
  std::ostringstream log;

  cfg.output_dir = a.path().string();
  auto ra = run_experiment(cfg, log);
  cfg.output_dir = b.path().string();
  auto rb = run_experiment(cfg, log);
  cfg.output_dir = c.path().string();
  cfg.jobs = 2;
  auto rc = run_experiment(cfg, log);

  EXPECT_EQ(ra.exit_code, kOk) << log.str();
  // fgsm x2, bim x2 under two defenses, jsma x1
  ASSERT_EQ(ra.rows.size(), 7u);
  EXPECT_EQ(ra.meta.size(), ra.rows.size());
  const auto csv = slurp(a / "results.csv");
  EXPECT_EQ(csv, slurp(b / "results.csv"));
  EXPECT_EQ(csv, slurp(c / "results.csv"));
  EXPECT_EQ(slurp(a / "tables.txt"), slurp(b / "tables.txt"));
  EXPECT_EQ(slurp(a / "rows.meta"), slurp(b / "rows.meta"));

  for (const auto& r : ra.rows) {
    EXPECT_FALSE(r.wall_s);
    EXPECT_EQ(r.seed, 11u);
    EXPECT_EQ(r.feat_pct.has_value(), r.attack == "jsma");
    EXPECT_EQ(r.defended_pct.has_value(), r.attack != "jsma");
  }
  EXPECT_EQ(ra.rows[2].attack, "bim");
  EXPECT_EQ(ra.rows[3].attack, "bim[fgsm-trained]");
  EXPECT_NE(ra.meta[6].find("attacked=6"), std::string::npos) << ra.meta[6];

  // Re-rendering from the CSV alone reproduces the tables.
  EXPECT_EQ(report_command(a / "results.csv", std::nullopt), slurp(a / "tables.txt"));
}

TEST(Experiment, MissingDatasetDirectoryIsAnInputError) {
  auto cfg = parse("[dataset]\nsource = directory\npath = /nonexistent/corpus\n");
  TempDir out("missing");
  cfg.output_dir = out.path().string();
  std::ostringstream log;
  EXPECT_THROW(run_experiment(cfg, log), InputError);
}

void write_blob(const fs::path& p, std::size_t n, unsigned seed) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  for (std::size_t i = 0; i < n; ++i) out.put(static_cast<char>((i * 31 + seed) % 251));
}

TEST(Convert, WritesOneImagePerBinaryAndAManifest) {
  TempDir in("conv-in"), out("conv-out");
  write_blob(in / "alpha" / "a.exe", 1000, 1);
  write_blob(in / "alpha" / "b.exe", 20000, 2);
  write_blob(in / "beta" / "c.dll", 5000, 3);
  write_blob(in / "beta" / "empty.bin", 0, 0);
  std::ostringstream log;
  auto s = convert_command({in.path(), out.path(), 0}, log);
  EXPECT_EQ(s.converted, 3u);
  EXPECT_EQ(s.skipped, 1u);
  EXPECT_NE(log.str().find("empty.bin"), std::string::npos);
  for (const char* f : {"alpha/a.exe.pgm", "alpha/b.exe.pgm", "beta/c.dll.pgm"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(slurp(out / "manifest.txt"),
            "alpha/a.exe.pgm 0 1000\nalpha/b.exe.pgm 0 20000\nbeta/c.dll.pgm 1 5000\n");

  auto img = io::read_pgm(out / "alpha" / "a.exe.pgm");
  EXPECT_EQ(img.width, 28u);
  EXPECT_EQ(img.height, 28u);
  EXPECT_THROW(convert_command({in / "nope", out.path(), 0}, log), InputError);
}

TEST(Commands, AttackFromCheckpointMatchesInProcess) {
  TempDir dir("cmd");
  auto cfg = load_config(kConfigs / "smoke.conf");
  std::ostringstream log;
  synth_command(cfg.dataset_seed, cfg.per_class, dir / "data");

  TrainOptions t{cfg, dir / "data", 1, dir / "m.ckpt"};
  const auto model = train_command(t, log);

  auto ds = resolve_dataset(cfg, dir / "data", log);
  auto parts = split(ds, cfg.train_fraction, cfg.effective_split_seed());
  for (auto kind : {AttackKind::fgsm, AttackKind::jsma}) {
    const double param = kind == AttackKind::jsma ? 0.05 : 0.1;
    AttackOptions a{cfg, dir / "data", dir / "m.ckpt", kind, param, dir / "row.csv", std::nullopt};
    auto res = attack_command(a, log);

    const auto victims = kind == AttackKind::jsma
                             ? capped_subset(parts.test, cfg.jsma_cap, cfg.subset_seed())
                             : parts.test.examples;
    auto direct = attack_batch(model, victims, make_spec(cfg, kind, param));
    ASSERT_EQ(res.outcome.results.size(), direct.results.size());
    for (std::size_t i = 0; i < victims.size(); ++i)
      EXPECT_EQ(res.outcome.results[i].adversarial.pixels, direct.results[i].adversarial.pixels);
    EXPECT_EQ(res.row.adv_pct, 100.0 * direct.summary.adversarial_accuracy);
    EXPECT_EQ(res.row.epochs, 1u);
    EXPECT_EQ(slurp(dir / "row.csv"), to_csv({res.row}));
  }
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("attack --attack fgsm"), 1);  // --model is required
  EXPECT_EQ(cli("run --config /nonexistent.conf"), 2);
  EXPECT_EQ(cli("attack --model " + (dir / "none.ckpt").string() + " --data " +
                (dir / "none").string()),
            2);
  EXPECT_EQ(cli("convert --in " + (dir / "none").string() + " --out " + (dir / "o").string()), 2);

  std::ofstream(dir / "bad.conf") << "[sweep]\nepochs =\n";
  EXPECT_EQ(cli("run --config " + (dir / "bad.conf").string()), 2);
  EXPECT_EQ(cli("synth --per-class 2 --seed 3 --out " + (dir / "s").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "s" / "manifest.txt"));
}

}  // namespace
