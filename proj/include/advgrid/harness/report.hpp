#pragma once

// Result rows: canonical CSV plus aligned plain-text tables, one per attack.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace advgrid::harness {

inline constexpr const char* kCsvHeader =
    "attack,epochs,param,clean_acc,adv_acc,defended_acc,avg_feat_pct,wall_s,seed";

struct ReportRow {
  std::string attack;  // fgsm | bim | bim[fgsm-trained] | jsma
  std::size_t epochs = 0;
  double param = 0.0;  // epsilon or gamma
  double clean_pct = 0.0;
  double adv_pct = 0.0;
  std::optional<double> defended_pct;
  std::optional<double> feat_pct;
  std::optional<double> wall_s;
  std::uint64_t seed = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string opt(const std::optional<double>& v, int digits) {
  return v ? fixed(*v, digits) : "n/a";
}

inline std::optional<double> parse_opt(const std::string& s) {
  if (s == "n/a") return std::nullopt;
  return std::stod(s);
}

}  // namespace detail

inline std::string csv_line(const ReportRow& r) {
  std::ostringstream os;
  os << r.attack << ',' << r.epochs << ',' << detail::general(r.param) << ','
     << detail::fixed(r.clean_pct, 2) << ',' << detail::fixed(r.adv_pct, 2) << ','
     << detail::opt(r.defended_pct, 2) << ',' << detail::opt(r.feat_pct, 2) << ','
     << detail::opt(r.wall_s, 3) << ',' << r.seed;
  return os.str();
}

inline std::string to_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) out += csv_line(r) + "\n";
  return out;
}

inline std::vector<ReportRow> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::runtime_error("results CSV: unexpected header");
  std::vector<ReportRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9)
      throw std::runtime_error("results CSV line " + std::to_string(line_no) +
                               ": expected 9 fields");
    try {
      ReportRow r;
      r.attack = f[0];
      r.epochs = std::stoul(f[1]);
      r.param = std::stod(f[2]);
      r.clean_pct = std::stod(f[3]);
      r.adv_pct = std::stod(f[4]);
      r.defended_pct = detail::parse_opt(f[5]);
      r.feat_pct = detail::parse_opt(f[6]);
      r.wall_s = detail::parse_opt(f[7]);
      r.seed = std::stoull(f[8]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("results CSV line " + std::to_string(line_no) +
                               ": malformed number");
    }
  }
  return rows;
}

inline std::vector<ReportRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in);
}

inline std::string attack_title(const std::string& attack) {
  if (attack == "fgsm") return "Fast Gradient Sign Method Attack";
  if (attack == "bim") return "Basic Iterative Method Attack";
  if (attack == "bim[fgsm-trained]")
    return "Basic Iterative Method Attack (adversarial training on FGSM examples)";
  if (attack == "jsma") return "Jacobian-based Saliency Map Attack";
  return attack;
}

/// One aligned table per attack label, in first-appearance order.
inline std::string render_tables(const std::vector<ReportRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ReportRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.attack)) order.push_back(r.attack);
    groups[r.attack].push_back(&r);
  }

  std::ostringstream out;
  for (const auto& attack : order) {
    const bool jsma = attack == "jsma";
    std::vector<std::string> head{
        "Epochs", jsma ? "Gamma" : "Epsilon", "Test accuracy on Legitimate Samples (%)",
        "Test accuracy of Adversarial Examples (%)",
        jsma ? "Average number of Features Perturbed (%)"
             : "Test accuracy after Adversarial training (%)"};
    std::vector<std::vector<std::string>> body;
    for (const auto* r : groups[attack]) {
      body.push_back({std::to_string(r->epochs), detail::general(r->param),
                      detail::fixed(r->clean_pct, 2), detail::fixed(r->adv_pct, 2),
                      jsma ? detail::opt(r->feat_pct, 2) : detail::opt(r->defended_pct, 2)});
    }
    std::vector<std::size_t> width(head.size());
    for (std::size_t c = 0; c < head.size(); ++c) {
      width[c] = head[c].size();
      for (const auto& row : body) width[c] = std::max(width[c], row[c].size());
    }
    auto rule = [&] {
      out << '+';
      for (auto w : width) out << std::string(w + 2, '-') << '+';
      out << '\n';
    };
    auto emit = [&](const std::vector<std::string>& cells) {
      out << '|';
      for (std::size_t c = 0; c < cells.size(); ++c)
        out << ' ' << std::setw(static_cast<int>(width[c])) << cells[c] << " |";
      out << '\n';
    };
    out << attack_title(attack) << '\n';
    rule();
    emit(head);
    rule();
    for (const auto& row : body) emit(row);
    rule();
    out << '\n';
  }
  return out.str();
}

}  // namespace advgrid::harness
