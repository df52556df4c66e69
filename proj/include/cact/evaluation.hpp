#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cact/errors.hpp"
#include "cact/inference.hpp"
#include "cact/train.hpp"

namespace cact {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& truths) {
  if (preds.empty()) throw ContractError("accuracy: empty input");
  if (preds.size() != truths.size())
    throw ContractError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(truths.size()) + " truths");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == truths[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

inline double f1_per_class(const std::vector<int>& preds, const std::vector<int>& truths,
                           int cls) {
  if (preds.empty()) throw ContractError("f1_per_class: empty input");
  if (preds.size() != truths.size())
    throw ContractError("f1_per_class: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(truths.size()) + " truths");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == cls, t = truths[i] == cls;
    if (p && t) ++tp;
    else if (p) ++fp;
    else if (t) ++fn;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Rank-sum comparison protocol.
// ---------------------------------------------------------------------------

enum class CellColor { orange, green, blue, yellow, red, none };

inline std::string to_string(CellColor c) {
  switch (c) {
    case CellColor::orange: return "orange";
    case CellColor::green: return "green";
    case CellColor::blue: return "blue";
    case CellColor::yellow: return "yellow";
    case CellColor::red: return "red";
    case CellColor::none: return "none";
  }
  return "?";
}

inline int color_rank(CellColor c) { return static_cast<int>(c) + 1; }

struct RankTable {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<CellColor>> colors;
  std::vector<std::vector<int>> ranks;
  std::vector<int> rank_sums;  // per column
};

// Colors each cell by its ratio to the row maximum with inclusive bands:
// the maximum itself (all of them, on ties) is orange, then >= 0.975 green,
// >= 0.95 blue, >= 0.90 yellow, >= 0.85 red, anything lower uncolored.
inline RankTable rank_cells(const std::vector<std::vector<double>>& values,
                            std::vector<std::string> row_labels,
                            std::vector<std::string> col_labels) {
  if (values.empty() || values[0].empty())
    throw ContractError("rank_cells: empty accuracy matrix");
  const std::size_t cols = values[0].size();
  for (const auto& row : values)
    if (row.size() != cols) throw ContractError("rank_cells: ragged accuracy matrix");
  if (row_labels.size() != values.size())
    throw ContractError("rank_cells: " + std::to_string(row_labels.size()) +
                        " row labels for " + std::to_string(values.size()) + " rows");
  if (col_labels.size() != cols)
    throw ContractError("rank_cells: " + std::to_string(col_labels.size()) +
                        " column labels for " + std::to_string(cols) + " columns");

  RankTable t;
  t.row_labels = std::move(row_labels);
  t.col_labels = std::move(col_labels);
  t.values = values;
  t.rank_sums.assign(cols, 0);
  for (const auto& row : values) {
    double best = row[0];
    for (double v : row) best = std::max(best, v);
    if (!std::isfinite(best))
      throw ContractError("rank_cells: row has no finite maximum");
    std::vector<CellColor> crow;
    std::vector<int> rrow;
    for (std::size_t j = 0; j < cols; ++j) {
      CellColor c = CellColor::none;
      if (row[j] == best) {
        c = CellColor::orange;
      } else {
        const double ratio = row[j] / best;
        if (ratio >= 0.975) c = CellColor::green;
        else if (ratio >= 0.95) c = CellColor::blue;
        else if (ratio >= 0.90) c = CellColor::yellow;
        else if (ratio >= 0.85) c = CellColor::red;
      }
      crow.push_back(c);
      rrow.push_back(color_rank(c));
      t.rank_sums[j] += color_rank(c);
    }
    t.colors.push_back(std::move(crow));
    t.ranks.push_back(std::move(rrow));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Labelled matrix CSV, the ingest schema shared by fold tables and reports.
// ---------------------------------------------------------------------------

struct NamedMatrix {
  std::string corner = "label";
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;
};

inline std::string matrix_to_csv(const NamedMatrix& m) {
  std::ostringstream out;
  out << m.corner;
  for (const auto& c : m.col_labels) out << ',' << c;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < m.row_labels.size(); ++i) {
    out << m.row_labels[i];
    for (double v : m.values[i]) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  return out.str();
}

inline NamedMatrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw IoError("matrix csv: missing header line");
  NamedMatrix m;
  {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, m.corner, ',');
    while (std::getline(ss, field, ',')) m.col_labels.push_back(field);
  }
  if (m.col_labels.empty()) throw IoError("matrix csv: header names no columns");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    m.row_labels.push_back(field);
    std::vector<double> row;
    while (std::getline(ss, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw IoError("matrix csv: bad number '" + field + "' in row " + m.row_labels.back());
      }
    }
    if (row.size() != m.col_labels.size())
      throw IoError("matrix csv: row " + m.row_labels.back() + " has " +
                    std::to_string(row.size()) + " values for " +
                    std::to_string(m.col_labels.size()) + " columns");
    m.values.push_back(std::move(row));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Report bundle.
// ---------------------------------------------------------------------------

struct ReportBundle {
  std::filesystem::path report_txt;
  std::filesystem::path values_csv;
  std::filesystem::path colors_csv;
  std::filesystem::path ranks_csv;
  std::filesystem::path curves_csv;               // empty when no history given
  std::vector<std::filesystem::path> vote_maps;   // one overlay per grade report
};

namespace detail {

inline void validate_rank_table(const RankTable& t) {
  if (t.values.empty()) throw ContractError("render_report: empty rank table");
  if (t.row_labels.size() != t.values.size() || t.colors.size() != t.values.size() ||
      t.ranks.size() != t.values.size())
    throw ContractError("render_report: row labels and matrices disagree");
  for (std::size_t i = 0; i < t.values.size(); ++i)
    if (t.values[i].size() != t.col_labels.size() ||
        t.colors[i].size() != t.col_labels.size() || t.ranks[i].size() != t.col_labels.size())
      throw ContractError("render_report: column labels and matrices disagree");
  if (t.rank_sums.size() != t.col_labels.size())
    throw ContractError("render_report: rank-sum length disagrees with columns");
}

}  // namespace detail

// Writes the comparison table (text with color names plus CSV matrices),
// training curves when history rows exist, and one overlay per vote map.
inline ReportBundle render_report(const RankTable& table,
                                  const std::vector<HistoryRow>& history,
                                  const std::vector<GradeReport>& vote_maps,
                                  const std::filesystem::path& out_dir) {
  detail::validate_rank_table(table);
  std::filesystem::create_directories(out_dir);
  ReportBundle bundle;

  bundle.report_txt = out_dir / "report.txt";
  {
    std::ofstream out(bundle.report_txt, std::ios::trunc);
    if (!out) throw IoError("cannot write " + bundle.report_txt.string());
    out << "Method comparison\n\n";
    char buf[64];
    for (std::size_t i = 0; i < table.row_labels.size(); ++i) {
      out << table.row_labels[i] << ':';
      for (std::size_t j = 0; j < table.col_labels.size(); ++j) {
        std::snprintf(buf, sizeof(buf), " %s=%.6g (%s)", table.col_labels[j].c_str(),
                      table.values[i][j], to_string(table.colors[i][j]).c_str());
        out << buf;
      }
      out << "\n";
    }
    out << "Rank-sum";
    for (int s : table.rank_sums) out << ' ' << s;
    out << "\n";
    if (!history.empty()) {
      out << "\nTraining curves\n";
      out << "strategies:";
      std::vector<std::string> seen;
      for (const auto& h : history)
        if (std::find(seen.begin(), seen.end(), h.strategy) == seen.end()) {
          seen.push_back(h.strategy);
          out << ' ' << h.strategy;
        }
      out << "\nseries in " << (out_dir / "training_curves.csv").filename().string() << "\n";
    }
  }

  auto write_text = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
  };

  NamedMatrix values{"label", table.row_labels, table.col_labels, table.values};
  bundle.values_csv = out_dir / "values.csv";
  write_text(bundle.values_csv, matrix_to_csv(values));

  bundle.colors_csv = out_dir / "colors.csv";
  {
    std::ostringstream out;
    out << "label";
    for (const auto& c : table.col_labels) out << ',' << c;
    out << "\n";
    for (std::size_t i = 0; i < table.row_labels.size(); ++i) {
      out << table.row_labels[i];
      for (const auto& c : table.colors[i]) out << ',' << to_string(c);
      out << "\n";
    }
    write_text(bundle.colors_csv, out.str());
  }

  bundle.ranks_csv = out_dir / "ranks.csv";
  {
    NamedMatrix ranks{"label", table.row_labels, table.col_labels, {}};
    for (const auto& row : table.ranks)
      ranks.values.emplace_back(row.begin(), row.end());
    ranks.row_labels.push_back("Rank-sum");
    ranks.values.emplace_back(table.rank_sums.begin(), table.rank_sums.end());
    write_text(bundle.ranks_csv, matrix_to_csv(ranks));
  }

  if (!history.empty()) {
    bundle.curves_csv = out_dir / "training_curves.csv";
    write_history_csv(bundle.curves_csv.string(), history);
  }

  for (std::size_t i = 0; i < vote_maps.size(); ++i) {
    std::filesystem::path p = out_dir / ("vote_map_" + std::to_string(i) + ".csv");
    write_window_overlay(p.string(), vote_maps[i]);
    bundle.vote_maps.push_back(std::move(p));
  }
  return bundle;
}

}  // namespace cact
