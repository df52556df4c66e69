#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cact/evaluation.hpp"
#include "cact/rng.hpp"
#include "paper_tables.hpp"

using namespace cact;
using namespace tables;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "cact_eval" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> labels(const std::string& stem, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("accuracy and f1 closed forms", "[eval]") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({1, 2, 3, 1}, {1, 2, 2, 2}) == 0.5);

  // Every prediction says class 1 while truths split between 1 and 2:
  // precision 1/2, recall 1, so F1(1) = 2/3 and F1(2) = 0 by the guard.
  const std::vector<int> preds{1, 1, 1, 1}, truths{1, 1, 2, 2};
  CHECK(f1_per_class(preds, truths, 1) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f1_per_class(preds, truths, 2) == 0.0);
  CHECK(f1_per_class(preds, truths, 3) == 0.0);

  CHECK_THROWS_AS(accuracy({}, {}), ContractError);
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), ContractError);
  CHECK_THROWS_AS(f1_per_class({}, {}, 1), ContractError);
  CHECK_THROWS_AS(f1_per_class({1, 2}, {1}, 1), ContractError);
}

TEST_CASE("metrics match a confusion-matrix oracle on random labels", "[eval]") {
  Rng rng(41);
  std::vector<int> preds, truths;
  for (int i = 0; i < 200; ++i) {
    preds.push_back(static_cast<int>(rng.index(4)));
    truths.push_back(static_cast<int>(rng.index(4)));
  }

  std::array<std::array<std::size_t, 4>, 4> confusion{};
  for (std::size_t i = 0; i < preds.size(); ++i)
    ++confusion[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(preds[i])];

  std::size_t trace = 0;
  for (std::size_t c = 0; c < 4; ++c) trace += confusion[c][c];
  CHECK(accuracy(preds, truths) == static_cast<double>(trace) / 200.0);

  for (int cls = 0; cls < 4; ++cls) {
    const auto c = static_cast<std::size_t>(cls);
    std::size_t pred_total = 0, truth_total = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      pred_total += confusion[k][c];
      truth_total += confusion[c][k];
    }
    const double p = pred_total ? static_cast<double>(confusion[c][c]) / pred_total : 0.0;
    const double r = truth_total ? static_cast<double>(confusion[c][c]) / truth_total : 0.0;
    const double want = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    CHECK(f1_per_class(preds, truths, cls) == want);
  }
}

TEST_CASE("rank cells colors the family-by-depth matrix", "[eval]") {
  auto t = rank_cells(kFamilyByDepth, labels("f", 4), labels("c", 4));
  CHECK(t.colors == kFamilyByDepthColors);
  CHECK(t.rank_sums == kFamilyByDepthRankSums);
  CHECK(t.ranks[0] == std::vector<int>{2, 1, 2, 2});
  // 92.08 / 94.25 = 0.97699..., just inside the inclusive green band.
  CHECK(92.08 / 94.25 >= 0.975);
  CHECK(t.colors[0][0] == kGr);
}

TEST_CASE("rank cells colors the pooling grid", "[eval]") {
  auto t = rank_cells(kPoolingGrid, labels("r", 6), labels("f", 4));
  CHECK(t.colors == kPoolingGridColors);
  CHECK(t.rank_sums == kPoolingGridRankSums);
  // Row 2 has a tied maximum: both cells orange, both rank 1.
  CHECK(t.ranks[2] == std::vector<int>{3, 2, 1, 1});
}

TEST_CASE("rank cells colors the eleven-method comparison", "[eval]") {
  auto t = rank_cells(kMethodComparison, labels("class", 4), labels("m", 11));
  CHECK(t.colors == kMethodComparisonColors);
  CHECK(t.rank_sums == kMethodComparisonRankSums);
  CHECK(t.rank_sums.back() == 10);
  // 0.533 / 0.615 = 0.8667 lands in the red band even though it is the
  // fourth-best cell of its row.
  CHECK(t.colors[2][3] == kRe);
}

TEST_CASE("band edges are inclusive and ties share orange", "[eval]") {
  auto t = rank_cells({{100.0, 97.5, 95.0, 90.0, 85.0, 84.9999}}, {"row"}, labels("c", 6));
  CHECK(t.colors[0] ==
        std::vector<CellColor>{kOr, kGr, kBl, kYe, kRe, kNo});
  CHECK(t.rank_sums == std::vector<int>{1, 2, 3, 4, 5, 6});

  auto tie = rank_cells({{5.0, 5.0, 3.0}}, {"row"}, labels("c", 3));
  CHECK(tie.colors[0] == std::vector<CellColor>{kOr, kOr, kNo});

  auto flat = rank_cells({{7.0, 7.0, 7.0}}, {"row"}, labels("c", 3));
  CHECK(flat.colors[0] == std::vector<CellColor>{kOr, kOr, kOr});
  CHECK(flat.rank_sums == std::vector<int>{1, 1, 1});
}

TEST_CASE("row scaling and column permutation invariance", "[eval]") {
  Rng rng(17);
  std::vector<std::vector<double>> m(5, std::vector<double>(6));
  for (auto& row : m)
    for (auto& v : row) v = 50.0 + 50.0 * rng.uniform();
  auto base = rank_cells(m, labels("r", 5), labels("c", 6));

  auto scaled = m;
  for (std::size_t i = 0; i < scaled.size(); ++i)
    for (auto& v : scaled[i]) v *= 1.0 + 0.7 * static_cast<double>(i);
  auto t2 = rank_cells(scaled, labels("r", 5), labels("c", 6));
  CHECK(t2.colors == base.colors);
  CHECK(t2.rank_sums == base.rank_sums);

  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<std::vector<double>> permuted(5, std::vector<double>(6));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) permuted[i][j] = m[i][perm[j]];
  auto t3 = rank_cells(permuted, labels("r", 5), labels("c", 6));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(t3.colors[i][j] == base.colors[i][perm[j]]);
  for (std::size_t j = 0; j < 6; ++j) CHECK(t3.rank_sums[j] == base.rank_sums[perm[j]]);
}

TEST_CASE("rank cells validates its inputs", "[eval]") {
  CHECK_THROWS_AS(rank_cells({}, {}, {}), ContractError);
  CHECK_THROWS_AS(rank_cells({{1.0, 2.0}, {1.0}}, labels("r", 2), labels("c", 2)),
                  ContractError);
  CHECK_THROWS_AS(rank_cells({{1.0, 2.0}}, labels("r", 2), labels("c", 2)), ContractError);
  CHECK_THROWS_AS(rank_cells({{1.0, 2.0}}, labels("r", 1), labels("c", 3)), ContractError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rank_cells({{nan, nan}}, labels("r", 1), labels("c", 2)), ContractError);
}

TEST_CASE("matrix csv round-trips and ingests fold tables", "[eval]") {
  NamedMatrix m;
  m.corner = "Network";
  m.row_labels = {"alpha", "beta"};
  m.col_labels = {"Fold-1", "Fold-2", "Mean"};
  m.values = {{0.1 + 0.2, 1.0 / 3.0, 94.25}, {2e-17, -5.5, 0.0}};
  auto back = matrix_from_csv(matrix_to_csv(m));
  CHECK(back.corner == m.corner);
  CHECK(back.row_labels == m.row_labels);
  CHECK(back.col_labels == m.col_labels);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    for (std::size_t j = 0; j < m.values[i].size(); ++j)
      CHECK(back.values[i][j] == m.values[i][j]);

  FoldTable ft;
  ft.k = 3;
  ft.rows = {{"reference5", {0.5, 0.75, 1.0}, 0.75, 0.2041241452319315}};
  auto ingested = matrix_from_csv(ft.to_csv());
  CHECK(ingested.corner == "label");
  CHECK(ingested.col_labels ==
        std::vector<std::string>{"Fold-1", "Fold-2", "Fold-3", "Mean", "Std."});
  CHECK(ingested.row_labels == std::vector<std::string>{"reference5"});
  CHECK(ingested.values[0][0] == Catch::Approx(0.5));
  CHECK(ingested.values[0][3] == Catch::Approx(0.75));

  CHECK_THROWS_AS(matrix_from_csv(""), IoError);
  CHECK_THROWS_AS(matrix_from_csv("label\n"), IoError);
  CHECK_THROWS_AS(matrix_from_csv("label,a\nrow,1,2\n"), IoError);
  CHECK_THROWS_AS(matrix_from_csv("label,a\nrow,oops\n"), IoError);
}

TEST_CASE("render report writes the full bundle", "[eval]") {
  auto dir = fresh_dir("bundle");
  auto table = rank_cells(kFamilyByDepth, labels("f", 4), labels("c", 4));

  std::vector<HistoryRow> history;
  for (std::size_t e = 0; e < 3; ++e) {
    const double fe = static_cast<double>(e);
    history.push_back({e, 1.5 - 0.3 * fe, 0.5 + 0.1 * fe, "standard", 0, 7});
  }
  history.push_back({0, 1.2, 0.6, "weighted", 1, 7});

  GradeReport gr;
  gr.plan = plan_windows(2, 3, 2, 1);
  gr.vote = vote_windows({1, 1, 2, 0});
  gr.window_probs.assign(gr.plan.offsets.size(), {0.1, 0.6, 0.2, 0.1});

  auto bundle = render_report(table, history, {gr}, dir);

  const std::string text = slurp(bundle.report_txt);
  CHECK(text.find("Rank-sum 10 7 8 5") != std::string::npos);
  CHECK(text.find("(orange)") != std::string::npos);
  CHECK(text.find("(blue)") != std::string::npos);
  CHECK(text.find("Training curves") != std::string::npos);
  CHECK(text.find("standard") != std::string::npos);
  CHECK(text.find("weighted") != std::string::npos);

  auto values = matrix_from_csv(slurp(bundle.values_csv));
  CHECK(values.values == kFamilyByDepth);
  CHECK(values.row_labels == labels("f", 4));

  const std::string colors = slurp(bundle.colors_csv);
  CHECK(colors.find("f0,green,orange,green,green") != std::string::npos);

  auto ranks = matrix_from_csv(slurp(bundle.ranks_csv));
  CHECK(ranks.row_labels.back() == "Rank-sum");
  CHECK(ranks.values.back() == std::vector<double>{10.0, 7.0, 8.0, 5.0});

  auto curves = read_history_csv(bundle.curves_csv.string());
  REQUIRE(curves.size() == history.size());
  CHECK(curves[2].train_loss == history[2].train_loss);
  CHECK(curves[3].strategy == "weighted");

  REQUIRE(bundle.vote_maps.size() == 1);
  std::istringstream overlay(slurp(bundle.vote_maps[0]));
  std::string line;
  std::getline(overlay, line);
  CHECK(line == "top,left,cells,class,color");
  std::size_t rows = 0;
  while (std::getline(overlay, line))
    if (!line.empty()) ++rows;
  CHECK(rows == gr.plan.offsets.size());
}

TEST_CASE("render report omits curves without history and validates shape", "[eval]") {
  auto dir = fresh_dir("no_history");
  auto table = rank_cells({{1.0, 2.0}}, {"only"}, labels("c", 2));
  auto bundle = render_report(table, {}, {}, dir);
  CHECK(bundle.curves_csv.empty());
  CHECK_FALSE(fs::exists(dir / "training_curves.csv"));
  const std::string text = slurp(bundle.report_txt);
  CHECK(text.find("Training curves") == std::string::npos);
  CHECK(text.find("Rank-sum 6 1") != std::string::npos);
  CHECK(bundle.vote_maps.empty());

  auto broken = table;
  broken.col_labels.push_back("extra");
  CHECK_THROWS_AS(render_report(broken, {}, {}, dir), ContractError);
  auto broken2 = table;
  broken2.rank_sums.clear();
  CHECK_THROWS_AS(render_report(broken2, {}, {}, dir), ContractError);
}
