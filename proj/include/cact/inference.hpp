#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cact/context_net.hpp"
#include "cact/data.hpp"
#include "cact/errors.hpp"
#include "cact/train.hpp"

namespace cact {

struct WindowPlan {
  std::size_t window_cells = 0;
  std::size_t stride_cells = 0;
  std::size_t rows = 0;  // offsets per axis
  std::size_t cols = 0;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // (top, left), row-major
};

namespace detail {

// Offsets along one axis: every stride step whose window fits strictly inside,
// then one final offset clamped so the window abuts the far edge.
inline std::vector<std::size_t> axis_offsets(std::size_t extent, std::size_t window,
                                             std::size_t stride) {
  std::vector<std::size_t> offs;
  for (std::size_t o = 0;; o += stride) {
    if (o + window >= extent) {
      offs.push_back(extent - window);
      break;
    }
    offs.push_back(o);
  }
  return offs;
}

}  // namespace detail

inline WindowPlan plan_windows(std::size_t cube_rows, std::size_t cube_cols,
                               std::size_t window_cells, std::size_t stride_cells) {
  if (window_cells < 1 || stride_cells < 1)
    throw ContractError("plan_windows: window and stride must be at least 1 cell");
  if (window_cells > cube_rows || window_cells > cube_cols)
    throw ContractError("plan_windows: window " + std::to_string(window_cells) +
                        " exceeds cube " + std::to_string(cube_rows) + "x" +
                        std::to_string(cube_cols));
  WindowPlan plan;
  plan.window_cells = window_cells;
  plan.stride_cells = stride_cells;
  const auto row_offs = detail::axis_offsets(cube_rows, window_cells, stride_cells);
  const auto col_offs = detail::axis_offsets(cube_cols, window_cells, stride_cells);
  plan.rows = row_offs.size();
  plan.cols = col_offs.size();
  plan.offsets.reserve(plan.rows * plan.cols);
  for (std::size_t r : row_offs)
    for (std::size_t c : col_offs) plan.offsets.emplace_back(r, c);
  return plan;
}

enum class GradeOutcome { graded, no_glandular_region };

struct VoteResult {
  GradeOutcome outcome = GradeOutcome::no_glandular_region;
  int grade = -1;  // class id in {1, 2, 3} when outcome is graded
  bool tie = false;
  std::array<std::size_t, kClasses> tally{};  // votes per class, background included
  std::vector<int> window_class;              // per window, plan order
};

// Majority vote over per-window predictions. Background windows are counted
// in the tally but never compete for the grade; a tie is broken toward the
// higher grade and flagged.
inline VoteResult vote_windows(std::vector<int> window_class) {
  VoteResult v;
  for (int c : window_class) {
    if (c < 0 || c >= static_cast<int>(kClasses))
      throw ContractError("vote_windows: class id " + std::to_string(c) + " out of range");
    ++v.tally[static_cast<std::size_t>(c)];
  }
  v.window_class = std::move(window_class);
  std::size_t best = 0;
  for (std::size_t c = 1; c < kClasses; ++c) best = std::max(best, v.tally[c]);
  if (best == 0) return v;  // every window predicted background
  v.outcome = GradeOutcome::graded;
  std::size_t winners = 0;
  for (std::size_t c = 1; c < kClasses; ++c) {
    if (v.tally[c] != best) continue;
    ++winners;
    v.grade = static_cast<int>(c);  // ascending scan leaves the highest grade
  }
  v.tie = winners > 1;
  return v;
}

struct GradeReport {
  WindowPlan plan;
  VoteResult vote;
  std::vector<std::array<double, kClasses>> window_probs;  // plan order
  std::size_t cube_rows = 0;
  std::size_t cube_cols = 0;
  std::size_t extractor_forwards = 0;
};

namespace detail {

inline int argmax_probs(const Tensor& probs) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.extent(1); ++c)
    if (probs.at({0, c}) > probs.at({0, best})) best = c;
  return static_cast<int>(best);
}

// Pixel crop of a block of whole cells, zero-padded past the image edge to
// mirror the tiling pad.
inline Tensor crop_cells(const Tensor& image, std::size_t top, std::size_t left,
                         std::size_t window_cells, std::size_t patch_size) {
  const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
  const std::size_t side = window_cells * patch_size;
  const std::size_t y0 = top * patch_size, x0 = left * patch_size;
  std::vector<double> v(C * side * side, 0.0);
  const auto& src = image.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < side && y0 + y < H; ++y) {
      const std::size_t n = x0 < W ? std::min(side, W - x0) : 0;
      for (std::size_t x = 0; x < n; ++x)
        v[(c * side + y) * side + x] = src[(c * H + y0 + y) * W + x0 + x];
    }
  return Tensor::from({C, side, side}, std::move(v));
}

inline GradeReport grade_from_probs(WindowPlan plan,
                                    std::vector<std::array<double, kClasses>> probs,
                                    std::size_t rows, std::size_t cols, std::size_t forwards) {
  GradeReport report;
  std::vector<int> classes(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kClasses; ++c)
      if (probs[i][c] > probs[i][best]) best = c;
    classes[i] = static_cast<int>(best);
  }
  report.plan = std::move(plan);
  report.vote = vote_windows(std::move(classes));
  report.window_probs = std::move(probs);
  report.cube_rows = rows;
  report.cube_cols = cols;
  report.extractor_forwards = forwards;
  return report;
}

}  // namespace detail

// Whole-image grading on the cached path: the extractor runs exactly once per
// grid cell (counter-asserted), then every window is classified from a slice
// of the shared feature-cube.
inline GradeReport grade_image(ContextModel& model, const Tensor& image,
                               std::size_t window_cells, std::size_t stride_cells) {
  NoGrad guard;
  model.extractor().reset_forward_count();
  FeatureCube cube = model.encode_image(image, false);
  const std::size_t M = cube.rows(), N = cube.cols();
  const std::size_t forwards = model.extractor().forward_count();
  if (forwards != M * N)
    throw ContractError("grade_image: extractor ran " + std::to_string(forwards) +
                        " times for a " + std::to_string(M) + "x" + std::to_string(N) +
                        " cube; feature reuse is broken");
  WindowPlan plan = plan_windows(M, N, window_cells, stride_cells);
  std::vector<std::array<double, kClasses>> probs;
  probs.reserve(plan.offsets.size());
  for (const auto& [top, left] : plan.offsets) {
    Tensor window = slice_spatial(cube.grid, top, left, window_cells, window_cells);
    Tensor p = model.net().forward(window, false).probs;
    std::array<double, kClasses> row{};
    for (std::size_t c = 0; c < kClasses; ++c) row[c] = p.at({0, c});
    probs.push_back(row);
  }
  return detail::grade_from_probs(std::move(plan), std::move(probs), M, N, forwards);
}

// Reference path without feature reuse: each window re-encodes its image crop
// from pixels. Exists to validate the cached path against it.
inline GradeReport grade_image_naive(ContextModel& model, const Tensor& image,
                                     std::size_t window_cells, std::size_t stride_cells) {
  NoGrad guard;
  const std::size_t p = model.spec().extractor.patch_size;
  const std::size_t M = (image.extent(1) + p - 1) / p;
  const std::size_t N = (image.extent(2) + p - 1) / p;
  WindowPlan plan = plan_windows(M, N, window_cells, stride_cells);
  model.extractor().reset_forward_count();
  std::vector<std::array<double, kClasses>> probs;
  probs.reserve(plan.offsets.size());
  for (const auto& [top, left] : plan.offsets) {
    Tensor crop = detail::crop_cells(image, top, left, window_cells, p);
    FeatureCube cube = model.encode_image(crop, false);
    Tensor pr = model.net().forward(cube.grid, false).probs;
    std::array<double, kClasses> row{};
    for (std::size_t c = 0; c < kClasses; ++c) row[c] = pr.at({0, c});
    probs.push_back(row);
  }
  return detail::grade_from_probs(std::move(plan), std::move(probs), M, N,
                                  model.extractor().forward_count());
}

// Patch-only baseline: classify every cell independently with the pretrained
// patch classifier and vote, with no context stage at all.
inline GradeReport grade_by_patch_votes(PatchClassifier& clf, const Tensor& image,
                                        std::size_t batch = 16) {
  NoGrad guard;
  const std::size_t p = clf.spec().patch_size;
  std::vector<TilePatch> tiles = tile(image, p);
  const std::size_t M = (image.extent(1) + p - 1) / p;
  const std::size_t N = (image.extent(2) + p - 1) / p;
  std::vector<std::array<double, kClasses>> probs(tiles.size());
  for (std::size_t lo = 0; lo < tiles.size(); lo += batch) {
    const std::size_t hi = std::min(tiles.size(), lo + batch);
    const std::size_t C = tiles[0].patch.extent(0);
    std::vector<double> stacked((hi - lo) * C * p * p);
    for (std::size_t t = lo; t < hi; ++t) {
      const auto& v = tiles[t].patch.values();
      std::copy(v.begin(), v.end(), stacked.begin() + (t - lo) * C * p * p);
    }
    Tensor out = clf.forward(Tensor::from({hi - lo, C, p, p}, std::move(stacked)), false);
    for (std::size_t t = lo; t < hi; ++t)
      for (std::size_t c = 0; c < kClasses; ++c) probs[t][c] = out.at({t - lo, c});
  }
  WindowPlan plan;  // one single-cell "window" per grid cell
  plan.window_cells = 1;
  plan.stride_cells = 1;
  plan.rows = M;
  plan.cols = N;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) plan.offsets.emplace_back(i, j);
  return detail::grade_from_probs(std::move(plan), std::move(probs), M, N, tiles.size());
}

// ---------------------------------------------------------------------------
// Cost accounting.
// ---------------------------------------------------------------------------

struct CostReport {
  std::size_t cells = 0;
  std::size_t windows = 0;
  std::size_t extractor_macs_per_patch = 0;
  std::size_t context_macs_per_window = 0;
  double extractor_macs = 0.0;
  double context_macs = 0.0;
  double overhead_ratio = 0.0;

  std::string to_text() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "extractor stage: %zu patches x %zu MACs = %.0f MACs\n",
                  cells, extractor_macs_per_patch, extractor_macs);
    out += buf;
    std::snprintf(buf, sizeof(buf), "context stage: %zu windows x %zu MACs = %.0f MACs\n",
                  windows, context_macs_per_window, context_macs);
    out += buf;
    std::snprintf(buf, sizeof(buf), "overhead_ratio: %.6f\n", overhead_ratio);
    out += buf;
    return out;
  }
};

// Analytic multiply-accumulate budget of grading one image: the extractor
// runs once per cell, the context network once per window.
inline CostReport cost_report(std::size_t image_h, std::size_t image_w, std::size_t patch_size,
                              std::size_t window_cells, std::size_t stride_cells,
                              const ContextModel& model) {
  if (patch_size != model.spec().extractor.patch_size)
    throw ContractError("cost_report: patch_size " + std::to_string(patch_size) +
                        " does not match the model's extractor patch size " +
                        std::to_string(model.spec().extractor.patch_size));
  const std::size_t M = (image_h + patch_size - 1) / patch_size;
  const std::size_t N = (image_w + patch_size - 1) / patch_size;
  WindowPlan plan = plan_windows(M, N, window_cells, stride_cells);
  CostReport r;
  r.cells = M * N;
  r.windows = plan.offsets.size();
  r.extractor_macs_per_patch = model.extractor().mac_count();
  r.context_macs_per_window = model.net().mac_count(window_cells);
  r.extractor_macs = static_cast<double>(r.cells) * static_cast<double>(r.extractor_macs_per_patch);
  r.context_macs = static_cast<double>(r.windows) * static_cast<double>(r.context_macs_per_window);
  r.overhead_ratio = r.context_macs / r.extractor_macs;
  return r;
}

// ---------------------------------------------------------------------------
// Per-window artifacts.
// ---------------------------------------------------------------------------

inline std::string grade_color(int cls) {
  switch (cls) {
    case 1: return "green";
    case 2: return "blue";
    case 3: return "red";
    default: return "gray";
  }
}

inline void write_window_csv(const std::string& path, const GradeReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write window map: " + path);
  out << "row,col,class";
  for (std::size_t c = 0; c < kClasses; ++c) out << ",p_" << class_name(static_cast<int>(c));
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < report.plan.offsets.size(); ++i) {
    out << report.plan.offsets[i].first << ',' << report.plan.offsets[i].second << ','
        << class_name(report.vote.window_class[i]);
    for (std::size_t c = 0; c < kClasses; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", report.window_probs[i][c]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

// Rectangle per window for plotting, colored by predicted grade.
inline void write_window_overlay(const std::string& path, const GradeReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write overlay: " + path);
  out << "top,left,cells,class,color\n";
  for (std::size_t i = 0; i < report.plan.offsets.size(); ++i) {
    const int cls = report.vote.window_class[i];
    out << report.plan.offsets[i].first << ',' << report.plan.offsets[i].second << ','
        << report.plan.window_cells << ',' << class_name(cls) << ',' << grade_color(cls)
        << "\n";
  }
}

}  // namespace cact
