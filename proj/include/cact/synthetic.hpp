#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cact/data.hpp"
#include "cact/errors.hpp"
#include "cact/rng.hpp"
#include "cact/tensor.hpp"

namespace cact {

// Synthetic grading task where the class is carried by the spatial
// arrangement of a shared ring motif, not by the motif itself:
//   normal = rings on a crisp lattice
//   low    = the same lattice with per-ring jitter
//   high   = rings scattered by minimum-distance dart throwing
//   background = texture-free noise with occasional faint clutter rings
// A fraction of low/high images is "deceptive": a contiguous majority
// subregion keeps the crisp arrangement while the rest carries the grade,
// so per-patch majority votes flip but whole-image context does not.
struct SyntheticSpec {
  std::size_t image_size = 448;
  std::size_t patch_size = 56;
  double motif_spacing = 19.0;
  double ring_radius = 5.5;    // radial distance of peak ring intensity
  double ring_sigma = 1.2;     // radial profile width
  double ring_contrast = 0.55;
  double base_intensity = 0.15;
  double noise_sigma = 0.03;
  double jitter_amplitude = 0.30;  // fraction of spacing, low grade
  double scatter_min_dist = 0.45;  // fraction of spacing, high grade
  double deceptive_fraction_train = 0.6;
  double deceptive_fraction_val = 0.4;
  double deceptive_fraction_test = 0.8;
  double deceptive_share_lo = 0.62;  // crisp subregion share of tissue cells
  double deceptive_share_hi = 0.72;
  double background_margin_prob = 0.3;
  double clutter_contrast = 0.8;  // relative to ring_contrast
  std::uint64_t seed = 7;
};

struct GenerationSummary {
  std::size_t images = 0;
  double min_motif_overlap = 1.0;  // worst pairwise statistics overlap
};

namespace detail {

struct Point {
  double x, y;
};

struct CellRect {  // half-open cell coordinates
  std::size_t top = 0, left = 0, rows = 0, cols = 0;
  bool contains_px(double x, double y, std::size_t p) const {
    return y >= top * p && y < (top + rows) * p && x >= left * p && x < (left + cols) * p;
  }
};

inline std::vector<Point> lattice_points(const SyntheticSpec& s, const CellRect& tissue,
                                         Rng& rng, double wobble) {
  const double p = static_cast<double>(s.patch_size);
  const double x0 = tissue.left * p, y0 = tissue.top * p;
  const double x1 = x0 + tissue.cols * p, y1 = y0 + tissue.rows * p;
  const double phase_x = rng.uniform(0.0, s.motif_spacing);
  const double phase_y = rng.uniform(0.0, s.motif_spacing);
  std::vector<Point> pts;
  for (double y = y0 + phase_y; y < y1; y += s.motif_spacing)
    for (double x = x0 + phase_x; x < x1; x += s.motif_spacing) {
      double px = x + rng.uniform(-wobble, wobble);
      double py = y + rng.uniform(-wobble, wobble);
      px = std::min(x1 - 1.0, std::max(x0 + 1.0, px));
      py = std::min(y1 - 1.0, std::max(y0 + 1.0, py));
      pts.push_back({px, py});
    }
  return pts;
}

inline std::vector<Point> scatter_points(const SyntheticSpec& s, const CellRect& tissue,
                                         Rng& rng, std::size_t target,
                                         const CellRect* exclude) {
  const double p = static_cast<double>(s.patch_size);
  const double x0 = tissue.left * p, y0 = tissue.top * p;
  const double x1 = x0 + tissue.cols * p, y1 = y0 + tissue.rows * p;
  const double dmin = s.scatter_min_dist * s.motif_spacing;
  std::vector<Point> pts;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 80 * target + 80;
  while (pts.size() < target && attempts < max_attempts) {
    ++attempts;
    const double x = rng.uniform(x0 + 1.0, x1 - 1.0);
    const double y = rng.uniform(y0 + 1.0, y1 - 1.0);
    if (exclude && exclude->contains_px(x, y, s.patch_size)) continue;
    bool ok = true;
    for (const Point& q : pts)
      if ((q.x - x) * (q.x - x) + (q.y - y) * (q.y - y) < dmin * dmin) {
        ok = false;
        break;
      }
    if (ok) pts.push_back({x, y});
  }
  return pts;
}

inline void stamp_ring(std::vector<double>& img, std::size_t size, const SyntheticSpec& s,
                       const Point& c, double contrast) {
  const double reach = s.ring_radius + 3.0 * s.ring_sigma;
  const long lo_y = std::max(0L, static_cast<long>(std::floor(c.y - reach)));
  const long hi_y = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(c.y + reach)));
  const long lo_x = std::max(0L, static_cast<long>(std::floor(c.x - reach)));
  const long hi_x = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(c.x + reach)));
  for (long y = lo_y; y <= hi_y; ++y)
    for (long x = lo_x; x <= hi_x; ++x) {
      const double d = std::hypot(x - c.x, y - c.y);
      const double r = d - s.ring_radius;
      img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)] +=
          contrast * std::exp(-r * r / (2.0 * s.ring_sigma * s.ring_sigma));
    }
}

// Picks a contiguous cell rectangle covering a share of the tissue cells
// within the configured band; falls back to the closest achievable share.
inline CellRect pick_deceptive_rect(const SyntheticSpec& s, const CellRect& tissue, Rng& rng) {
  const double total = static_cast<double>(tissue.rows * tissue.cols);
  std::vector<CellRect> candidates;
  for (std::size_t h = 1; h <= tissue.rows; ++h)
    for (std::size_t w = 1; w <= tissue.cols; ++w) {
      const double share = h * w / total;
      if (share < s.deceptive_share_lo || share > s.deceptive_share_hi) continue;
      for (std::size_t top = 0; top + h <= tissue.rows; ++top)
        for (std::size_t left = 0; left + w <= tissue.cols; ++left)
          candidates.push_back({tissue.top + top, tissue.left + left, h, w});
    }
  if (!candidates.empty()) return candidates[rng.index(candidates.size())];
  const double mid = 0.5 * (s.deceptive_share_lo + s.deceptive_share_hi);
  const double side = std::sqrt(mid);
  CellRect r;
  r.rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tissue.rows * side)));
  r.cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tissue.cols * side)));
  r.top = tissue.top;
  r.left = tissue.left;
  return r;
}

struct MotifStats {
  std::vector<double> means, vars;
};

// Statistics of isolated single motifs: only motifs whose nearest neighbor
// is at least 0.85 spacings away qualify, and pixels are read from a disc
// around the center, so the numbers describe the motif rather than the
// class-defining arrangement around it.
inline void sample_motif_stats(const std::vector<double>& img, std::size_t size,
                               const std::vector<Point>& pts, double spacing, Rng& rng,
                               MotifStats& out) {
  const long half = 7;
  const double disc_r2 = 7.5 * 7.5;
  const double nn_min2 = 0.85 * spacing * 0.85 * spacing;
  std::vector<std::size_t> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t taken = 0;
  for (std::size_t t = 0; t < order.size() && taken < 30; ++t) {
    const Point& c = pts[order[t]];
    bool isolated = true;
    for (std::size_t q = 0; q < pts.size(); ++q) {
      if (q == order[t]) continue;
      const double dx = pts[q].x - c.x, dy = pts[q].y - c.y;
      if (dx * dx + dy * dy < nn_min2) {
        isolated = false;
        break;
      }
    }
    if (!isolated) continue;
    const long cy = std::lround(c.y), cx = std::lround(c.x);
    if (cy < half || cx < half || cy + half >= static_cast<long>(size) ||
        cx + half >= static_cast<long>(size))
      continue;
    double mean = 0.0, sq = 0.0, n = 0.0;
    for (long y = cy - half; y <= cy + half; ++y)
      for (long x = cx - half; x <= cx + half; ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > disc_r2) continue;
        const double v = img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
        mean += v;
        sq += v * v;
        n += 1.0;
      }
    mean /= n;
    out.means.push_back(mean);
    out.vars.push_back(sq / n - mean * mean);
    ++taken;
  }
}

// Overlap of the [mu-2sigma, mu+2sigma] intervals, as a fraction of their
// union. Sigma is estimated from the pooled samples so that per-pool noise in
// the spread estimate does not masquerade as class separation; the pool means
// still carry any real separation.
inline double interval_overlap(const std::vector<double>& a, const std::vector<double>& b) {
  auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / v.size();
  };
  const double ma = mean_of(a), mb = mean_of(b);
  double var = 0.0;
  for (double x : a) var += (x - ma) * (x - ma);
  for (double x : b) var += (x - mb) * (x - mb);
  var /= static_cast<double>(a.size() + b.size());
  const double s = std::sqrt(var);
  const double delta = std::abs(ma - mb);
  const double uni = 4.0 * s + delta;
  if (uni <= 0.0) return 1.0;
  return std::max(0.0, 4.0 * s - delta) / uni;
}

}  // namespace detail

inline GenerationSummary generate(const SyntheticSpec& spec, const std::filesystem::path& out,
                                  std::size_t count_per_class = 25) {
  if (count_per_class < 1) throw ContractError("generate requires at least one image per class");
  const std::size_t grid = spec.image_size / spec.patch_size;
  if (grid < 4 || grid * spec.patch_size != spec.image_size)
    throw ContractError("image size must divide into at least a 4x4 patch grid");

  std::filesystem::create_directories(out / "images");
  std::filesystem::create_directories(out / "masks");
  std::ofstream manifest(out / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest in " + out.string());
  manifest << "id,path,label,fold,mask_path\n";

  // 60/20/20 split, train spread over folds 0,1,2
  const std::size_t n_train = std::max<std::size_t>(1, (count_per_class * 6 + 5) / 10);
  const std::size_t n_val = std::min(count_per_class - n_train, (count_per_class * 2 + 5) / 10);
  const std::size_t n_test = count_per_class - n_train - n_val;

  detail::MotifStats stats[kClasses];
  GenerationSummary summary;

  for (int label = 0; label < kClasses; ++label) {
    std::size_t class_index = 0;
    struct SplitDef {
      std::size_t n;
      double deceptive_fraction;
      int first_fold, fold_span;
    };
    const SplitDef splits[3] = {
        {n_train, spec.deceptive_fraction_train, 0, 3},
        {n_val, spec.deceptive_fraction_val, kValFold, 1},
        {n_test, spec.deceptive_fraction_test, kTestFold, 1},
    };
    for (const auto& split : splits) {
      const std::size_t k_deceptive =
          (label == 2 || label == 3)
              ? static_cast<std::size_t>(std::lround(split.deceptive_fraction * split.n))
              : 0;
      for (std::size_t i = 0; i < split.n; ++i, ++class_index) {
        const bool deceptive =
            (i + 1) * k_deceptive / std::max<std::size_t>(1, split.n) >
            i * k_deceptive / std::max<std::size_t>(1, split.n);
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%02zu", class_name(label), class_index);
        const std::string id = idbuf;
        Rng rng(stream_seed(spec.seed, "img:" + id));

        const std::size_t size = spec.image_size;
        std::vector<double> img(size * size, spec.base_intensity);

        detail::CellRect tissue{0, 0, grid, grid};
        if (label != 0 && rng.uniform() < spec.background_margin_prob) {
          const std::size_t cut_r = 1 + rng.index(2);
          const std::size_t cut_c = 1 + rng.index(2);
          tissue.rows = grid - cut_r;
          tissue.cols = grid - cut_c;
        }

        std::vector<detail::Point> pts;
        const double area = static_cast<double>(tissue.rows * tissue.cols) *
                            spec.patch_size * spec.patch_size;
        const std::size_t density_target = static_cast<std::size_t>(
            std::lround(area / (spec.motif_spacing * spec.motif_spacing)));
        if (label == 0) {
          // faint clutter rings in 1..3 distinct cells
          const std::size_t n_clutter = 1 + rng.index(3);
          std::vector<std::size_t> cells(grid * grid);
          for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
          rng.shuffle(cells);
          for (std::size_t c = 0; c < n_clutter; ++c) {
            const std::size_t ci = cells[c] / grid, cj = cells[c] % grid;
            detail::Point pt{(cj + rng.uniform(0.25, 0.75)) * spec.patch_size,
                             (ci + rng.uniform(0.25, 0.75)) * spec.patch_size};
            detail::stamp_ring(img, size, spec, pt,
                               spec.clutter_contrast * spec.ring_contrast);
          }
        } else if (label == 1) {
          pts = detail::lattice_points(spec, tissue, rng, 0.5);
        } else {
          detail::CellRect crisp{};
          std::vector<detail::Point> crisp_pts;
          if (deceptive) {
            crisp = detail::pick_deceptive_rect(spec, tissue, rng);
            for (const auto& p : detail::lattice_points(spec, crisp, rng, 0.5))
              crisp_pts.push_back(p);
          }
          const double crisp_cells = deceptive ? double(crisp.rows * crisp.cols) : 0.0;
          const double rest_cells = double(tissue.rows * tissue.cols) - crisp_cells;
          const std::size_t rest_target = static_cast<std::size_t>(
              std::lround(density_target * rest_cells / (tissue.rows * tissue.cols)));
          if (label == 2) {
            const double amp = spec.jitter_amplitude * spec.motif_spacing;
            for (const auto& p : detail::lattice_points(spec, tissue, rng, amp))
              if (!deceptive || !crisp.contains_px(p.x, p.y, spec.patch_size))
                pts.push_back(p);
          } else {
            pts = detail::scatter_points(spec, tissue, rng, rest_target,
                                         deceptive ? &crisp : nullptr);
          }
          pts.insert(pts.end(), crisp_pts.begin(), crisp_pts.end());
        }

        for (const auto& p : pts) detail::stamp_ring(img, size, spec, p, spec.ring_contrast);
        for (double& v : img) v += spec.noise_sigma * rng.normal();

        if (label != 0)
          detail::sample_motif_stats(img, size, pts, spec.motif_spacing, rng, stats[label]);

        Mask mask;
        mask.rows = grid;
        mask.cols = grid;
        mask.cells.assign(grid * grid, 0);
        if (label != 0) {
          std::vector<int> counts(grid * grid, 0);
          for (const auto& p : pts) {
            const std::size_t ci = std::min<std::size_t>(grid - 1, std::size_t(p.y) / spec.patch_size);
            const std::size_t cj = std::min<std::size_t>(grid - 1, std::size_t(p.x) / spec.patch_size);
            counts[ci * grid + cj]++;
          }
          for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] >= 3) mask.cells[c] = label;
        }

        const int fold = split.first_fold + static_cast<int>(i % split.fold_span);
        const std::string img_rel = "images/" + id + ".pgm";
        const std::string mask_rel = "masks/" + id + ".mask";
        write_pgm(out / img_rel, Tensor::from({1, size, size}, img));
        write_mask(out / mask_rel, mask);
        manifest << id << "," << img_rel << "," << label << "," << fold << "," << mask_rel
                 << "\n";
        ++summary.images;
      }
    }
  }
  manifest.close();

  // Ambiguity gate: single-motif statistics must overlap across tissue classes.
  for (int a = 1; a < kClasses; ++a)
    for (int b = a + 1; b < kClasses; ++b) {
      if (stats[a].means.size() < 10 || stats[b].means.size() < 10) continue;
      const double om = detail::interval_overlap(stats[a].means, stats[b].means);
      const double ov = detail::interval_overlap(stats[a].vars, stats[b].vars);
      summary.min_motif_overlap = std::min({summary.min_motif_overlap, om, ov});
    }
  if (summary.min_motif_overlap < 0.8) {
    std::filesystem::remove_all(out);
    throw GenerationError("motif statistics overlap " +
                          std::to_string(summary.min_motif_overlap) +
                          " below 0.8: classes are patch-separable");
  }
  return summary;
}

}  // namespace cact
