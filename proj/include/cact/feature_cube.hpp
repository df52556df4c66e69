#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cact/extractor.hpp"
#include "cact/ops.hpp"
#include "cact/tensor.hpp"

namespace cact {

enum class Pooling { avg, max };

inline std::string to_string(Pooling p) { return p == Pooling::avg ? "avg" : "max"; }

inline Pooling pooling_from(const std::string& s) {
  if (s == "avg") return Pooling::avg;
  if (s == "max") return Pooling::max;
  throw ConfigError("unknown pooling kind: " + s, "pooling");
}

struct TilePatch {
  std::size_t i, j;  // grid row, column
  Tensor patch;      // [C, p, p]
};

// Splits [C, H, W] into non-overlapping patches in row-major grid order,
// zero-padding the bottom/right edge up to the next patch multiple.
inline std::vector<TilePatch> tile(const Tensor& image, std::size_t patch_size) {
  if (!image.defined()) throw ContractError("tile: undefined image");
  if (image.rank() != 3)
    throw DimensionError("tile expects [C,H,W], got " + shape_str(image.shape()));
  if (patch_size < 1) throw ContractError("tile: patch_size must be >= 1");
  const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
  const std::size_t M = (H + patch_size - 1) / patch_size;
  const std::size_t N = (W + patch_size - 1) / patch_size;
  std::vector<TilePatch> out;
  out.reserve(M * N);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      std::vector<double> buf(C * patch_size * patch_size, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < patch_size; ++y) {
          const std::size_t iy = i * patch_size + y;
          if (iy >= H) break;
          const std::size_t x0 = j * patch_size;
          const std::size_t cols = std::min(patch_size, W - std::min(W, x0));
          if (cols == 0) continue;
          const double* src = image.values().data() + (c * H + iy) * W + x0;
          double* dst = buf.data() + (c * patch_size + y) * patch_size;
          std::copy(src, src + cols, dst);
        }
      out.push_back({i, j, Tensor::from({C, patch_size, patch_size}, std::move(buf))});
    }
  return out;
}

// Crops tile() output back into the original image (drops edge padding).
inline Tensor untile(const std::vector<TilePatch>& patches, std::size_t C, std::size_t H,
                     std::size_t W) {
  if (patches.empty()) throw ContractError("untile: no patches");
  const std::size_t p = patches[0].patch.extent(1);
  std::vector<double> buf(C * H * W, 0.0);
  for (const TilePatch& tp : patches)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < p; ++y) {
        const std::size_t iy = tp.i * p + y;
        if (iy >= H) break;
        const std::size_t x0 = tp.j * p;
        if (x0 >= W) continue;
        const std::size_t cols = std::min(p, W - x0);
        const double* src = tp.patch.values().data() + (c * p + y) * p;
        std::copy(src, src + cols, buf.data() + (c * H + iy) * W + x0);
      }
  return Tensor::from({C, H, W}, std::move(buf));
}

struct FeatureCube {
  Tensor grid;  // [1, d, M, N]
  std::string origin;
  Pooling pooling = Pooling::avg;
  std::size_t patch_size = 0;

  std::size_t depth() const { return grid.extent(1); }
  std::size_t rows() const { return grid.extent(2); }
  std::size_t cols() const { return grid.extent(3); }
};

// Core encoder over any patch-batch feature function [P,C,p,p] -> [P,d,h,w].
template <typename FeatureFn>
FeatureCube encode_with(const Tensor& image, FeatureFn&& features, std::size_t patch_size,
                        Pooling pooling, const std::string& origin = "") {
  const auto patches = tile(image, patch_size);
  const std::size_t P = patches.size();
  const std::size_t C = image.extent(0);
  const std::size_t M = (image.extent(1) + patch_size - 1) / patch_size;
  const std::size_t N = (image.extent(2) + patch_size - 1) / patch_size;

  std::vector<double> batch(P * C * patch_size * patch_size);
  for (std::size_t r = 0; r < P; ++r)
    std::copy(patches[r].patch.values().begin(), patches[r].patch.values().end(),
              batch.begin() + r * C * patch_size * patch_size);
  Tensor stacked = Tensor::from({P, C, patch_size, patch_size}, std::move(batch));

  Tensor maps = features(stacked);
  if (maps.rank() != 4 || maps.extent(0) != P)
    throw DimensionError("feature function must return [P,d,h,w], got " +
                         shape_str(maps.shape()));
  Tensor pooled = pool(maps, pooling == Pooling::avg ? PoolKind::global_avg
                                                     : PoolKind::global_max);
  Tensor rows = reshape(pooled, {P, maps.extent(1)});
  FeatureCube cube;
  cube.grid = grid_from_rows(rows, M, N);
  cube.origin = origin;
  cube.pooling = pooling;
  cube.patch_size = patch_size;
  return cube;
}

inline FeatureCube encode(const Tensor& image, Extractor& extractor, Pooling pooling,
                          bool training = false, const std::string& origin = "") {
  return encode_with(
      image, [&](const Tensor& batch) { return extractor.forward(batch, training); },
      extractor.spec().patch_size, pooling, origin);
}

}  // namespace cact
