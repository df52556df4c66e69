#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cact/ops.hpp"
#include "cact/tensor.hpp"

namespace cact {

namespace detail {

// Shared core: mean over rows of -sum_c target[c] * log2(clamp(p[c])),
// optionally weighted per row. Rows whose probabilities do not sum to 1
// violate the contract. The clamp floor makes the loss total; below the
// floor the clamped value is constant, so its derivative is zero there.
inline constexpr double kProbFloor = 1e-12;

inline Tensor ce_rows_base2(const Tensor& probs, const Tensor& target,
                            std::vector<double> weights, std::size_t rows,
                            std::size_t row_len, double denom, const char* op_name) {
  if (probs.shape() != target.shape())
    throw DimensionError(std::string(op_name) + ": prediction shape " +
                         shape_str(probs.shape()) + " does not match target shape " +
                         shape_str(target.shape()));
  const double ln2 = std::log(2.0);
  const auto& p = probs.values();
  const auto& t = target.values();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < row_len; ++c) sum += p[r * row_len + c];
    if (std::fabs(sum - 1.0) > 1e-6)
      throw ContractError(std::string(op_name) + ": probability row " + std::to_string(r) +
                          " sums to " + std::to_string(sum) + ", not 1");
    double ce = 0.0;
    for (std::size_t c = 0; c < row_len; ++c) {
      const double tv = t[r * row_len + c];
      if (tv == 0.0) continue;
      ce -= tv * std::log2(std::max(p[r * row_len + c], kProbFloor));
    }
    total += weights.empty() ? ce : weights[r] * ce;
  }
  total /= denom;

  auto bwd = [rows, row_len, denom, ln2, weights](cact::detail::Node& self) {
    cact::detail::Node& pp = *self.parents[0];
    if (!pp.requires_grad) return;
    const double g = self.grad[0];
    cact::detail::Node& pt = *self.parents[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = weights.empty() ? 1.0 : weights[r];
      for (std::size_t c = 0; c < row_len; ++c) {
        const double tv = pt.values[r * row_len + c];
        if (tv == 0.0) continue;
        const double pv = pp.values[r * row_len + c];
        if (pv < kProbFloor) continue;
        pp.grad[r * row_len + c] -= g * w * tv / (ln2 * pv * denom);
      }
    }
  };
  return Tensor::make_op(op_name, {1}, {total}, {probs, target}, std::move(bwd));
}

}  // namespace detail

// Eq-style categorical cross-entropy with base-2 logarithm over a batch of
// one-hot targets Y and predicted probability rows Y'.
inline Tensor loss_cls(const Tensor& onehot, const Tensor& probs) {
  if (probs.rank() != 2)
    throw DimensionError("loss_cls expects [K,C] probabilities, got " +
                         shape_str(probs.shape()));
  const std::size_t K = probs.extent(0), C = probs.extent(1);
  return detail::ce_rows_base2(probs, onehot, {}, K, C, static_cast<double>(K), "loss_cls");
}

// Piecewise inverse-ratio weight with a hard cap of 1/alpha_roi.
inline double sample_weight(double r_roi, double alpha_roi = 0.10) {
  if (!(r_roi >= 0.0 && r_roi <= 1.0))
    throw ContractError("sample_weight: R_roi must lie in [0,1], got " +
                        std::to_string(r_roi));
  if (!(alpha_roi > 0.0)) throw ContractError("sample_weight: alpha_roi must be positive");
  return r_roi > alpha_roi ? 1.0 / r_roi : 1.0 / alpha_roi;
}

inline Tensor loss_weighted(const Tensor& onehot, const Tensor& probs,
                            const std::vector<double>& weights) {
  if (probs.rank() != 2)
    throw DimensionError("loss_weighted expects [K,C] probabilities, got " +
                         shape_str(probs.shape()));
  const std::size_t K = probs.extent(0), C = probs.extent(1);
  if (weights.size() != K)
    throw DimensionError("loss_weighted: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(K) + " rows");
  for (double w : weights)
    if (!(w >= 1.0))
      throw ContractError("loss_weighted: weights must be >= 1, got " + std::to_string(w));
  return detail::ce_rows_base2(probs, onehot, weights, K, C, static_cast<double>(K),
                               "loss_weighted");
}

// Per-cell cross-entropy over [K,C,M,N] maps: cells averaged within each
// image, then averaged over the K images.
inline Tensor loss_seg(const Tensor& onehot_mask, const Tensor& seg_probs) {
  if (seg_probs.rank() != 4)
    throw DimensionError("loss_seg expects [K,C,M,N] probabilities, got " +
                         shape_str(seg_probs.shape()));
  const std::size_t K = seg_probs.extent(0), C = seg_probs.extent(1),
                    M = seg_probs.extent(2), N = seg_probs.extent(3);
  if (onehot_mask.shape() != seg_probs.shape())
    throw DimensionError("loss_seg: mask shape " + shape_str(onehot_mask.shape()) +
                         " does not match prediction shape " + shape_str(seg_probs.shape()));
  // Rearrange the strided channel axis into row-major [K*M*N, C] cell rows
  // with a dedicated op whose backward scatters gradients back per cell.
  const std::size_t cells = M * N;
  std::vector<double> p(K * cells * C), t(K * cells * C);
  const auto& pv = seg_probs.values();
  const auto& tv = onehot_mask.values();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < cells; ++s) {
        p[(k * cells + s) * C + c] = pv[(k * C + c) * cells + s];
        t[(k * cells + s) * C + c] = tv[(k * C + c) * cells + s];
      }
  auto bwd = [K, C, cells](cact::detail::Node& self) {
    cact::detail::Node& src = *self.parents[0];
    if (!src.requires_grad) return;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < cells; ++s)
          src.grad[(k * C + c) * cells + s] += self.grad[(k * cells + s) * C + c];
  };
  Tensor cell_rows =
      Tensor::make_op("cells_to_rows", {K * cells, C}, std::move(p), {seg_probs}, std::move(bwd));
  Tensor trows = Tensor::from({K * cells, C}, std::move(t));
  return detail::ce_rows_base2(cell_rows, trows, {}, K * cells, C,
                               static_cast<double>(K * cells), "loss_seg");
}

// Eq. 9 mixture. alpha_joint = 1 reduces to the classification loss exactly
// (1*x = x and x + 0*y = x for finite values), which the strategy-equivalence
// guarantee depends on.
inline Tensor loss_joint(const Tensor& onehot, const Tensor& probs, const Tensor& onehot_mask,
                         const Tensor& seg_probs, double alpha_joint) {
  if (!(alpha_joint >= 0.0 && alpha_joint <= 1.0))
    throw ContractError("loss_joint: alpha_joint must lie in [0,1]");
  return add(scale(loss_cls(onehot, probs), alpha_joint),
             scale(loss_seg(onehot_mask, seg_probs), 1.0 - alpha_joint));
}

inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes)
      throw ContractError("one_hot: label " + std::to_string(labels[i]) +
                          " outside class set of size " + std::to_string(classes));
    v[i * classes + labels[i]] = 1.0;
  }
  return Tensor::from({labels.size(), classes}, std::move(v));
}

}  // namespace cact
