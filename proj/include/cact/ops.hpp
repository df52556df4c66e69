#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cact/tensor.hpp"

namespace cact {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

}  // namespace detail

// 2-D convolution, NCHW layout, zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int padding = 0) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  detail::require_rank(bias, 1, "conv2d bias");
  const std::size_t B = input.extent(0), C = input.extent(1), H = input.extent(2),
                    W = input.extent(3);
  const std::size_t K = weight.extent(0), KH = weight.extent(2), KW = weight.extent(3);
  if (weight.extent(1) != C)
    throw DimensionError("conv2d: weight channel axis " + std::to_string(weight.extent(1)) +
                         " does not match input channel axis " + std::to_string(C));
  if (bias.extent(0) != K)
    throw DimensionError("conv2d: bias axis " + std::to_string(bias.extent(0)) +
                         " does not match output channel axis " + std::to_string(K));
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const long Hp = static_cast<long>(H) + 2 * padding, Wp = static_cast<long>(W) + 2 * padding;
  if (static_cast<long>(KH) > Hp || static_cast<long>(KW) > Wp)
    throw DimensionError("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                         " exceeds padded input " + std::to_string(Hp) + "x" + std::to_string(Wp));
  const std::size_t OH = static_cast<std::size_t>((Hp - static_cast<long>(KH)) / stride + 1);
  const std::size_t OW = static_cast<std::size_t>((Wp - static_cast<long>(KW)) / stride + 1);

  const auto& in = input.values();
  const auto& w = weight.values();
  const auto& bv = bias.values();
  std::vector<double> out(B * K * OH * OW);

  // Valid output range along one axis for a given kernel offset: the input
  // index o*stride + k - padding must land in [0, extent). Captured by value
  // so the backward closure stays self-contained.
  const auto lo = [stride, padding](std::size_t kk) {
    const long v = padding - static_cast<long>(kk);
    return v <= 0 ? std::size_t{0}
                  : static_cast<std::size_t>((v + stride - 1) / stride);
  };
  const auto hi = [stride, padding](std::size_t kk, std::size_t ext, std::size_t oext) {
    const long v = static_cast<long>(ext) - 1 + padding - static_cast<long>(kk);
    if (v < 0) return std::size_t{0};
    return std::min(oext, static_cast<std::size_t>(v / stride) + 1);
  };
  const std::size_t pad = static_cast<std::size_t>(padding);
  const std::size_t st = static_cast<std::size_t>(stride);

  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      double* plane = out.data() + (b * K + k) * OH * OW;
      std::fill(plane, plane + OH * OW, bv[k]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* in_plane = in.data() + (b * C + c) * H * W;
        const double* w_plane = w.data() + (k * C + c) * KH * KW;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          const std::size_t oh0 = lo(kh), oh1 = hi(kh, H, OH);
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const double wv = w_plane[kh * KW + kw];
            const std::size_t ow0 = lo(kw), ow1 = hi(kw, W, OW);
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const double* in_row = in_plane + (oh * st + kh - pad) * W;
              double* out_row = plane + oh * OW;
              // ow*st + kw >= pad holds for ow >= ow0, so the index below is
              // computed without underflow.
              if (st == 1) {
                for (std::size_t ow = ow0; ow < ow1; ++ow)
                  out_row[ow] += wv * in_row[ow + kw - pad];
              } else {
                for (std::size_t ow = ow0; ow < ow1; ++ow)
                  out_row[ow] += wv * in_row[ow * st + kw - pad];
              }
            }
          }
        }
      }
    }

  auto bwd = [B, C, H, W, K, KH, KW, OH, OW, st, pad, lo, hi](detail::Node& self) {
    const auto& g = self.grad;
    detail::Node& pin = *self.parents[0];
    detail::Node& pw = *self.parents[1];
    detail::Node& pb = *self.parents[2];
    const bool need_in = pin.requires_grad, need_w = pw.requires_grad,
               need_b = pb.requires_grad;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double* g_plane = g.data() + (b * K + k) * OH * OW;
        if (need_b) {
          double s = 0;
          for (std::size_t i = 0; i < OH * OW; ++i) s += g_plane[i];
          pb.grad[k] += s;
        }
        if (!need_in && !need_w) continue;
        for (std::size_t c = 0; c < C; ++c) {
          const double* in_plane = pin.values.data() + (b * C + c) * H * W;
          double* din_plane = need_in ? pin.grad.data() + (b * C + c) * H * W : nullptr;
          for (std::size_t kh = 0; kh < KH; ++kh) {
            const std::size_t oh0 = lo(kh), oh1 = hi(kh, H, OH);
            for (std::size_t kw = 0; kw < KW; ++kw) {
              const std::size_t widx = (k * C + c) * KH * KW + kh * KW + kw;
              const double wv = pw.values[widx];
              const std::size_t ow0 = lo(kw), ow1 = hi(kw, W, OW);
              double dwv = 0;
              for (std::size_t oh = oh0; oh < oh1; ++oh) {
                const std::size_t row = (oh * st + kh - pad) * W;
                const double* g_row = g_plane + oh * OW;
                const double* in_row = in_plane + row;
                if (need_in) {
                  double* din_row = din_plane + row;
                  for (std::size_t ow = ow0; ow < ow1; ++ow) {
                    const std::size_t col = ow * st + kw - pad;
                    din_row[col] += wv * g_row[ow];
                    dwv += in_row[col] * g_row[ow];
                  }
                } else {
                  for (std::size_t ow = ow0; ow < ow1; ++ow)
                    dwv += in_row[ow * st + kw - pad] * g_row[ow];
                }
              }
              if (need_w) pw.grad[widx] += dwv;
            }
          }
        }
      }
  };

  return Tensor::make_op("conv2d", {B, K, OH, OW}, std::move(out), {input, weight, bias},
                         std::move(bwd));
}

// Batch normalization over (B, H, W) per channel. Training mode normalizes by
// biased batch statistics and folds them into the running buffers in place;
// eval mode applies the stored running statistics.
inline Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         Tensor& running_mean, Tensor& running_var, bool training,
                         double momentum = 0.1, double eps = 1e-5) {
  detail::require_rank(input, 4, "batch_norm input");
  const std::size_t B = input.extent(0), C = input.extent(1), H = input.extent(2),
                    W = input.extent(3);
  if (gamma.extent(0) != C || beta.extent(0) != C || running_mean.extent(0) != C ||
      running_var.extent(0) != C)
    throw DimensionError("batch_norm: per-channel tensors must have extent " +
                         std::to_string(C));
  const std::size_t n = B * H * W;
  if (training && n < 2)
    throw ContractError("batch_norm: degenerate batch (need B*H*W >= 2 in training mode)");

  const auto& in = input.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  const std::size_t plane = H * W;

  std::vector<double> mean(C), invstd(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = in.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      const double mu = s / n;
      const double var = std::max(0.0, s2 / n - mu * mu);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      running_mean.data()[c] = (1.0 - momentum) * running_mean.values()[c] + momentum * mu;
      running_var.data()[c] = (1.0 - momentum) * running_var.values()[c] + momentum * var;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      invstd[c] = 1.0 / std::sqrt(running_var.values()[c] + eps);
    }
  }

  std::vector<double> out(in.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = in.data() + (b * C + c) * plane;
      double* q = out.data() + (b * C + c) * plane;
      const double mu = mean[c], is = invstd[c], ga = gv[c], be = bv[c];
      for (std::size_t i = 0; i < plane; ++i) q[i] = ga * (p[i] - mu) * is + be;
    }

  auto bwd = [B, C, plane, n, training, mean, invstd](detail::Node& self) {
    const auto& g = self.grad;
    detail::Node& pin = *self.parents[0];
    detail::Node& pg = *self.parents[1];
    detail::Node& pb = *self.parents[2];
    const double ga_n = static_cast<double>(n);
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = mean[c], is = invstd[c], ga = pg.values[c];
      double s1 = 0, s2 = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* gp = g.data() + (b * C + c) * plane;
        const double* xp = pin.values.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s1 += gp[i];
          s2 += gp[i] * (xp[i] - mu) * is;
        }
      }
      if (pb.requires_grad) pb.grad[c] += s1;
      if (pg.requires_grad) pg.grad[c] += s2;
      if (!pin.requires_grad) continue;
      if (training) {
        const double m1 = s1 / ga_n, m2 = s2 / ga_n;
        for (std::size_t b = 0; b < B; ++b) {
          const double* gp = g.data() + (b * C + c) * plane;
          const double* xp = pin.values.data() + (b * C + c) * plane;
          double* dp = pin.grad.data() + (b * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i)
            dp[i] += ga * is * (gp[i] - m1 - (xp[i] - mu) * is * m2);
        }
      } else {
        for (std::size_t b = 0; b < B; ++b) {
          const double* gp = g.data() + (b * C + c) * plane;
          double* dp = pin.grad.data() + (b * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dp[i] += ga * is * gp[i];
        }
      }
    }
  };

  return Tensor::make_op("batch_norm", input.shape(), std::move(out), {input, gamma, beta},
                         std::move(bwd));
}

inline Tensor relu(const Tensor& input) {
  std::vector<double> out(input.values());
  for (double& v : out) v = v > 0 ? v : 0.0;
  auto bwd = [](detail::Node& self) {
    detail::Node& pin = *self.parents[0];
    if (!pin.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pin.values[i] > 0) pin.grad[i] += self.grad[i];
  };
  return Tensor::make_op("relu", input.shape(), std::move(out), {input}, std::move(bwd));
}

inline Tensor leaky_relu(const Tensor& input, double slope = 0.01) {
  std::vector<double> out(input.values());
  for (double& v : out) v = v > 0 ? v : slope * v;
  auto bwd = [slope](detail::Node& self) {
    detail::Node& pin = *self.parents[0];
    if (!pin.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pin.grad[i] += (pin.values[i] > 0 ? 1.0 : slope) * self.grad[i];
  };
  return Tensor::make_op("leaky_relu", input.shape(), std::move(out), {input}, std::move(bwd));
}

inline Tensor softmax(const Tensor& input, std::size_t axis) {
  if (axis >= input.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(input.shape()));
  const auto& shape = input.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  const auto& in = input.values();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double z = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }

  auto bwd = [outer, inner, n](detail::Node& self) {
    detail::Node& pin = *self.parents[0];
    if (!pin.requires_grad) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0;
        for (std::size_t k = 0; k < n; ++k)
          dot += self.grad[base + k * inner] * self.values[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          pin.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
        }
      }
  };
  return Tensor::make_op("softmax", input.shape(), std::move(out), {input}, std::move(bwd));
}

enum class PoolKind { global_avg, global_max, avg3x3 };

inline Tensor pool(const Tensor& input, PoolKind kind) {
  detail::require_rank(input, 4, "pool input");
  const std::size_t B = input.extent(0), C = input.extent(1), H = input.extent(2),
                    W = input.extent(3);
  const std::size_t plane = H * W;
  const auto& in = input.values();

  if (kind == PoolKind::global_avg) {
    std::vector<double> out(B * C);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      double s = 0;
      const double* p = in.data() + bc * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[bc] = s / plane;
    }
    auto bwd = [plane](detail::Node& self) {
      detail::Node& pin = *self.parents[0];
      if (!pin.requires_grad) return;
      for (std::size_t bc = 0; bc < self.grad.size(); ++bc) {
        const double gv = self.grad[bc] / plane;
        double* dp = pin.grad.data() + bc * plane;
        for (std::size_t i = 0; i < plane; ++i) dp[i] += gv;
      }
    };
    return Tensor::make_op("global_avg_pool", {B, C, 1, 1}, std::move(out), {input},
                           std::move(bwd));
  }

  if (kind == PoolKind::global_max) {
    std::vector<double> out(B * C);
    std::vector<std::size_t> arg(B * C);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const double* p = in.data() + bc * plane;
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i)
        if (p[i] > p[best]) best = i;
      out[bc] = p[best];
      arg[bc] = best;
    }
    auto bwd = [plane, arg](detail::Node& self) {
      detail::Node& pin = *self.parents[0];
      if (!pin.requires_grad) return;
      for (std::size_t bc = 0; bc < self.grad.size(); ++bc)
        pin.grad[bc * plane + arg[bc]] += self.grad[bc];
    };
    return Tensor::make_op("global_max_pool", {B, C, 1, 1}, std::move(out), {input},
                           std::move(bwd));
  }

  // avg3x3: stride 1, zero padding 1, denominator fixed at 9 (padded zeros
  // count), so spatial size is preserved.
  std::vector<double> out(in.size(), 0.0);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* p = in.data() + bc * plane;
    double* q = out.data() + bc * plane;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy >= 0 && yy < static_cast<long>(H) && xx >= 0 && xx < static_cast<long>(W))
              s += p[yy * W + xx];
          }
        q[y * W + x] = s / 9.0;
      }
  }
  auto bwd = [B, C, H, W, plane](detail::Node& self) {
    detail::Node& pin = *self.parents[0];
    if (!pin.requires_grad) return;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const double* gp = self.grad.data() + bc * plane;
      double* dp = pin.grad.data() + bc * plane;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double gv = gp[y * W + x] / 9.0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
              if (yy >= 0 && yy < static_cast<long>(H) && xx >= 0 && xx < static_cast<long>(W))
                dp[yy * W + xx] += gv;
            }
        }
    }
  };
  return Tensor::make_op("avg3x3_pool", input.shape(), std::move(out), {input}, std::move(bwd));
}

inline Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(input, 2, "dense input");
  detail::require_rank(weight, 2, "dense weight");
  detail::require_rank(bias, 1, "dense bias");
  const std::size_t B = input.extent(0), D = input.extent(1), C = weight.extent(1);
  if (weight.extent(0) != D)
    throw DimensionError("dense: weight rows " + std::to_string(weight.extent(0)) +
                         " do not match input features " + std::to_string(D));
  if (bias.extent(0) != C) throw DimensionError("dense: bias extent mismatch");

  const auto& in = input.values();
  const auto& w = weight.values();
  std::vector<double> out(B * C);
  for (std::size_t b = 0; b < B; ++b) {
    double* o = out.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) o[c] = bias.values()[c];
    for (std::size_t d = 0; d < D; ++d) {
      const double v = in[b * D + d];
      const double* wr = w.data() + d * C;
      for (std::size_t c = 0; c < C; ++c) o[c] += v * wr[c];
    }
  }

  auto bwd = [B, D, C](detail::Node& self) {
    detail::Node& pin = *self.parents[0];
    detail::Node& pw = *self.parents[1];
    detail::Node& pb = *self.parents[2];
    for (std::size_t b = 0; b < B; ++b) {
      const double* g = self.grad.data() + b * C;
      if (pb.requires_grad)
        for (std::size_t c = 0; c < C; ++c) pb.grad[c] += g[c];
      for (std::size_t d = 0; d < D; ++d) {
        const double* wr = pw.values.data() + d * C;
        const double x = pin.values[b * D + d];
        double acc = 0;
        double* dwr = pw.requires_grad ? pw.grad.data() + d * C : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
          acc += g[c] * wr[c];
          if (dwr) dwr[c] += x * g[c];
        }
        if (pin.requires_grad) pin.grad[b * D + d] += acc;
      }
    }
  };
  return Tensor::make_op("dense", {B, C}, std::move(out), {input, weight, bias},
                         std::move(bwd));
}

inline Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ContractError("concat: needs at least one input");
  const Shape& first = inputs[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const auto& t : inputs) {
    if (t.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a)
      if (a != axis && t.extent(a) != first[a])
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(a));
    axis_total += t.extent(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<double> out(shape_size(out_shape));
  std::size_t col = 0;
  for (const auto& t : inputs) {
    const std::size_t chunk = t.extent(axis) * inner;
    const auto& v = t.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * chunk, v.begin() + (o + 1) * chunk,
                out.begin() + o * axis_total * inner + col);
    col += chunk;
  }

  std::vector<std::size_t> chunks;
  for (const auto& t : inputs) chunks.push_back(t.extent(axis) * inner);
  auto bwd = [outer, inner, axis_total, chunks](detail::Node& self) {
    std::size_t col = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      detail::Node& p = *self.parents[pi];
      const std::size_t chunk = chunks[pi];
      if (p.requires_grad)
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * axis_total * inner + col;
          double* dp = p.grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dp[i] += g[i];
        }
      col += chunk;
    }
  };
  return Tensor::make_op("concat", std::move(out_shape), std::move(out), inputs,
                         std::move(bwd));
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("hadamard: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto bwd = [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.values[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.values[i];
  };
  return Tensor::make_op("hadamard", a.shape(), std::move(out), {a, b}, std::move(bwd));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto bwd = [](detail::Node& self) {
    for (auto& parent : self.parents) {
      detail::Node& p = *parent;
      if (p.requires_grad)
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  };
  return Tensor::make_op("add", a.shape(), std::move(out), {a, b}, std::move(bwd));
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.values()[i];
  auto bwd = [factor](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  };
  return Tensor::make_op("scale", a.shape(), std::move(out), {a}, std::move(bwd));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: element count mismatch for " + shape_str(shape));
  std::vector<double> out(a.values());
  auto bwd = [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  return Tensor::make_op("reshape", std::move(shape), std::move(out), {a}, std::move(bwd));
}

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  auto bwd = [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  return Tensor::make_op("sum", {1}, {s}, {a}, std::move(bwd));
}

// Rearranges P = M*N pooled patch feature rows [P, d] into a cube [1, d, M, N]
// preserving the row-major patch order.
inline Tensor grid_from_rows(const Tensor& rows, std::size_t M, std::size_t N) {
  detail::require_rank(rows, 2, "grid_from_rows input");
  const std::size_t P = rows.extent(0), d = rows.extent(1);
  if (P != M * N)
    throw DimensionError("grid_from_rows: " + std::to_string(P) + " rows cannot fill a " +
                         std::to_string(M) + "x" + std::to_string(N) + " grid");
  std::vector<double> out(d * M * N);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < d; ++c) out[c * M * N + p] = rows.values()[p * d + c];
  auto bwd = [P, d, M, N](detail::Node& self) {
    detail::Node& pr = *self.parents[0];
    if (!pr.requires_grad) return;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < d; ++c)
        pr.grad[p * d + c] += self.grad[c * M * N + p];
  };
  return Tensor::make_op("grid_from_rows", {1, d, M, N}, std::move(out), {rows},
                         std::move(bwd));
}

// Copies a spatial window [top, top+h) x [left, left+w) from an NCHW tensor.
inline Tensor slice_spatial(const Tensor& a, std::size_t top, std::size_t left, std::size_t h,
                            std::size_t w) {
  detail::require_rank(a, 4, "slice_spatial input");
  const std::size_t B = a.extent(0), C = a.extent(1), H = a.extent(2), W = a.extent(3);
  if (top + h > H || left + w > W)
    throw DimensionError("slice_spatial: window exceeds tensor bounds");
  std::vector<double> out(B * C * h * w);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = a.values().data() + bc * H * W + (top + y) * W + left;
      std::copy(src, src + w, out.begin() + bc * h * w + y * w);
    }
  auto bwd = [B, C, H, W, top, left, h, w](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t y = 0; y < h; ++y) {
        const double* g = self.grad.data() + bc * h * w + y * w;
        double* dp = p.grad.data() + bc * H * W + (top + y) * W + left;
        for (std::size_t x = 0; x < w; ++x) dp[x] += g[x];
      }
  };
  return Tensor::make_op("slice_spatial", {B, C, h, w}, std::move(out), {a}, std::move(bwd));
}

}  // namespace cact
