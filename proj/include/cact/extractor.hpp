#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cact/nn.hpp"
#include "cact/ops.hpp"

namespace cact {

enum class ExtractorFamily { reference5, compact_residual, compact_inception };

inline std::string to_string(ExtractorFamily f) {
  switch (f) {
    case ExtractorFamily::reference5: return "reference5";
    case ExtractorFamily::compact_residual: return "compact_residual";
    case ExtractorFamily::compact_inception: return "compact_inception";
  }
  return "?";
}

inline ExtractorFamily extractor_family_from(const std::string& s) {
  if (s == "reference5") return ExtractorFamily::reference5;
  if (s == "compact_residual") return ExtractorFamily::compact_residual;
  if (s == "compact_inception") return ExtractorFamily::compact_inception;
  throw ConfigError("unknown extractor family: " + s, "extractor_family");
}

struct ExtractorSpec {
  ExtractorFamily family = ExtractorFamily::reference5;
  std::size_t feature_depth = 16;
  std::size_t patch_size = 56;
  std::size_t in_channels = 1;
};

// Per-patch feature extractor. Input [B, C, p, p], output a spatial feature
// map [B, d, h, w] that a pooling stage reduces to one feature row per patch.
// Counts patches passed through forward so feature reuse can be asserted.
class Extractor {
 public:
  Extractor() = default;

  Extractor(ParamStore& store, const std::string& prefix, const ExtractorSpec& spec)
      : spec_(spec) {
    if (spec.feature_depth < 1) throw ContractError("feature_depth must be >= 1");
    switch (spec.family) {
      case ExtractorFamily::reference5: build_reference5(store, prefix); break;
      case ExtractorFamily::compact_residual: build_residual(store, prefix); break;
      case ExtractorFamily::compact_inception: build_inception(store, prefix); break;
    }
  }

  const ExtractorSpec& spec() const { return spec_; }
  std::size_t forward_count() const { return forward_count_; }
  void reset_forward_count() { forward_count_ = 0; }

  // Analytic multiply-accumulate count of one patch forward. Walking convs_
  // in registration order with a running spatial size is exact for all three
  // families: only the strided convolutions change the running size, and
  // every branch convolution both consumes and produces that same size.
  std::size_t mac_count() const {
    std::size_t total = 0;
    std::size_t h = spec_.patch_size, w = spec_.patch_size;
    for (const auto& conv : convs_) {
      const std::size_t out_ch = conv.weight.extent(0), in_ch = conv.weight.extent(1);
      const std::size_t kh = conv.weight.extent(2), kw = conv.weight.extent(3);
      const std::size_t s = static_cast<std::size_t>(conv.stride);
      const std::size_t p = static_cast<std::size_t>(conv.padding);
      const std::size_t oh = (h + 2 * p - kh) / s + 1;
      const std::size_t ow = (w + 2 * p - kw) / s + 1;
      total += oh * ow * out_ch * in_ch * kh * kw;
      h = oh;
      w = ow;
    }
    return total;
  }

  Tensor forward(const Tensor& x, bool training) {
    if (x.rank() != 4 || x.extent(1) != spec_.in_channels)
      throw DimensionError("extractor expects [B," + std::to_string(spec_.in_channels) +
                           ",p,p] input, got " + shape_str(x.shape()));
    forward_count_ += x.extent(0);
    switch (spec_.family) {
      case ExtractorFamily::reference5: return forward_reference5(x, training);
      case ExtractorFamily::compact_residual: return forward_residual(x, training);
      case ExtractorFamily::compact_inception: return forward_inception(x, training);
    }
    throw ContractError("unreachable extractor family");
  }

 private:
  // Five 4x4 convolutions, each followed by batch norm and leaky ReLU.
  // Stride 2 while the running spatial size is >= 12, stride 1 after, with
  // padding 1 throughout.
  void build_reference5(ParamStore& store, const std::string& prefix) {
    const std::size_t widths[5] = {8, 16, 16, 16, spec_.feature_depth};
    std::size_t cur = spec_.patch_size;
    std::size_t in_ch = spec_.in_channels;
    for (int layer = 0; layer < 5; ++layer) {
      if (cur + 2 < 4)
        throw ContractError("patch_size " + std::to_string(spec_.patch_size) +
                            " is too small for the reference5 extractor");
      const int stride = cur >= 12 ? 2 : 1;
      convs_.emplace_back(store, prefix + ".conv" + std::to_string(layer + 1), in_ch,
                          widths[layer], 4, 4, stride, 1);
      bns_.emplace_back(store, prefix + ".bn" + std::to_string(layer + 1), widths[layer]);
      cur = (cur + 2 - 4) / stride + 1;
      in_ch = widths[layer];
    }
  }

  Tensor forward_reference5(const Tensor& x, bool training) {
    Tensor h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      h = leaky_relu(bns_[i](convs_[i](h), training), 0.01);
    return h;
  }

  // Stem + two residual units with an identity sum, downsampling in between.
  void build_residual(ParamStore& store, const std::string& prefix) {
    const std::size_t mid = 16, d = spec_.feature_depth;
    convs_.emplace_back(store, prefix + ".stem", spec_.in_channels, mid, 3, 3, 2, 1);
    bns_.emplace_back(store, prefix + ".stem_bn", mid);
    convs_.emplace_back(store, prefix + ".res1a", mid, mid, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".res1a_bn", mid);
    convs_.emplace_back(store, prefix + ".res1b", mid, mid, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".res1b_bn", mid);
    convs_.emplace_back(store, prefix + ".down", mid, d, 3, 3, 2, 1);
    bns_.emplace_back(store, prefix + ".down_bn", d);
    convs_.emplace_back(store, prefix + ".res2a", d, d, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".res2a_bn", d);
    convs_.emplace_back(store, prefix + ".res2b", d, d, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".res2b_bn", d);
  }

  Tensor forward_residual(const Tensor& x, bool training) {
    Tensor h = relu(bns_[0](convs_[0](x), training));
    Tensor r = relu(bns_[1](convs_[1](h), training));
    r = bns_[2](convs_[2](r), training);
    h = relu(add(h, r));
    h = relu(bns_[3](convs_[3](h), training));
    r = relu(bns_[4](convs_[4](h), training));
    r = bns_[5](convs_[5](r), training);
    return relu(add(h, r));
  }

  // Stem + one four-branch unit (1x1; 1x1->3x3; 1x1->3x3->3x3; avg->1x1)
  // concatenated to depth d, then a strided reduction conv.
  void build_inception(ParamStore& store, const std::string& prefix) {
    const std::size_t d = spec_.feature_depth;
    if (d < 4) throw ContractError("compact_inception needs feature_depth >= 4");
    const std::size_t w = d / 4;
    const std::size_t w1 = d - 3 * w;
    const std::size_t mid = 16, squeeze = 8;
    convs_.emplace_back(store, prefix + ".stem", spec_.in_channels, mid, 3, 3, 2, 1);
    bns_.emplace_back(store, prefix + ".stem_bn", mid);
    convs_.emplace_back(store, prefix + ".b1", mid, w1, 1, 1, 1, 0);
    bns_.emplace_back(store, prefix + ".b1_bn", w1);
    convs_.emplace_back(store, prefix + ".b2a", mid, squeeze, 1, 1, 1, 0);
    bns_.emplace_back(store, prefix + ".b2a_bn", squeeze);
    convs_.emplace_back(store, prefix + ".b2b", squeeze, w, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".b2b_bn", w);
    convs_.emplace_back(store, prefix + ".b3a", mid, squeeze, 1, 1, 1, 0);
    bns_.emplace_back(store, prefix + ".b3a_bn", squeeze);
    convs_.emplace_back(store, prefix + ".b3b", squeeze, w, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".b3b_bn", w);
    convs_.emplace_back(store, prefix + ".b3c", w, w, 3, 3, 1, 1);
    bns_.emplace_back(store, prefix + ".b3c_bn", w);
    convs_.emplace_back(store, prefix + ".b4", mid, w, 1, 1, 1, 0);
    bns_.emplace_back(store, prefix + ".b4_bn", w);
    convs_.emplace_back(store, prefix + ".down", d, d, 3, 3, 2, 1);
    bns_.emplace_back(store, prefix + ".down_bn", d);
  }

  Tensor forward_inception(const Tensor& x, bool training) {
    Tensor h = relu(bns_[0](convs_[0](x), training));
    Tensor b1 = relu(bns_[1](convs_[1](h), training));
    Tensor b2 = relu(bns_[2](convs_[2](h), training));
    b2 = relu(bns_[3](convs_[3](b2), training));
    Tensor b3 = relu(bns_[4](convs_[4](h), training));
    b3 = relu(bns_[5](convs_[5](b3), training));
    b3 = relu(bns_[6](convs_[6](b3), training));
    Tensor b4 = relu(bns_[7](convs_[7](pool(h, PoolKind::avg3x3)), training));
    Tensor cat = concat({b1, b2, b3, b4}, 1);
    return relu(bns_[8](convs_[8](cat), training));
  }

  ExtractorSpec spec_;
  std::vector<Conv2dLayer> convs_;
  std::vector<BatchNorm2dLayer> bns_;
  std::size_t forward_count_ = 0;
};

}  // namespace cact
