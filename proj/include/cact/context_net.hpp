#pragma once

#include <array>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cact/extractor.hpp"
#include "cact/feature_cube.hpp"
#include "cact/nn.hpp"
#include "cact/ops.hpp"

namespace cact {

enum class BlockKind { B1, B2, B3 };
enum class AttentionAxis { spatial, channel };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::B1: return "B1";
    case BlockKind::B2: return "B2";
    case BlockKind::B3: return "B3";
  }
  return "?";
}

inline BlockKind block_kind_from(const std::string& s) {
  if (s == "B1") return BlockKind::B1;
  if (s == "B2") return BlockKind::B2;
  if (s == "B3") return BlockKind::B3;
  throw ConfigError("unknown block kind: " + s, "block_kind");
}

inline std::string to_string(AttentionAxis a) {
  return a == AttentionAxis::spatial ? "spatial" : "channel";
}

inline AttentionAxis attention_axis_from(const std::string& s) {
  if (s == "spatial") return AttentionAxis::spatial;
  if (s == "channel") return AttentionAxis::channel;
  throw ConfigError("unknown attention axis: " + s, "attention_axis");
}

struct ContextNetSpec {
  BlockKind block = BlockKind::B2;
  bool attention = false;
  AttentionAxis attention_axis = AttentionAxis::spatial;
  bool aux_head = false;
  std::size_t classes = 4;
  std::size_t aux_classes = 4;
  std::size_t b1_width = 64;
  std::size_t b2_squeeze = 16;
  std::size_t b2_expand = 32;
  std::array<std::size_t, 4> b3_widths = {8, 8, 8, 8};
};

inline std::size_t block_out_depth(const ContextNetSpec& spec, std::size_t in_depth) {
  switch (spec.block) {
    case BlockKind::B1: return spec.b1_width;
    case BlockKind::B2: return in_depth + spec.b2_expand;
    case BlockKind::B3:
      return std::accumulate(spec.b3_widths.begin(), spec.b3_widths.end(), std::size_t{0});
  }
  return 0;
}

inline std::size_t cascade_out_depth(const ContextNetSpec& spec, std::size_t in_depth) {
  std::size_t d = in_depth;
  for (int i = 0; i < 3; ++i) d = block_out_depth(spec, d);
  return d;
}

// Attention gate: per-value weights from a 1x1 conv, normalized by softmax
// over spatial positions (per channel) or over channels (per position), then
// multiplied elementwise into the cube.
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(ParamStore& store, const std::string& prefix, std::size_t depth,
                AttentionAxis axis)
      : axis_(axis), conv_(store, prefix + ".conv1x1", depth, depth, 1, 1, 1, 0) {}

  Tensor operator()(const Tensor& cube) const {
    Tensor logits = conv_(cube);
    Tensor weights;
    if (axis_ == AttentionAxis::spatial) {
      const std::size_t B = logits.extent(0), d = logits.extent(1), M = logits.extent(2),
                        N = logits.extent(3);
      Tensor flat = reshape(logits, {B, d, M * N});
      weights = reshape(softmax(flat, 2), {B, d, M, N});
    } else {
      weights = softmax(logits, 1);
    }
    return hadamard(weights, cube);
  }

 private:
  AttentionAxis axis_ = AttentionAxis::spatial;
  Conv2dLayer conv_;
};

// One context block. Convolution order differs by kind on purpose: B1 is
// conv -> ReLU -> norm, B2/B3 are conv -> norm -> ReLU.
class ContextBlock {
 public:
  ContextBlock() = default;

  ContextBlock(ParamStore& store, const std::string& prefix, const ContextNetSpec& spec,
               std::size_t in_depth)
      : kind_(spec.block), out_depth_(block_out_depth(spec, in_depth)) {
    switch (kind_) {
      case BlockKind::B1:
        convs_.emplace_back(store, prefix + ".conv3x3", in_depth, spec.b1_width, 3, 3, 1, 1);
        bns_.emplace_back(store, prefix + ".bn", spec.b1_width);
        break;
      case BlockKind::B2:
        convs_.emplace_back(store, prefix + ".squeeze", in_depth, spec.b2_squeeze, 1, 1, 1,
                            0);
        bns_.emplace_back(store, prefix + ".squeeze_bn", spec.b2_squeeze);
        convs_.emplace_back(store, prefix + ".conv3x3", spec.b2_squeeze, spec.b2_squeeze, 3,
                            3, 1, 1);
        bns_.emplace_back(store, prefix + ".conv3x3_bn", spec.b2_squeeze);
        convs_.emplace_back(store, prefix + ".expand", spec.b2_squeeze, spec.b2_expand, 1, 1,
                            1, 0);
        bns_.emplace_back(store, prefix + ".expand_bn", spec.b2_expand);
        break;
      case BlockKind::B3: {
        const auto& w = spec.b3_widths;
        convs_.emplace_back(store, prefix + ".br1_1x1", in_depth, w[0], 1, 1, 1, 0);
        bns_.emplace_back(store, prefix + ".br1_1x1_bn", w[0]);
        convs_.emplace_back(store, prefix + ".br1_3x3a", w[0], w[0], 3, 3, 1, 1);
        bns_.emplace_back(store, prefix + ".br1_3x3a_bn", w[0]);
        convs_.emplace_back(store, prefix + ".br1_3x3b", w[0], w[0], 3, 3, 1, 1);
        bns_.emplace_back(store, prefix + ".br1_3x3b_bn", w[0]);
        convs_.emplace_back(store, prefix + ".br2_1x1", in_depth, w[1], 1, 1, 1, 0);
        bns_.emplace_back(store, prefix + ".br2_1x1_bn", w[1]);
        convs_.emplace_back(store, prefix + ".br3_1x1", in_depth, w[2], 1, 1, 1, 0);
        bns_.emplace_back(store, prefix + ".br3_1x1_bn", w[2]);
        convs_.emplace_back(store, prefix + ".br3_3x3", w[2], w[2], 3, 3, 1, 1);
        bns_.emplace_back(store, prefix + ".br3_3x3_bn", w[2]);
        convs_.emplace_back(store, prefix + ".br4_1x1", in_depth, w[3], 1, 1, 1, 0);
        bns_.emplace_back(store, prefix + ".br4_1x1_bn", w[3]);
        break;
      }
    }
  }

  std::size_t out_depth() const { return out_depth_; }
  BlockKind kind() const { return kind_; }

  // Every context convolution preserves spatial size, so the count needs
  // only the number of grid cells it runs over.
  std::size_t mac_count(std::size_t cells) const {
    std::size_t total = 0;
    for (const auto& conv : convs_)
      total += cells * conv.weight.extent(0) * conv.weight.extent(1) * conv.weight.extent(2) *
               conv.weight.extent(3);
    return total;
  }

  Tensor operator()(const Tensor& x, bool training) {
    switch (kind_) {
      case BlockKind::B1:
        return bns_[0](relu(convs_[0](x)), training);
      case BlockKind::B2: {
        Tensor h = relu(bns_[0](convs_[0](x), training));
        h = relu(bns_[1](convs_[1](h), training));
        h = relu(bns_[2](convs_[2](h), training));
        return concat({h, x}, 1);
      }
      case BlockKind::B3: {
        Tensor br1 = relu(bns_[0](convs_[0](x), training));
        br1 = relu(bns_[1](convs_[1](br1), training));
        br1 = relu(bns_[2](convs_[2](br1), training));
        Tensor br2 = relu(bns_[3](convs_[3](x), training));
        Tensor br3 = relu(bns_[4](convs_[4](x), training));
        br3 = relu(bns_[5](convs_[5](br3), training));
        Tensor br4 = relu(bns_[6](convs_[6](pool(x, PoolKind::avg3x3)), training));
        return concat({br1, br2, br3, br4}, 1);
      }
    }
    throw ContractError("unreachable block kind");
  }

 private:
  BlockKind kind_ = BlockKind::B1;
  std::size_t out_depth_ = 0;
  std::vector<Conv2dLayer> convs_;
  std::vector<BatchNorm2dLayer> bns_;
};

// Runs a block sequence, enforcing the single-kind cascade rule.
inline Tensor context_forward(const Tensor& cube, std::vector<ContextBlock>& blocks,
                              bool training) {
  if (blocks.empty()) throw ContractError("context_forward: no blocks");
  for (const ContextBlock& b : blocks)
    if (b.kind() != blocks.front().kind())
      throw ConfigError("context blocks must share one kind, got " +
                            to_string(blocks.front().kind()) + " and " + to_string(b.kind()),
                        "block_kind");
  Tensor h = cube;
  for (auto& block : blocks) h = block(h, training);
  return h;
}

// The representation-aggregation network: optional attention gate, three
// cascaded context blocks of one kind, a classification head, and an optional
// per-cell segmentation head sharing the cascade output.
class ContextNet {
 public:
  ContextNet() = default;

  ContextNet(ParamStore& store, const std::string& prefix, const ContextNetSpec& spec,
             std::size_t in_depth)
      : spec_(spec), in_depth_(in_depth) {
    if (spec.attention)
      gate_ = AttentionGate(store, prefix + ".gate", in_depth, spec.attention_axis);
    std::size_t d = in_depth;
    for (int i = 0; i < 3; ++i) {
      blocks_.emplace_back(store, prefix + ".block" + std::to_string(i + 1), spec, d);
      d = blocks_.back().out_depth();
    }
    head_ = DenseLayer(store, prefix + ".head", d, spec.classes);
    if (spec.aux_head)
      aux_ = Conv2dLayer(store, prefix + ".aux_head", d, spec.aux_classes, 1, 1, 1, 0);
  }

  const ContextNetSpec& spec() const { return spec_; }
  std::size_t out_depth() const { return blocks_.back().out_depth(); }
  std::size_t cascade_count() const { return cascade_count_; }
  void reset_cascade_count() { cascade_count_ = 0; }

  // Analytic multiply-accumulate count of one forward over a square window of
  // window_cells per side: gate, cascade, and both heads.
  std::size_t mac_count(std::size_t window_cells) const {
    const std::size_t cells = window_cells * window_cells;
    std::size_t total = 0;
    if (spec_.attention) total += cells * in_depth_ * in_depth_;
    for (const auto& b : blocks_) total += b.mac_count(cells);
    total += out_depth() * spec_.classes;
    if (spec_.aux_head) total += cells * out_depth() * spec_.aux_classes;
    return total;
  }

  Tensor attend(const Tensor& cube) const {
    if (!spec_.attention) throw ContractError("attention gate is not enabled");
    if (cube.extent(1) != in_depth_)
      throw DimensionError("gate depth " + std::to_string(in_depth_) +
                           " does not match cube depth " + std::to_string(cube.extent(1)));
    return gate_(cube);
  }

  Tensor cascade(const Tensor& cube, bool training) {
    ++cascade_count_;
    return context_forward(cube, blocks_, training);
  }

  struct Output {
    Tensor probs;  // [B, classes]
    Tensor seg;    // [B, aux_classes, M, N] when the aux head is enabled
  };

  // Gates (if enabled), runs the cascade exactly once, and feeds both heads
  // from the shared cascade output.
  Output forward(const Tensor& cube, bool training) {
    Tensor f = spec_.attention ? attend(cube) : cube;
    Tensor ctx = cascade(f, training);
    Tensor pooled = pool(ctx, PoolKind::global_avg);
    Tensor logits = head_(reshape(pooled, {ctx.extent(0), out_depth()}));
    Output out;
    out.probs = softmax(logits, 1);
    if (spec_.aux_head) out.seg = softmax(aux_(ctx), 1);
    return out;
  }

  Tensor segment(const Tensor& cube, bool training) {
    if (!spec_.aux_head) throw ContractError("auxiliary head is not enabled");
    return forward(cube, training).seg;
  }

 private:
  ContextNetSpec spec_;
  std::size_t in_depth_ = 0;
  AttentionGate gate_;
  std::vector<ContextBlock> blocks_;
  DenseLayer head_;
  Conv2dLayer aux_;
  std::size_t cascade_count_ = 0;
};

// Full model: patch extractor, pooling stage, and the context network, all
// parameters in one registry for optimization and checkpointing.
struct ModelSpec {
  ExtractorSpec extractor;
  Pooling pooling = Pooling::avg;
  ContextNetSpec context;
};

class ContextModel {
 public:
  explicit ContextModel(const ModelSpec& spec) : spec_(spec) {
    extractor_ = Extractor(store_, "extractor", spec.extractor);
    net_ = ContextNet(store_, "ra_cnn", spec.context, spec.extractor.feature_depth);
  }

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Extractor& extractor() { return extractor_; }
  const Extractor& extractor() const { return extractor_; }
  ContextNet& net() { return net_; }
  const ContextNet& net() const { return net_; }

  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  FeatureCube encode_image(const Tensor& image, bool training,
                           const std::string& origin = "") {
    return encode(image, extractor_, spec_.pooling, training, origin);
  }

  ContextNet::Output forward_image(const Tensor& image, bool training) {
    return net_.forward(encode_image(image, training).grid, training);
  }

 private:
  ModelSpec spec_;
  ParamStore store_;
  Extractor extractor_;
  ContextNet net_;
};

// Architecture descriptor stored alongside checkpoints so inference can
// rebuild the exact graph.
inline std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["extractor"] = {{"family", to_string(spec.extractor.family)},
                    {"feature_depth", spec.extractor.feature_depth},
                    {"patch_size", spec.extractor.patch_size},
                    {"in_channels", spec.extractor.in_channels}};
  j["pooling"] = to_string(spec.pooling);
  j["context"] = {{"block", to_string(spec.context.block)},
                  {"attention", spec.context.attention},
                  {"attention_axis", to_string(spec.context.attention_axis)},
                  {"aux_head", spec.context.aux_head},
                  {"classes", spec.context.classes},
                  {"aux_classes", spec.context.aux_classes},
                  {"b1_width", spec.context.b1_width},
                  {"b2_squeeze", spec.context.b2_squeeze},
                  {"b2_expand", spec.context.b2_expand},
                  {"b3_widths", spec.context.b3_widths}};
  return j.dump(2);
}

inline ModelSpec model_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad architecture descriptor: ") + e.what());
  }
  try {
    ModelSpec spec;
    spec.extractor.family = extractor_family_from(j.at("extractor").at("family"));
    spec.extractor.feature_depth = j.at("extractor").at("feature_depth");
    spec.extractor.patch_size = j.at("extractor").at("patch_size");
    spec.extractor.in_channels = j.at("extractor").at("in_channels");
    spec.pooling = pooling_from(j.at("pooling"));
    const auto& c = j.at("context");
    spec.context.block = block_kind_from(c.at("block"));
    spec.context.attention = c.at("attention");
    spec.context.attention_axis = attention_axis_from(c.at("attention_axis"));
    spec.context.aux_head = c.at("aux_head");
    spec.context.classes = c.at("classes");
    spec.context.aux_classes = c.at("aux_classes");
    spec.context.b1_width = c.at("b1_width");
    spec.context.b2_squeeze = c.at("b2_squeeze");
    spec.context.b2_expand = c.at("b2_expand");
    spec.context.b3_widths = c.at("b3_widths");
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad architecture descriptor: ") + e.what());
  }
}

}  // namespace cact
