#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cact/checkpoint.hpp"
#include "cact/nn.hpp"
#include "cact/rng.hpp"

using cact::Init;
using cact::ParamStore;
using cact::Tensor;

namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("parameter names must be unique", "[nn]") {
  ParamStore store;
  store.param("layer.weight", {2, 2}, Init::uniform(2));
  CHECK_THROWS_AS(store.param("layer.weight", {2, 2}, Init::uniform(2)),
                  cact::ContractError);
  CHECK_THROWS_AS(store.buffer("layer.weight", {2}, 0.0), cact::ContractError);
  CHECK_THROWS_AS(store.find("nope"), cact::ContractError);
}

TEST_CASE("initialize fills by kind and respects the fan-in bound", "[nn]") {
  ParamStore store;
  Tensor w = store.param("w", {4, 9}, Init::uniform(9));
  Tensor g = store.param("g", {4}, Init::one());
  Tensor b = store.param("b", {4}, Init::zero());
  Tensor rm = store.buffer("rm", {4}, 0.5);
  store.initialize(42);

  const double bound = 1.0 / 3.0;
  bool any_nonzero = false;
  for (double v : w.values()) {
    CHECK(std::fabs(v) <= bound);
    any_nonzero |= v != 0.0;
  }
  CHECK(any_nonzero);
  for (double v : g.values()) CHECK(v == 1.0);
  for (double v : b.values()) CHECK(v == 0.0);
  for (double v : rm.values()) CHECK(v == 0.5);  // buffers untouched
}

TEST_CASE("per-name init streams are stable under registry growth", "[nn]") {
  ParamStore a;
  Tensor wa = a.param("shared.weight", {3, 3}, Init::uniform(3));
  a.initialize(7);

  ParamStore b;
  Tensor extra = b.param("aux_head.weight", {5, 5}, Init::uniform(5));
  Tensor wb = b.param("shared.weight", {3, 3}, Init::uniform(3));
  b.initialize(7);

  CHECK(wa.values() == wb.values());

  ParamStore c;
  Tensor wc = c.param("shared.weight", {3, 3}, Init::uniform(3));
  c.initialize(8);
  CHECK(wa.values() != wc.values());
}

TEST_CASE("layer structs register their parameters", "[nn]") {
  ParamStore store;
  cact::Conv2dLayer conv(store, "conv1", 3, 8, 4, 4, 2, 1);
  cact::BatchNorm2dLayer bn(store, "bn1", 8);
  cact::DenseLayer fc(store, "fc", 8, 4);
  store.initialize(1);

  CHECK(store.has("conv1.weight"));
  CHECK(store.has("conv1.bias"));
  CHECK(store.has("bn1.gamma"));
  CHECK(store.has("bn1.running_var"));
  CHECK(store.has("fc.weight"));
  CHECK(store.params().size() == 6);  // buffers excluded
  CHECK(store.all().size() == 8);

  Tensor x = Tensor::constant({2, 3, 8, 8}, 0.5);
  Tensor y = bn(conv(x), true);
  REQUIRE(y.shape() == cact::Shape{2, 8, 4, 4});
  Tensor pooled = cact::pool(y, cact::PoolKind::global_avg);
  Tensor logits = fc(cact::reshape(pooled, {2, 8}));
  REQUIRE(logits.shape() == cact::Shape{2, 4});
}

TEST_CASE("zero_grads clears every trainable gradient", "[nn]") {
  ParamStore store;
  Tensor w = store.param("w", {3}, Init::uniform(3));
  store.initialize(3);
  cact::sum(cact::hadamard(w, w)).backward();
  REQUIRE(w.has_grad());
  store.zero_grads();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact", "[checkpoint]") {
  const std::string path = temp_path("cact_ckpt_roundtrip.bin");
  ParamStore store;
  Tensor w = store.param("enc.weight", {2, 3, 4, 4}, Init::uniform(48));
  Tensor rm = store.buffer("enc.running_mean", {3}, 0.0);
  store.initialize(99);
  // awkward values: denormals-adjacent, negative zero, huge magnitudes
  w.data()[0] = -0.0;
  w.data()[1] = 1e-308;
  w.data()[2] = -1.7976931348623157e308;
  w.data()[3] = 0.1 + 0.2;
  rm.data()[1] = 3.5;

  cact::save_checkpoint(path, store);

  ParamStore loaded;
  Tensor w2 = loaded.param("enc.weight", {2, 3, 4, 4}, Init::uniform(48));
  Tensor rm2 = loaded.buffer("enc.running_mean", {3}, 0.0);
  cact::load_checkpoint(path, loaded);

  REQUIRE(w2.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::memcmp(&w2.values()[i], &w.values()[i], sizeof(double)) == 0);
  }
  CHECK(rm2.values() == rm.values());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint saves reproduce byte-identical files", "[checkpoint]") {
  const std::string p1 = temp_path("cact_ckpt_a.bin");
  const std::string p2 = temp_path("cact_ckpt_b.bin");
  ParamStore store;
  store.param("w", {16}, Init::uniform(4));
  store.initialize(5);
  cact::save_checkpoint(p1, store);
  cact::save_checkpoint(p2, store);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.size() == 4 + 2 + 8 + (4 + 1 + 8 + 8 + 16 * 8));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint loading validates header and contents", "[checkpoint]") {
  const std::string path = temp_path("cact_ckpt_bad.bin");

  SECTION("bad magic") {
    std::ofstream(path, std::ios::binary) << "NOPE";
    ParamStore store;
    store.param("w", {1}, Init::zero());
    CHECK_THROWS_WITH(cact::load_checkpoint(path, store),
                      Catch::Matchers::ContainsSubstring("magic"));
  }

  SECTION("unknown tensor name") {
    ParamStore saved;
    saved.param("other", {1}, Init::zero());
    saved.initialize(1);
    cact::save_checkpoint(path, saved);
    ParamStore store;
    store.param("w", {1}, Init::zero());
    CHECK_THROWS_WITH(cact::load_checkpoint(path, store),
                      Catch::Matchers::ContainsSubstring("other"));
  }

  SECTION("shape mismatch") {
    ParamStore saved;
    saved.param("w", {2, 2}, Init::zero());
    saved.initialize(1);
    cact::save_checkpoint(path, saved);
    ParamStore store;
    store.param("w", {4}, Init::zero());
    CHECK_THROWS_WITH(cact::load_checkpoint(path, store),
                      Catch::Matchers::ContainsSubstring("shape mismatch"));
  }

  SECTION("entry count mismatch") {
    ParamStore saved;
    saved.param("w", {1}, Init::zero());
    saved.initialize(1);
    cact::save_checkpoint(path, saved);
    ParamStore store;
    store.param("w", {1}, Init::zero());
    store.param("extra", {1}, Init::zero());
    CHECK_THROWS_AS(cact::load_checkpoint(path, store), cact::IoError);
  }

  SECTION("truncated file") {
    ParamStore saved;
    saved.param("w", {8}, Init::uniform(2));
    saved.initialize(1);
    cact::save_checkpoint(path, saved);
    std::error_code ec;
    std::filesystem::resize_file(path, 20, ec);
    REQUIRE_FALSE(ec);
    ParamStore store;
    store.param("w", {8}, Init::zero());
    CHECK_THROWS_AS(cact::load_checkpoint(path, store), cact::IoError);
  }

  std::remove(path.c_str());
}
