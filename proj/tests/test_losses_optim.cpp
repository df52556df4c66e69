#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "cact/losses.hpp"
#include "cact/ops.hpp"
#include "cact/optimizer.hpp"
#include "cact/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using cact::Tensor;

namespace {

Tensor random_logits(const cact::Shape& shape, std::uint64_t seed, bool requires_grad = false) {
  cact::Rng rng(seed);
  std::vector<double> v(cact::shape_size(shape));
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return Tensor::from(shape, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("classification loss on exact predictions is zero", "[losses]") {
  Tensor onehot = cact::one_hot({2, 0, 3}, 4);
  CHECK(cact::loss_cls(onehot, onehot).item() == 0.0);
}

TEST_CASE("uniform probabilities over four classes cost two bits", "[losses]") {
  Tensor probs = Tensor::constant({3, 4}, 0.25);
  Tensor onehot = cact::one_hot({0, 1, 3}, 4);
  CHECK(cact::loss_cls(onehot, probs).item() == 2.0);
}

TEST_CASE("classification loss matches a plain loop oracle", "[losses]") {
  const std::size_t K = 7, C = 4;
  Tensor probs = softmax(random_logits({K, C}, 911), 1);
  std::vector<std::size_t> labels = {0, 3, 1, 1, 2, 0, 3};
  Tensor onehot = cact::one_hot(labels, C);
  const double expect = oracle::cross_entropy_base2(probs.values(), labels, C);
  CHECK(cact::loss_cls(onehot, probs).item() == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("non-normalized probability rows are rejected", "[losses]") {
  Tensor probs = Tensor::from({2, 2}, {0.5, 0.5, 0.6, 0.6});
  Tensor onehot = cact::one_hot({0, 1}, 2);
  CHECK_THROWS_AS(cact::loss_cls(onehot, probs), cact::ContractError);
  CHECK_THROWS_WITH(cact::loss_cls(onehot, probs),
                    Catch::Matchers::ContainsSubstring("row 1"));
  Tensor ok = Tensor::from({1, 2}, {0.5 + 4e-7, 0.5});
  CHECK_NOTHROW(cact::loss_cls(cact::one_hot({0}, 2), ok));
}

TEST_CASE("zero probability at the label is clamped to a finite loss", "[losses]") {
  Tensor probs = Tensor::from({1, 2}, {0.0, 1.0});
  Tensor onehot = cact::one_hot({0}, 2);
  const double loss = cact::loss_cls(onehot, probs).item();
  CHECK(std::isfinite(loss));
  CHECK(loss == Catch::Approx(-std::log2(1e-12)));
}

TEST_CASE("classification loss gradient matches finite differences", "[losses]") {
  Tensor logits = random_logits({4, 4}, 913, true);
  Tensor onehot = cact::one_hot({1, 0, 2, 3}, 4);
  auto report = gradcheck::check(
      [&] { return cact::loss_cls(onehot, softmax(logits, 1)); }, {{"logits", logits}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("sample weight is the capped inverse tissue ratio", "[losses]") {
  CHECK(cact::sample_weight(0.25) == 4.0);
  CHECK(cact::sample_weight(0.05) == 10.0);
  CHECK(cact::sample_weight(0.10) == 10.0);
  CHECK(cact::sample_weight(0.5) == 2.0);
  CHECK(cact::sample_weight(1.0) == 1.0);
  CHECK(cact::sample_weight(0.4, 0.5) == 2.0);
  CHECK_THROWS_AS(cact::sample_weight(-0.1), cact::ContractError);
  CHECK_THROWS_AS(cact::sample_weight(1.5), cact::ContractError);
}

TEST_CASE("unit weights reproduce the classification loss exactly", "[losses]") {
  Tensor probs = softmax(random_logits({5, 4}, 917), 1);
  Tensor onehot = cact::one_hot({0, 1, 2, 3, 1}, 4);
  const double base = cact::loss_cls(onehot, probs).item();
  const double weighted =
      cact::loss_weighted(onehot, probs, {1.0, 1.0, 1.0, 1.0, 1.0}).item();
  CHECK(weighted == base);
}

TEST_CASE("a single uniform sample with weight ten costs twenty bits", "[losses]") {
  Tensor probs = Tensor::constant({1, 4}, 0.25);
  Tensor onehot = cact::one_hot({2}, 4);
  CHECK(cact::loss_weighted(onehot, probs, {10.0}).item() == 20.0);
}

TEST_CASE("weighted loss validates its weights", "[losses]") {
  Tensor probs = Tensor::constant({2, 4}, 0.25);
  Tensor onehot = cact::one_hot({0, 1}, 4);
  CHECK_THROWS_AS(cact::loss_weighted(onehot, probs, {0.5, 1.0}), cact::ContractError);
  CHECK_THROWS_AS(cact::loss_weighted(onehot, probs, {1.0}), cact::DimensionError);
}

TEST_CASE("weighted loss matches a loop oracle and finite differences", "[losses]") {
  const std::size_t K = 6, C = 4;
  std::vector<std::size_t> labels = {3, 0, 1, 2, 2, 0};
  std::vector<double> weights = {1.0, 4.0, 10.0, 2.0, 1.0, 7.5};
  Tensor logits = random_logits({K, C}, 919, true);
  Tensor onehot = cact::one_hot(labels, C);

  Tensor probs = softmax(logits, 1);
  double expect = 0.0;
  for (std::size_t r = 0; r < K; ++r)
    expect += weights[r] * -std::log2(std::max(probs.values()[r * C + labels[r]], 1e-12));
  expect /= K;
  CHECK(cact::loss_weighted(onehot, probs, weights).item() ==
        Catch::Approx(expect).margin(1e-12));

  auto report = gradcheck::check(
      [&] { return cact::loss_weighted(onehot, softmax(logits, 1), weights); },
      {{"logits", logits}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("uniform segmentation maps over four classes cost two bits", "[losses]") {
  Tensor probs = Tensor::constant({2, 4, 3, 3}, 0.25);
  std::vector<double> mask(2 * 4 * 3 * 3, 0.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t s = 0; s < 9; ++s) mask[(k * 4 + (s % 4)) * 9 + s] = 1.0;
  CHECK(cact::loss_seg(Tensor::from({2, 4, 3, 3}, mask), probs).item() == 2.0);
}

TEST_CASE("segmentation loss averages cells within an image then images", "[losses]") {
  const std::size_t K = 2, C = 3, M = 2, N = 2;
  Tensor logits = random_logits({K, C, M, N}, 929, true);
  Tensor probs = softmax(logits, 1);
  std::vector<std::size_t> cell_labels = {0, 2, 1, 1, 2, 0, 0, 1};
  std::vector<double> mask(K * C * M * N, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t s = 0; s < M * N; ++s)
      mask[(k * C + cell_labels[k * M * N + s]) * M * N + s] = 1.0;
  Tensor mask_t = Tensor::from({K, C, M, N}, mask);

  double expect = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double img = 0.0;
    for (std::size_t s = 0; s < M * N; ++s) {
      const std::size_t lbl = cell_labels[k * M * N + s];
      img += -std::log2(std::max(probs.values()[(k * C + lbl) * M * N + s], 1e-12));
    }
    expect += img / (M * N);
  }
  expect /= K;
  CHECK(cact::loss_seg(mask_t, probs).item() == Catch::Approx(expect).margin(1e-12));

  auto report = gradcheck::check(
      [&] { return cact::loss_seg(mask_t, softmax(logits, 1)); }, {{"logits", logits}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("segmentation loss validates shapes and cell normalization", "[losses]") {
  Tensor probs = Tensor::constant({1, 4, 2, 2}, 0.25);
  CHECK_THROWS_AS(cact::loss_seg(Tensor::constant({1, 4, 2, 3}, 0.0), probs),
                  cact::DimensionError);
  CHECK_THROWS_AS(cact::loss_seg(Tensor::constant({1, 4}, 0.0), Tensor::constant({1, 4}, 0.25)),
                  cact::DimensionError);
  Tensor bad = Tensor::constant({1, 4, 2, 2}, 0.3);
  CHECK_THROWS_AS(cact::loss_seg(Tensor::constant({1, 4, 2, 2}, 0.0), bad),
                  cact::ContractError);
}

TEST_CASE("joint loss reduces to each head at the alpha extremes", "[losses]") {
  Tensor probs = softmax(random_logits({2, 4}, 937), 1);
  Tensor onehot = cact::one_hot({1, 3}, 4);
  Tensor seg_probs = softmax(random_logits({2, 4, 2, 2}, 941), 1);
  std::vector<double> mask(2 * 4 * 2 * 2, 0.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t s = 0; s < 4; ++s) mask[(k * 4 + (s + k) % 4) * 4 + s] = 1.0;
  Tensor mask_t = Tensor::from({2, 4, 2, 2}, mask);

  const double cls = cact::loss_cls(onehot, probs).item();
  const double seg = cact::loss_seg(mask_t, seg_probs).item();
  CHECK(cact::loss_joint(onehot, probs, mask_t, seg_probs, 1.0).item() == cls);
  CHECK(cact::loss_joint(onehot, probs, mask_t, seg_probs, 0.0).item() == seg);

  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double joint = cact::loss_joint(onehot, probs, mask_t, seg_probs, alpha).item();
    CHECK(joint == Catch::Approx(alpha * cls + (1.0 - alpha) * seg).margin(1e-12));
  }
  CHECK_THROWS_AS(cact::loss_joint(onehot, probs, mask_t, seg_probs, 1.5),
                  cact::ContractError);
}

TEST_CASE("joint loss of uniform heads is two bits at any mixture", "[losses]") {
  Tensor probs = Tensor::constant({1, 4}, 0.25);
  Tensor onehot = cact::one_hot({0}, 4);
  Tensor seg_probs = Tensor::constant({1, 4, 2, 2}, 0.25);
  std::vector<double> mask(16, 0.0);
  for (std::size_t s = 0; s < 4; ++s) mask[(s % 4) * 4 + s] = 1.0;
  Tensor mask_t = Tensor::from({1, 4, 2, 2}, mask);
  CHECK(cact::loss_joint(onehot, probs, mask_t, seg_probs, 0.5).item() == 2.0);
}

TEST_CASE("joint loss gradient matches finite differences", "[losses]") {
  Tensor logits = random_logits({2, 4}, 947, true);
  Tensor seg_logits = random_logits({2, 4, 2, 2}, 953, true);
  Tensor onehot = cact::one_hot({2, 0}, 4);
  std::vector<double> mask(2 * 4 * 2 * 2, 0.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t s = 0; s < 4; ++s) mask[(k * 4 + (s * 2 + k) % 4) * 4 + s] = 1.0;
  Tensor mask_t = Tensor::from({2, 4, 2, 2}, mask);
  auto report = gradcheck::check(
      [&] {
        return cact::loss_joint(onehot, softmax(logits, 1), mask_t,
                                softmax(seg_logits, 1), 0.3);
      },
      {{"logits", logits}, {"seg_logits", seg_logits}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("rmsprop leaves parameters untouched when gradients are zero", "[optim]") {
  cact::ParamStore store;
  Tensor p = store.param("toy.weight", {3}, cact::Init::uniform(3));
  store.initialize(5);
  const std::vector<double> before = p.values();

  cact::RmsProp opt(store, {0.05, 0.9, 1e-8});
  opt.step();  // no gradient buffer at all
  CHECK(p.values() == before);

  Tensor loss = scale(sum(p), 0.0);
  loss.backward();
  opt.step();  // gradient buffer present but zero
  CHECK(p.values() == before);
}

TEST_CASE("one rmsprop step matches the closed form", "[optim]") {
  cact::ParamStore store;
  Tensor p = store.param("toy.weight", {2}, cact::Init::zero());
  p.data() = {1.0, -0.5};

  cact::RmsProp opt(store, {0.01, 0.9, 0.0});
  Tensor loss = sum(p);
  loss.backward();
  opt.step();

  // g = 1, v = 0.1, step = lr / sqrt(0.1)
  const double delta = 0.01 / std::sqrt(0.1);
  CHECK(delta == Catch::Approx(0.031623).margin(1e-6));
  CHECK(p.values()[0] == Catch::Approx(1.0 - delta).margin(1e-12));
  CHECK(p.values()[1] == Catch::Approx(-0.5 - delta).margin(1e-12));
  CHECK(opt.accumulator("toy.weight")[0] == Catch::Approx(0.1).margin(1e-15));

  store.zero_grads();
  Tensor loss2 = sum(p);
  loss2.backward();
  opt.step();
  CHECK(opt.accumulator("toy.weight")[0] == Catch::Approx(0.19).margin(1e-15));
  CHECK(p.values()[0] ==
        Catch::Approx(1.0 - delta - 0.01 / std::sqrt(0.19)).margin(1e-12));
}

TEST_CASE("rmsprop drives a quadratic bowl near the origin", "[optim]") {
  cact::ParamStore store;
  Tensor p = store.param("toy.weight", {1}, cact::Init::zero());
  p.data() = {5.0};

  cact::RmsProp opt(store, {0.08, 0.9, 1e-8});
  for (int i = 0; i < 100; ++i) {
    store.zero_grads();
    Tensor loss = sum(hadamard(p, p));
    loss.backward();
    opt.step();
  }
  CHECK(std::fabs(p.values()[0]) < 0.1);
}

TEST_CASE("rmsprop aborts on a non-finite gradient naming the parameter", "[optim]") {
  cact::ParamStore store;
  Tensor p = store.param("toy.poison", {2}, cact::Init::zero());
  p.data() = {1.0, 2.0};
  Tensor loss = scale(sum(p), std::numeric_limits<double>::infinity());
  loss.backward();
  cact::RmsProp opt(store);
  CHECK_THROWS_WITH(opt.step(), Catch::Matchers::ContainsSubstring("toy.poison"));
}
