#include <catch2/catch_amalgamated.hpp>

#include "cact/ops.hpp"
#include "cact/tensor.hpp"

using cact::Tensor;

TEST_CASE("shape bookkeeping matches construction", "[tensor]") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.size() == 24);
  CHECK(t.extent(1) == 3);
  CHECK(cact::shape_str(t.shape()) == "[2x3x4]");
}

TEST_CASE("invalid shapes are rejected", "[tensor]") {
  CHECK_THROWS_AS(Tensor::zeros({}), cact::DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({3, 0, 2}), cact::DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), cact::DimensionError);
}

TEST_CASE("row-major indexing", "[tensor]") {
  Tensor t = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({0, 0}) == 0.0);
  CHECK(t.at({0, 2}) == 2.0);
  CHECK(t.at({1, 0}) == 3.0);
  CHECK(t.at({1, 2}) == 5.0);
  CHECK_THROWS_AS(t.at({2, 0}), cact::DimensionError);
  CHECK_THROWS_AS(t.at({0}), cact::DimensionError);
}

TEST_CASE("item is scalar-only", "[tensor]") {
  CHECK(Tensor::scalar(4.25).item() == 4.25);
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), cact::ContractError);
}

TEST_CASE("op outputs are immutable, leaves are not", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.data()[0] = 7.0;
  CHECK(x.at({0}) == 7.0);
  Tensor y = cact::scale(x, 2.0);
  CHECK_THROWS_AS(y.data(), cact::ContractError);
  CHECK_THROWS_AS(y.set_requires_grad(true), cact::ContractError);
}

TEST_CASE("backward demands a recorded scalar", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(cact::scale(x, 2.0).backward(), cact::ContractError);  // not scalar
  Tensor plain = Tensor::scalar(1.0);
  CHECK_THROWS_AS(plain.backward(), cact::ContractError);  // nothing recorded
}

TEST_CASE("NoGrad suppresses graph recording", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor tracked = cact::sum(x);
  CHECK(tracked.requires_grad());
  {
    cact::NoGrad guard;
    Tensor untracked = cact::sum(x);
    CHECK_FALSE(untracked.requires_grad());
    CHECK(cact::Graph::trace(untracked).nodes().size() == 1);
  }
  CHECK(cact::Graph::trace(tracked).nodes().size() == 2);
}

TEST_CASE("graph trace is topologically ordered", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = Tensor::from({2}, {3.0, 4.0}, true);
  Tensor loss = cact::sum(cact::hadamard(x, y));
  cact::Graph g = cact::Graph::trace(loss);
  REQUIRE(g.nodes().size() == 4);
  bool saw_hadamard = false, saw_sum = false;
  for (const auto& node : g.nodes()) {
    for (std::size_t pid : node.parents) CHECK(pid < node.id);
    saw_hadamard |= node.op == "hadamard";
    saw_sum |= node.op == "sum";
  }
  CHECK(saw_hadamard);
  CHECK(saw_sum);
  CHECK(g.nodes().back().op == "sum");
}
