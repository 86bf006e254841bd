#include "beltcrack/atm.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace beltcrack;

namespace {

FeatureStack<double> random_stack(Index t, Index c, Index h, Index w, Rng& rng) {
  FeatureStack<double> s;
  for (Index i = 0; i < t; ++i) s.frames.push_back(constant(uniform_tensor<double>({c, h, w}, 1.0, rng)));
  return s;
}

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.values() - b.values()).abs().maxCoeff();
}

}  // namespace

TEST_CASE("affinity of all-ones maps counts channels") {
  const Var<double> ones = constant(Tensor<double>({4, 3, 2}, 1.0));
  const Tensor<double> a = affinity(ones, ones).value();
  CHECK(a.shape() == Shape{1, 3, 2});
  CHECK((a.values() - 4.0).abs().maxCoeff() == 0.0);
  CHECK(affinity(ones, constant(Tensor<double>({4, 3, 2}))).value().max_abs() == 0.0);
  CHECK_THROWS_AS(affinity(ones, constant(Tensor<double>({4, 2, 3}))), std::invalid_argument);
}

TEST_CASE("affinity matches a loop") {
  Rng rng(1);
  const auto s = random_stack(2, 5, 3, 4, rng);
  const Tensor<double> a = affinity(s.frames[0], s.frames[1]).value();
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 4; ++x) {
      double dot = 0;
      for (Index c = 0; c < 5; ++c) dot += s.frames[0].value().at(c, y, x) * s.frames[1].value().at(c, y, x);
      CHECK(a.at(0, y, x) == doctest::Approx(dot).epsilon(1e-14));
    }
}

TEST_CASE("first difference map is the self affinity") {
  Rng rng(2);
  const auto s = random_stack(3, 4, 2, 2, rng);
  const Var<double> c11 = affinity(s.keyframe(), s.keyframe());
  const auto d = difference_maps<double>(c11, {affinity(s.keyframe(), s.frames[0]), affinity(s.keyframe(), s.frames[1])});
  REQUIRE(d.size() == 3);
  CHECK(max_diff(d[0].value(), c11.value()) == 0.0);
  // Identical frames give zero differences.
  const auto same = difference_maps<double>(c11, {c11});
  CHECK(same[1].value().max_abs() == 0.0);
}

TEST_CASE("identical frames aggregate to C_11 F") {
  Rng rng(3);
  auto s = random_stack(1, 4, 3, 3, rng);
  s.frames.assign(4, s.frames[0]);
  const Tensor<double> got = aggregate(s).value();
  const Tensor<double> c11 = affinity(s.keyframe(), s.keyframe()).value();
  const Tensor<double>& f = s.keyframe().value();
  for (Index c = 0; c < 4; ++c)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 3; ++x) CHECK(got.at(c, y, x) == doctest::Approx(c11.at(0, y, x) * f.at(c, y, x)));
}

TEST_CASE("aggregate agrees with both closed forms") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stack(3, 3, 4, 4, rng);
    const Tensor<double> dense = s.to_tensor();
    const Tensor<double> got = aggregate(s).value();
    CHECK(max_diff(got, testing::aggregate_differences(dense)) < 1e-12);
    CHECK(max_diff(got, testing::aggregate_expanded(dense)) < 1e-12);
  }
}

TEST_CASE("aggregate is invariant to reference frame order") {
  Rng rng(5);
  const auto s = random_stack(4, 3, 3, 3, rng);
  auto p = s;
  std::swap(p.frames[0], p.frames[2]);
  CHECK(max_diff(aggregate(s).value(), aggregate(p).value()) < 1e-12);
}

TEST_CASE("single frame aggregate") {
  Rng rng(6);
  const auto s = random_stack(1, 3, 2, 2, rng);
  const Tensor<double> c11 = affinity(s.keyframe(), s.keyframe()).value();
  const Tensor<double> got = aggregate(s).value();
  for (Index c = 0; c < 3; ++c)
    CHECK(got.at(c, 1, 0) == doctest::Approx(c11.at(0, 1, 0) * s.keyframe().value().at(c, 1, 0)));
}

TEST_CASE("hourglass with zero output conv is the identity") {
  Rng rng(7);
  Hourglass<double> hg(8, 4, rng);
  hg.out_conv.weight.mutable_value().set_zero();
  hg.out_conv.bias.mutable_value().set_zero();
  for (Index size : {4, 5, 6, 8}) {
    const Var<double> x = constant(uniform_tensor<double>({8, size, size + 1}, 1.0, rng));
    CHECK(max_diff(hg(x).value(), x.value()) == 0.0);
  }
}

TEST_CASE("hourglass keeps the input shape") {
  Rng rng(8);
  TemporalModule<double> atm(8, 2, rng);
  const auto s = random_stack(3, 8, 5, 7, rng);
  const Var<double> out = atm(s);
  CHECK(out.shape() == Shape{8, 5, 7});
  CHECK(out.value().values().allFinite());
  CHECK(max_diff(out.value(), atm.global_context(aggregate(s)).value()) == 0.0);
}

TEST_CASE("temporal module gradient check") {
  Rng rng(9);
  TemporalModule<double> atm(4, 2, rng);
  FeatureStack<double> s;
  for (int i = 0; i < 3; ++i) s.frames.push_back(parameter(uniform_tensor<double>({4, 4, 4}, 0.7, rng)));
  const Tensor<double> w = uniform_tensor<double>({4, 4, 4}, 1.0, rng);
  NamedParameters<double> params;
  atm.collect(params, "atm");
  std::vector<Var<double>> wrt(s.frames.begin(), s.frames.end());
  for (auto& p : params) wrt.push_back(p.second);
  const auto r = testing::check_gradients([&] { return testing::readout(atm(s), w); }, wrt);
  CHECK(r.max_relative_error < 1e-4);
}
