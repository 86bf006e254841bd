#include "beltcrack/fusion.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace beltcrack;

namespace {

Var<double> random_map(Shape shape, Rng& rng) { return constant(uniform_tensor<double>(std::move(shape), 1.0, rng)); }

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.values() - b.values()).abs().maxCoeff();
}

void zero_conv(Conv2d<double>& conv) {
  conv.weight.mutable_value().set_zero();
  if (conv.bias.defined()) conv.bias.mutable_value().set_zero();
}

}  // namespace

TEST_CASE("channel gate on a constant map follows the bias path") {
  Rng rng(1);
  ChannelAttention<double> cab(8, 4, rng);
  zero_conv(cab.squeeze);
  cab.excite.weight.mutable_value().set_zero();
  cab.excite.bias.mutable_value().values().setLinSpaced(8, -2.0, 2.0);
  const Tensor<double> g = cab.gate(random_map({8, 3, 3}, rng)).value();
  CHECK(g.shape() == Shape{8, 1, 1});
  for (Index c = 0; c < 8; ++c) {
    const double b = -2.0 + 4.0 * c / 7.0;
    CHECK(g[c] == doctest::Approx(1 / (1 + std::exp(-b))));
  }
}

TEST_CASE("channel gate pools by mean") {
  Rng rng(2);
  ChannelAttention<double> cab(4, 2, rng);
  const Var<double> x = random_map({4, 3, 5}, rng);
  // Pool by hand and run the bottleneck on a 1x1 map.
  Tensor<double> pooled({4, 1, 1});
  for (Index c = 0; c < 4; ++c) pooled[c] = x.value().values().segment(c * 15, 15).mean();
  const Tensor<double> expect = sigmoid(cab.excite(relu(cab.squeeze(constant(pooled))))).value();
  CHECK(max_diff(cab.gate(x).value(), expect) < 1e-14);
}

TEST_CASE("spatial gate uses channel mean and max") {
  Rng rng(3);
  SpatialAttention<double> sab(rng);
  zero_conv(sab.conv);
  // Center taps only: gate = sigmoid(a * mean + b * max).
  Tensor<double>& w = sab.conv.weight.mutable_value();
  w[0 * 49 + 3 * 7 + 3] = 0.7;
  w[1 * 49 + 3 * 7 + 3] = -0.4;
  const Var<double> x = random_map({5, 4, 4}, rng);
  const Tensor<double> g = sab.gate(x).value();
  for (Index y = 0; y < 4; ++y)
    for (Index xx = 0; xx < 4; ++xx) {
      double m = 0, top = -1e9;
      for (Index c = 0; c < 5; ++c) {
        m += x.value().at(c, y, xx) / 5;
        top = std::max(top, x.value().at(c, y, xx));
      }
      CHECK(g.at(0, y, xx) == doctest::Approx(1 / (1 + std::exp(-(0.7 * m - 0.4 * top)))));
    }
}

TEST_CASE("gates stay in (0, 1)") {
  Rng rng(4);
  CsaBlock<double> block(8, 4, rng);
  const Var<double> x = random_map({8, 5, 5}, rng);
  const Tensor<double> cg = block.cab.gate(x).value(), sg = block.sab.gate(x).value();
  CHECK(cg.values().minCoeff() > 0.0);
  CHECK(cg.values().maxCoeff() < 1.0);
  CHECK(sg.values().minCoeff() > 0.0);
  CHECK(sg.values().maxCoeff() < 1.0);
}

TEST_CASE("csab is a residual around sab(cab(conv(x)))") {
  Rng rng(5);
  CsaBlock<double> block(4, 2, rng);
  const Var<double> x = random_map({4, 4, 4}, rng);
  const Var<double> y = block.conv(x);
  const Var<double> a = mul(y, block.cab.gate(y));
  const Tensor<double> expect = add(mul(a, block.sab.gate(a)), x).value();
  CHECK(max_diff(block(x).value(), expect) < 1e-14);
  zero_conv(block.conv);
  CHECK(max_diff(block(x).value(), x.value()) == 0.0);
}

TEST_CASE("rcu composes reduce and n blocks") {
  Rng rng(6);
  ResidualCompensationUnit<double> rcu(4, 2, 2, rng);
  REQUIRE(rcu.blocks.size() == 2);
  const Var<double> a = random_map({4, 3, 3}, rng), b = random_map({4, 3, 3}, rng);
  const Tensor<double> expect = rcu.blocks[1](rcu.blocks[0](rcu.reduced(a, b))).value();
  CHECK(max_diff(rcu(a, b).value(), expect) == 0.0);
  CHECK(rcu.reduced(a, b).value().values().minCoeff() >= 0.0);  // ReLU output
  CHECK_THROWS_AS(rcu(a, random_map({4, 2, 3}, rng)), std::invalid_argument);
  CHECK_THROWS_AS(ResidualCompensationUnit<double>(4, 0, 2, rng), std::invalid_argument);
}

TEST_CASE("rcu with identical halves of the reduce weights is symmetric") {
  Rng rng(7);
  ResidualCompensationUnit<double> rcu(3, 1, 1, rng);
  Tensor<double>& w = rcu.reduce.conv.weight.mutable_value();  // 3 x 6 x 1 x 1
  for (Index o = 0; o < 3; ++o)
    for (Index i = 0; i < 3; ++i) w[o * 6 + 3 + i] = w[o * 6 + i];
  const Var<double> a = random_map({3, 3, 3}, rng), b = random_map({3, 3, 3}, rng);
  CHECK(max_diff(rcu(a, b).value(), rcu(b, a).value()) < 1e-14);
}

TEST_CASE("one window equals plain attention over all positions") {
  Rng rng(8);
  WindowAttentionBlock<double> block(8, 4, 4, rng);
  const Var<double> x = random_map({8, 4, 4}, rng);
  const Var<double> tokens = to_tokens(x);
  const Tensor<double> expect = from_tokens(add(tokens, block.attention(block.norm(tokens))), 4, 4).value();
  CHECK(max_diff(block(x).value(), expect) < 1e-14);
}

TEST_CASE("windows do not interact") {
  Rng rng(9);
  WindowAttentionBlock<double> block(4, 2, 2, rng);
  const Var<double> x = random_map({4, 4, 6}, rng);
  const Tensor<double> base = block(x).value();
  Tensor<double> changed = x.value();
  changed.at(1, 0, 0) += 1.0;  // inside window (0, 0)
  const Tensor<double> after = block(constant(changed)).value();
  for (Index c = 0; c < 4; ++c)
    for (Index y = 0; y < 4; ++y)
      for (Index xx = 0; xx < 6; ++xx) {
        const bool same_window = y < 2 && xx < 2;
        if (!same_window) CHECK(after.at(c, y, xx) == base.at(c, y, xx));
      }
  CHECK(std::abs(after.at(0, 1, 1) - base.at(0, 1, 1)) > 0.0);
}

TEST_CASE("window padding crops back") {
  Rng rng(10);
  WindowAttentionBlock<double> block(4, 4, 2, rng);
  CHECK(block(random_map({4, 5, 3}, rng)).shape() == Shape{4, 5, 3});
}

TEST_CASE("fusion wiring follows the dependency graph") {
  Rng rng(11);
  FusionModule<double> fusion(4, FusionConfig{1, 2, 2, 2}, rng);
  const Var<double> s = random_map({4, 4, 4}, rng), t = random_map({4, 4, 4}, rng), f = random_map({4, 4, 4}, rng);
  const auto out = fusion.fuse_all(s, t, f);
  CHECK(out.output.shape() == Shape{4, 4, 4});

  // Perturbing the spatial input changes F_st and F_flst but not the
  // frequency-temporal branch.
  Tensor<double> s2 = s.value();
  s2.values() += 0.3;
  const auto moved = fusion.fuse_all(constant(s2), t, f);
  CHECK(max_diff(moved.frequency_temporal.value(), out.frequency_temporal.value()) == 0.0);
  CHECK(max_diff(moved.local_frequency_temporal.value(), out.local_frequency_temporal.value()) == 0.0);
  CHECK(max_diff(moved.spatial_temporal.value(), out.spatial_temporal.value()) > 1e-6);
  CHECK(max_diff(moved.local_fst.value(), out.local_fst.value()) > 1e-6);
  CHECK(max_diff(moved.output.value(), out.output.value()) > 1e-6);

  const Tensor<double> expect = fusion.rcu3(out.local_fst, out.frequency_temporal).value();
  CHECK(max_diff(out.output.value(), expect) == 0.0);
  CHECK_THROWS_AS(fusion.fuse_st(s, random_map({4, 2, 4}, rng)), std::invalid_argument);
}

TEST_CASE("fusion gradient check") {
  Rng rng(12);
  FusionModule<double> fusion(4, FusionConfig{1, 2, 2, 2}, rng);
  const Var<double> s = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
  const Var<double> t = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
  const Var<double> f = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
  const Tensor<double> w = uniform_tensor<double>({4, 4, 4}, 1.0, rng);
  NamedParameters<double> params;
  fusion.collect(params, "fusion");
  std::vector<Var<double>> wrt{s, t, f};
  for (auto& p : params) wrt.push_back(p.second);
  const auto r = testing::check_gradients([&] { return testing::readout(fusion.fuse_all(s, t, f).output, w); }, wrt);
  CHECK(r.max_relative_error < 1e-3);
}
