#include "beltcrack/loss.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

#include <cmath>
#include <random>

using namespace beltcrack;

namespace {

Var<double> boxes_var(const std::vector<Box>& boxes) {
  Tensor<double> t({static_cast<Index>(boxes.size()), 4});
  for (Index i = 0; i < t.dim(0); ++i) {
    t.at(i, 0) = boxes[i].x_min;
    t.at(i, 1) = boxes[i].y_min;
    t.at(i, 2) = boxes[i].x_max;
    t.at(i, 3) = boxes[i].y_max;
  }
  return parameter(t);
}

double bce(double logit, double target) {
  const double p = 1 / (1 + std::exp(-logit));
  return -(target * std::log(p) + (1 - target) * std::log(1 - p));
}

}  // namespace

TEST_CASE("identical boxes cost nothing") {
  const Box b{3, 4, 17, 9};
  CHECK(iou_loss(b, b) == 0.0);
  CHECK(nwd_loss(b, b, 12.8) == 0.0);
  const Var<double> p = boxes_var({b});
  CHECK(iou_loss(p, p.value()).value()[0] == 0.0);
  CHECK(nwd_loss(p, p.value(), 12.8).value()[0] == 0.0);
}

TEST_CASE("offset (3, 4) with C = 5 gives 1 - 1/e") {
  const Box gt{10, 10, 20, 30};
  const Box moved{13, 14, 23, 34};
  CHECK(std::abs(nwd_loss(moved, gt, 5.0) - (1 - std::exp(-1.0))) < 1e-9);
  const Var<double> p = boxes_var({moved});
  CHECK(std::abs(nwd_loss(p, boxes_var({gt}).value(), 5.0).value()[0] - (1 - std::exp(-1.0))) < 1e-9);
}

TEST_CASE("wasserstein uses half extents") {
  // Same center, widths 4 and 10: (5 - 2)^2.
  CHECK(wasserstein2_squared(GaussianBox::from_box({0, 0, 4, 4}), GaussianBox::from_box({-3, -3, 7, 7})) ==
        doctest::Approx(18.0));
}

TEST_CASE("iou loss values") {
  CHECK(iou_loss(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}) == doctest::Approx(1 - 50.0 / 150.0));
  CHECK(iou_loss(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}) == 1.0);
  CHECK_THROWS_AS(iou_loss(Box{0, 0, 1, 1}, Box{2, 2, 2, 5}), std::invalid_argument);
  const Var<double> p = boxes_var({{0, 0, 10, 10}, {0, 0, 1, 1}});
  const Var<double> g = boxes_var({{5, 0, 15, 10}, {5, 5, 6, 6}});
  CHECK(iou_loss(p, g.value()).value()[0] == doctest::Approx((1 - 1.0 / 3.0 + 1.0) / 2));
}

TEST_CASE("focal with gamma 0 and alpha 0.5 is half the BCE") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  std::vector<double> logits, targets;
  double expect = 0;
  for (int i = 0; i < 30; ++i) {
    logits.push_back(n(rng));
    targets.push_back(i % 3 == 0 ? 1.0 : 0.0);
    expect += 0.5 * bce(logits.back(), targets.back());
  }
  expect /= 30;
  CHECK(std::abs(focal_loss(logits, targets, 0.5, 0.0) - expect) < 1e-9);
  Tensor<double> lt({30, 1}), tt({30, 1});
  for (Index i = 0; i < 30; ++i) {
    lt[i] = logits[i];
    tt[i] = targets[i];
  }
  CHECK(std::abs(focal_loss(constant(lt), tt, 0.5, 0.0).value()[0] - expect) < 1e-9);
}

TEST_CASE("differentiable focal matches the scalar form") {
  const std::vector<double> logits{-40, -3, -0.2, 0, 0.7, 5, 40}, targets{1, 0, 1, 0, 1, 1, 0};
  Tensor<double> lt({7, 1}, {-40, -3, -0.2, 0, 0.7, 5, 40}), tt({7, 1}, {1, 0, 1, 0, 1, 1, 0});
  const double v = focal_loss(constant(lt), tt, 0.25, 2.0).value()[0];
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(focal_loss(logits, targets, 0.25, 2.0)).epsilon(1e-12));
}

TEST_CASE("assignment claims cells within the radius") {
  // 4 x 4 grid, stride 16; box centered on cell (1, 1).
  const auto t = assign_targets({Box::from_center(24, 24, 10, 10)}, 4, 4, 16);
  // Euclidean radius 24 around (24, 24): the 3 x 3 block around (1, 1).
  CHECK(t.positive_cells == std::vector<Index>{0, 1, 2, 4, 5, 6, 8, 9, 10});
  CHECK(t.matched_boxes.size() == 9);

  const auto none = assign_targets({}, 4, 4, 16);
  CHECK(none.positive_cells.empty());
}

TEST_CASE("overlapping claims go to the smaller box") {
  const Box big = Box::from_center(24, 24, 30, 30), small = Box::from_center(40, 24, 6, 6);
  const auto t = assign_targets({big, small}, 4, 4, 16);
  for (std::size_t i = 0; i < t.positive_cells.size(); ++i) {
    const Index cell = t.positive_cells[i];
    const double cx = (cell % 4 + 0.5) * 16, cy = (cell / 4 + 0.5) * 16;
    const bool near_small = std::hypot(cx - 40, cy - 24) < 24;
    CHECK((t.matched_boxes[i] == (near_small ? small : big)));
  }
}

TEST_CASE("nwd constant estimate") {
  CHECK(estimate_nwd_constant({{0, 0, 4, 4}, {0, 0, 10, 10}}) == doctest::Approx(7.0));
  CHECK_THROWS_AS(estimate_nwd_constant({}), std::invalid_argument);
}

namespace {

HeadOutput<double> random_output(Rng& rng, Index h, Index w, Index stride) {
  HeadOutput<double> out;
  out.reg = parameter(uniform_tensor<double>({4, h, w}, 0.5, rng));
  out.obj = parameter(uniform_tensor<double>({1, h, w}, 2.0, rng));
  out.cls = parameter(uniform_tensor<double>({1, h, w}, 2.0, rng));
  out.stride = stride;
  return out;
}

}  // namespace

TEST_CASE("total loss combines the weighted terms") {
  Rng rng(2);
  const auto out = random_output(rng, 4, 4, 8);
  const auto targets = assign_targets({Box::from_center(12, 12, 9, 5), Box{20, 18, 30, 29}}, 4, 4, 8);
  LossWeights lw;
  const auto r = total_loss(out, targets, lw);
  const auto& b = r.breakdown;
  CHECK_FALSE(b.no_positives);
  CHECK(b.reg == doctest::Approx(0.5 * b.iou + 0.5 * b.nwd));
  CHECK(b.total == doctest::Approx(5 * b.reg + b.cls + b.obj));

  // Regression terms by hand.
  double iou_sum = 0, nwd_sum = 0;
  for (std::size_t i = 0; i < targets.positive_cells.size(); ++i) {
    const Index cell = targets.positive_cells[i];
    std::array<double, 4> off{};
    for (Index k = 0; k < 4; ++k) off[k] = out.reg.value()[k * 16 + cell];
    const Box pred = decode_cell(off, cell / 4, cell % 4, 8);
    iou_sum += iou_loss(pred, targets.matched_boxes[i]);
    nwd_sum += nwd_loss(pred, targets.matched_boxes[i], lw.nwd_constant);
  }
  const double k = static_cast<double>(targets.positive_cells.size());
  CHECK(b.iou == doctest::Approx(iou_sum / k).epsilon(1e-12));
  CHECK(b.nwd == doctest::Approx(nwd_sum / k).epsilon(1e-12));

  std::vector<double> obj_logits, obj_targets(16, 0.0);
  for (Index i = 0; i < 16; ++i) obj_logits.push_back(out.obj.value()[i]);
  for (Index c : targets.positive_cells) obj_targets[c] = 1.0;
  CHECK(b.obj == doctest::Approx(focal_loss(obj_logits, obj_targets, 0.25, 2.0)).epsilon(1e-12));
}

TEST_CASE("no positives leaves only the objectness term") {
  Rng rng(3);
  const auto out = random_output(rng, 2, 2, 8);
  const auto r = total_loss(out, assign_targets({}, 2, 2, 8), LossWeights{});
  CHECK(r.breakdown.no_positives);
  CHECK(r.breakdown.reg == 0.0);
  CHECK(r.breakdown.cls == 0.0);
  CHECK(r.breakdown.total == doctest::Approx(r.breakdown.obj));
  CHECK_THROWS_AS(total_loss(out, assign_targets({}, 3, 2, 8), LossWeights{}), std::invalid_argument);
}

TEST_CASE("total loss gradient check") {
  Rng rng(4);
  const auto out = random_output(rng, 3, 3, 4);
  const auto targets = assign_targets({Box{1, 2, 7, 5}, Box{6, 6, 11, 11.5}}, 3, 3, 4);
  REQUIRE_FALSE(targets.positive_cells.empty());
  const auto r = testing::check_gradients([&] { return total_loss(out, targets, LossWeights{}).total; },
                                          {out.reg, out.obj, out.cls});
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("iou loss for a half-overlapping pair") {
  CHECK(iou_loss(Box{0, 0, 2, 2}, Box{1, 0, 3, 2}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("focal at logit 0 with a positive target") {
  CHECK(focal_loss({0.0}, {1.0}, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-15));
  CHECK(focal_loss({60.0}, {1.0}, 0.25, 2.0) < 1e-20);
}

TEST_CASE("regression terms are symmetric and translation consistent") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(0, 50), size(1, 20), shift(-30, 30);
  for (int i = 0; i < 100; ++i) {
    const double ax = pos(rng), ay = pos(rng), bx = pos(rng), by = pos(rng);
    const Box a{ax, ay, ax + size(rng), ay + size(rng)}, b{bx, by, bx + size(rng), by + size(rng)};
    const double dx = shift(rng), dy = shift(rng);
    const Box a2{a.x_min + dx, a.y_min + dy, a.x_max + dx, a.y_max + dy};
    const Box b2{b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
    CHECK(iou_loss(a, b) == doctest::Approx(iou_loss(b, a)).epsilon(1e-12));
    CHECK(nwd_loss(a, b, 12.8) == doctest::Approx(nwd_loss(b, a, 12.8)).epsilon(1e-12));
    CHECK(iou_loss(a2, b2) == doctest::Approx(iou_loss(a, b)).epsilon(1e-9));
    CHECK(nwd_loss(a2, b2, 12.8) == doctest::Approx(nwd_loss(a, b, 12.8)).epsilon(1e-9));
  }
}

TEST_CASE("nwd loss grows with the center offset") {
  const Box gt{10, 10, 20, 16};
  double last = -1;
  for (int k = 0; k <= 40; ++k) {
    const double v = nwd_loss(Box{10.0 + k, 10, 20.0 + k, 16}, gt, 12.8);
    CHECK(v > last);
    CHECK(v < 1.0);
    last = v;
  }
}

TEST_CASE("total loss gradient on a 2x2 grid") {
  Rng rng(5);
  const auto out = random_output(rng, 2, 2, 8);
  const auto targets = assign_targets({Box{3, 2, 9, 7}}, 2, 2, 8);
  const auto r = testing::check_gradients([&] { return total_loss(out, targets, LossWeights{}).total; },
                                          {out.reg, out.obj, out.cls});
  CHECK(r.max_relative_error < 1e-5);
}
