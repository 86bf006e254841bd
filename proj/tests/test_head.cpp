#include "beltcrack/head.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <random>

using namespace beltcrack;

TEST_CASE("zero offsets decode to the cell box") {
  const Box b = decode_cell({0, 0, 0, 0}, 2, 3, 16);
  CHECK(b.center_x() == 56.0);
  CHECK(b.center_y() == 40.0);
  CHECK(b.width() == 16.0);
  CHECK(b.height() == 16.0);
  const Box c = decode_cell({0.25, -0.5, std::log(2.0), 0.0}, 0, 0, 8);
  CHECK(c.center_x() == doctest::Approx(6.0));
  CHECK(c.center_y() == doctest::Approx(0.0));
  CHECK(c.width() == doctest::Approx(16.0));
}

TEST_CASE("encode inverts decode") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 50; ++i) {
    const std::array<double, 4> off{u(rng), u(rng), u(rng), u(rng)};
    const auto back = encode_cell(decode_cell(off, 3, 1, 8), 3, 1, 8);
    for (int k = 0; k < 4; ++k) CHECK(back[k] == doctest::Approx(off[k]).epsilon(1e-12));
  }
}

TEST_CASE("head output shapes and prior") {
  Rng rng(1);
  DetectionHead<double> head(8, 8, 16, rng);
  const auto out = head(constant(uniform_tensor<double>({8, 4, 5}, 1.0, rng)));
  CHECK(out.reg.shape() == Shape{4, 4, 5});
  CHECK(out.obj.shape() == Shape{1, 4, 5});
  CHECK(out.cls.shape() == Shape{1, 4, 5});
  CHECK(out.grid_height() == 4);
  CHECK(out.grid_width() == 5);
  CHECK(out.stride == 16);
}

TEST_CASE("zero logits give score 0.25") {
  HeadOutput<double> out;
  out.reg = constant(Tensor<double>({4, 2, 2}));
  out.obj = constant(Tensor<double>({1, 2, 2}));
  out.cls = constant(Tensor<double>({1, 2, 2}));
  out.stride = 8;
  const auto dets = decode_detections(out, 0.0, 16, 16);
  REQUIRE(dets.size() == 4);
  for (const auto& d : dets) {
    CHECK(d.score == doctest::Approx(0.25));
    CHECK(d.box.area() == doctest::Approx(64.0));
  }
  CHECK(decode_detections(out, 0.3, 16, 16).empty());
}

TEST_CASE("decoded boxes are clamped to the image") {
  HeadOutput<double> out;
  out.reg = constant(Tensor<double>({4, 1, 1}, {-1.0, -1.0, 1.0, 1.0}));
  out.obj = constant(Tensor<double>({1, 1, 1}, 5.0));
  out.cls = constant(Tensor<double>({1, 1, 1}, 5.0));
  out.stride = 8;
  const auto dets = decode_detections(out, 0.0, 8, 8);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].box.x_min == 0.0);
  CHECK(dets[0].box.y_min == 0.0);
  CHECK(dets[0].box.x_max <= 8.0);
}

namespace {

Detection det(double x0, double y0, double x1, double y1, double score) {
  Detection d;
  d.box = {x0, y0, x1, y1};
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("nms basics") {
  const std::vector<Detection> dets{det(0, 0, 10, 10, 0.9), det(1, 1, 11, 11, 0.8), det(20, 20, 30, 30, 0.7),
                                    det(0, 0, 10, 10, 0.0005)};
  const auto kept = nms(dets);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.7);
  CHECK(nms({}).empty());
}

TEST_CASE("nms threshold is strict") {
  // IoU exactly 0.5: suppressed at 0.49, kept at 0.5.
  const std::vector<Detection> dets{det(0, 0, 30, 10, 0.9), det(10, 0, 40, 10, 0.8)};
  CHECK(iou(dets[0].box, dets[1].box) == doctest::Approx(0.5));
  CHECK(nms(dets, 0.49).size() == 1);
  CHECK(nms(dets, 0.5).size() == 2);
}

TEST_CASE("nms tie-breaks by area then x_min") {
  const std::vector<Detection> dets{det(2, 0, 12, 10, 0.5), det(0, 0, 12, 10, 0.5), det(1, 0, 11, 10, 0.5)};
  const auto kept = nms(dets, 0.99);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].box.x_min == 0.0);
  CHECK(kept[1].box.x_min == 1.0);
  CHECK(kept[2].box.x_min == 2.0);
}

TEST_CASE("nms matches brute force on random scenarios") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 40), size(2, 20), score(0, 1);
  std::uniform_int_distribution<int> count(0, 10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const double x = pos(rng), y = pos(rng);
      dets.push_back(det(x, y, x + size(rng), y + size(rng), score(rng)));
    }
    const auto got = nms(dets, 0.3);
    const auto want = testing::reference_nms(dets, 0.3, 0.001);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].box == want[i].box);
  }
}

TEST_CASE("head gradient check") {
  Rng rng(5);
  DetectionHead<double> head(4, 4, 8, rng);
  const Var<double> x = parameter(uniform_tensor<double>({4, 3, 3}, 1.0, rng));
  const Tensor<double> wr = uniform_tensor<double>({4, 3, 3}, 1.0, rng), wo = uniform_tensor<double>({1, 3, 3}, 1.0, rng);
  NamedParameters<double> params;
  head.collect(params, "head");
  std::vector<Var<double>> wrt{x};
  for (auto& p : params) wrt.push_back(p.second);
  const auto r = testing::check_gradients(
      [&] {
        const auto out = head(x);
        return testing::readout(out.reg, wr) + testing::readout(out.obj, wo) + testing::readout(out.cls, wo);
      },
      wrt);
  CHECK(r.max_relative_error < 1e-4);
}
