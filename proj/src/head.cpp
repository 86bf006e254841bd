#include "beltcrack/head.hpp"

#include <cmath>

namespace beltcrack {

Box decode_cell(const std::array<double, 4>& offsets, Index row, Index col, Index stride) {
  const double s = static_cast<double>(stride);
  const double cx = (static_cast<double>(col) + 0.5 + offsets[0]) * s;
  const double cy = (static_cast<double>(row) + 0.5 + offsets[1]) * s;
  return Box::from_center(cx, cy, std::exp(offsets[2]) * s, std::exp(offsets[3]) * s);
}

std::array<double, 4> encode_cell(const Box& box, Index row, Index col, Index stride) {
  const double s = static_cast<double>(stride);
  return {box.center_x() / s - static_cast<double>(col) - 0.5, box.center_y() / s - static_cast<double>(row) - 0.5,
          std::log(box.width() / s), std::log(box.height() / s)};
}

template <typename Scalar>
DetectionHead<Scalar>::DetectionHead(Index channels, Index hidden, Index stride, Rng& rng)
    : stem(channels, hidden, 1, rng),
      cls_branch(hidden, hidden, 3, rng),
      reg_branch(hidden, hidden, 3, rng),
      cls_pred(hidden, 1, 1, rng),
      obj_pred(hidden, 1, 1, rng),
      reg_pred(hidden, 4, 1, rng),
      stride_(stride) {
  // Rare-positive prior on the logits, small initial box offsets.
  const Scalar prior = static_cast<Scalar>(-std::log((1 - 0.01) / 0.01));
  cls_pred.bias.mutable_value().values().setConstant(prior);
  obj_pred.bias.mutable_value().values().setConstant(prior);
  reg_pred.weight.mutable_value().values() *= Scalar(0.1);
  reg_pred.bias.mutable_value().values().setZero();
}

template <typename Scalar>
HeadOutput<Scalar> DetectionHead<Scalar>::operator()(const Var<Scalar>& features) const {
  const Var<Scalar> x = stem(features);
  const Var<Scalar> c = cls_branch(x);
  HeadOutput<Scalar> out;
  out.cls = cls_pred(c);
  out.obj = obj_pred(c);
  out.reg = reg_pred(reg_branch(x));
  out.stride = stride_;
  return out;
}

template <typename Scalar>
void DetectionHead<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  stem.collect(out, prefix + ".stem");
  cls_branch.collect(out, prefix + ".cls_branch");
  reg_branch.collect(out, prefix + ".reg_branch");
  cls_pred.collect(out, prefix + ".cls_pred");
  obj_pred.collect(out, prefix + ".obj_pred");
  reg_pred.collect(out, prefix + ".reg_pred");
}

namespace {
double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

template <typename Scalar>
std::vector<Detection> decode_detections(const HeadOutput<Scalar>& out, double score_threshold, double image_width,
                                         double image_height) {
  std::vector<Detection> dets;
  const Index h = out.grid_height(), w = out.grid_width();
  const auto& reg = out.reg.value();
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      Detection d;
      d.objectness = logistic(out.obj.value().at(0, r, c));
      d.class_score = logistic(out.cls.value().at(0, r, c));
      d.score = d.objectness * d.class_score;
      if (d.score < score_threshold) continue;
      std::array<double, 4> offsets{};
      for (Index k = 0; k < 4; ++k) offsets[k] = std::clamp(static_cast<double>(reg.at(k, r, c)), -20.0, 20.0);
      d.box = decode_cell(offsets, r, c, out.stride).clamped(image_width, image_height);
      if (d.box.valid()) dets.push_back(d);
    }
  return dets;
}

bool detection_precedes(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
  return a.box.x_min < b.box.x_min;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold, double score_threshold) {
  std::erase_if(detections, [&](const Detection& d) { return d.score < score_threshold; });
  std::stable_sort(detections.begin(), detections.end(), detection_precedes);
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template class DetectionHead<float>;
template class DetectionHead<double>;
template std::vector<Detection> decode_detections(const HeadOutput<float>&, double, double, double);
template std::vector<Detection> decode_detections(const HeadOutput<double>&, double, double, double);

}  // namespace beltcrack
