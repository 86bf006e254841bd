#pragma once

#include "beltcrack/box.hpp"
#include "beltcrack/layers.hpp"

#include <array>
#include <vector>

namespace beltcrack {

// Raw head maps over the h x w grid: reg is (dx, dy, dw, dh) per cell, obj
// and cls are logits.
template <typename Scalar>
struct HeadOutput {
  Var<Scalar> reg;  // 4 x h x w
  Var<Scalar> obj;  // 1 x h x w
  Var<Scalar> cls;  // 1 x h x w
  Index stride = 1;

  Index grid_height() const { return obj.dim(1); }
  Index grid_width() const { return obj.dim(2); }
};

// Cell (row, col) decodes to center ((col + 0.5 + dx) * s, (row + 0.5 + dy) * s)
// and size (exp(dw) * s, exp(dh) * s).
Box decode_cell(const std::array<double, 4>& offsets, Index row, Index col, Index stride);
std::array<double, 4> encode_cell(const Box& box, Index row, Index col, Index stride);

// Decoupled anchor-free head: a shared 1x1 stem, then a classification and
// objectness branch in parallel with a regression branch.
template <typename Scalar>
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(Index channels, Index hidden, Index stride, Rng& rng);

  HeadOutput<Scalar> operator()(const Var<Scalar>& features) const;

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;

  ConvNormAct<Scalar> stem, cls_branch, reg_branch;
  Conv2d<Scalar> cls_pred, obj_pred, reg_pred;

 private:
  Index stride_ = 1;
};

// Every grid cell as a detection with score sigmoid(obj) * sigmoid(cls), boxes
// clamped to the image, keeping those at or above `score_threshold`.
template <typename Scalar>
std::vector<Detection> decode_detections(const HeadOutput<Scalar>& out, double score_threshold, double image_width,
                                         double image_height);

// Order used by nms: score descending, then larger area, then lower x_min.
bool detection_precedes(const Detection& a, const Detection& b);

// Greedy suppression: drops anything below `score_threshold`, then keeps a
// detection only if its IoU with every kept one is <= `iou_threshold`.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold = 0.65,
                           double score_threshold = 0.001);

}  // namespace beltcrack
