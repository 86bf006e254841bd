#pragma once

#include "beltcrack/box.hpp"
#include "beltcrack/head.hpp"

#include <vector>

namespace beltcrack {

struct LossWeights {
  double reg = 5.0;   // lambda_reg
  double cls = 1.0;   // lambda_cls
  double obj = 1.0;   // lambda_obj
  double iou = 0.5;   // zeta
  double nwd = 0.5;   // eta
  double nwd_constant = 12.8;  // C
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct LossBreakdown {
  double total = 0, reg = 0, iou = 0, nwd = 0, cls = 0, obj = 0;
  bool no_positives = false;  // regression and cls terms were defined as 0
};

// Box as N(center, diag((w/2)^2, (h/2)^2)).
struct GaussianBox {
  double cx = 0, cy = 0;
  double half_w = 0, half_h = 0;

  static GaussianBox from_box(const Box& b) { return {b.center_x(), b.center_y(), 0.5 * b.width(), 0.5 * b.height()}; }
};

// Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
double wasserstein2_squared(const GaussianBox& a, const GaussianBox& b);
double normalized_wasserstein(const Box& pred, const Box& gt, double constant);

// 1 - IoU. Throws std::invalid_argument for a degenerate ground truth.
double iou_loss(const Box& pred, const Box& gt);
// 1 - exp(-sqrt(W2^2) / C).
double nwd_loss(const Box& pred, const Box& gt, double constant);
// Mean of -alpha_t (1 - p_t)^gamma log p_t over elements, p = sigmoid(logit).
double focal_loss(const std::vector<double>& logits, const std::vector<double>& targets, double alpha, double gamma);

// Mean sqrt(area) over boxes; a data-driven choice for C.
double estimate_nwd_constant(const std::vector<Box>& boxes);

// Training targets on the head grid. A ground truth claims every cell whose
// center lies within `radius` strides of its center; a cell claimed by
// several boxes goes to the smallest.
struct CellTargets {
  Index grid_height = 0, grid_width = 0, stride = 1;
  std::vector<Index> positive_cells;  // row * grid_width + col
  std::vector<Box> matched_boxes;     // ground truth per positive cell
};

CellTargets assign_targets(const std::vector<Box>& ground_truth, Index grid_height, Index grid_width, Index stride,
                           double radius = 1.5);

// Differentiable pieces over K x 1 columns.
template <typename Scalar>
Var<Scalar> focal_loss(const Var<Scalar>& logits, const Tensor<Scalar>& targets, double alpha, double gamma);
template <typename Scalar>
Var<Scalar> iou_loss(const Var<Scalar>& pred_boxes, const Tensor<Scalar>& gt_boxes);  // K x 4 -> mean
template <typename Scalar>
Var<Scalar> nwd_loss(const Var<Scalar>& pred_boxes, const Tensor<Scalar>& gt_boxes, double constant);

// Decoded K x 4 (x_min, y_min, x_max, y_max) boxes for the given cells.
template <typename Scalar>
Var<Scalar> decode_cells(const Var<Scalar>& reg, const std::vector<Index>& cells, Index stride);

template <typename Scalar>
struct LossResult {
  Var<Scalar> total;
  LossBreakdown breakdown;
};

// total = lambda_reg (zeta L_iou + eta L_nwd) + lambda_cls L_cls + lambda_obj L_obj.
// Regression and classification average over positive cells, objectness
// over every cell.
template <typename Scalar>
LossResult<Scalar> total_loss(const HeadOutput<Scalar>& out, const CellTargets& targets, const LossWeights& weights);

}  // namespace beltcrack
