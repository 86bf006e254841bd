#include "beltcrack/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace beltcrack {

double wasserstein2_squared(const GaussianBox& a, const GaussianBox& b) {
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  const double dw = a.half_w - b.half_w, dh = a.half_h - b.half_h;
  return dx * dx + dy * dy + dw * dw + dh * dh;
}

double normalized_wasserstein(const Box& pred, const Box& gt, double constant) {
  if (!(constant > 0)) throw std::invalid_argument("NWD constant must be positive");
  return std::exp(-std::sqrt(wasserstein2_squared(GaussianBox::from_box(pred), GaussianBox::from_box(gt))) / constant);
}

double iou_loss(const Box& pred, const Box& gt) {
  if (!gt.valid()) throw std::invalid_argument("iou_loss: degenerate ground-truth box");
  return 1.0 - iou(pred, gt);
}

double nwd_loss(const Box& pred, const Box& gt, double constant) {
  return 1.0 - normalized_wasserstein(pred, gt, constant);
}

double focal_loss(const std::vector<double>& logits, const std::vector<double>& targets, double alpha, double gamma) {
  if (logits.size() != targets.size()) throw std::invalid_argument("focal_loss: size mismatch");
  if (logits.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool positive = targets[i] > 0.5;
    const double z = positive ? logits[i] : -logits[i];
    // log p_t = -softplus(-z), 1 - p_t = sigmoid(-z)
    const double log_pt = -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
    const double one_minus_pt = 1.0 / (1.0 + std::exp(z));
    const double at = positive ? alpha : 1.0 - alpha;
    total += -at * std::pow(one_minus_pt, gamma) * log_pt;
  }
  return total / static_cast<double>(logits.size());
}

double estimate_nwd_constant(const std::vector<Box>& boxes) {
  if (boxes.empty()) throw std::invalid_argument("estimate_nwd_constant: no boxes");
  double total = 0;
  for (const auto& b : boxes) total += std::sqrt(b.area());
  return total / static_cast<double>(boxes.size());
}

CellTargets assign_targets(const std::vector<Box>& ground_truth, Index grid_height, Index grid_width, Index stride,
                           double radius) {
  CellTargets t;
  t.grid_height = grid_height;
  t.grid_width = grid_width;
  t.stride = stride;
  const double s = static_cast<double>(stride);
  const double reach = radius * s;
  for (Index r = 0; r < grid_height; ++r)
    for (Index c = 0; c < grid_width; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) * s, cy = (static_cast<double>(r) + 0.5) * s;
      const Box* best = nullptr;
      for (const auto& g : ground_truth) {
        if (!g.valid()) continue;
        const double dx = cx - g.center_x(), dy = cy - g.center_y();
        if (dx * dx + dy * dy >= reach * reach) continue;
        if (!best || g.area() < best->area()) best = &g;
      }
      if (best) {
        t.positive_cells.push_back(r * grid_width + c);
        t.matched_boxes.push_back(*best);
      }
    }
  return t;
}

template <typename Scalar>
Var<Scalar> focal_loss(const Var<Scalar>& logits, const Tensor<Scalar>& targets, double alpha, double gamma) {
  if (logits.size() != targets.size()) throw std::invalid_argument("focal_loss: size mismatch");
  Tensor<Scalar> sign(logits.shape()), weight(logits.shape());
  for (Index i = 0; i < targets.size(); ++i) {
    const bool positive = targets[i] > Scalar(0.5);
    sign[i] = positive ? Scalar(1) : Scalar(-1);
    weight[i] = static_cast<Scalar>(positive ? alpha : 1.0 - alpha);
  }
  // With z = +-logit, p_t = sigmoid(z) and 1 - p_t = sigmoid(-z).
  const Var<Scalar> z = mul(logits, constant(sign));
  const Var<Scalar> modulating = exp(scale(log_sigmoid(neg(z)), static_cast<Scalar>(gamma)));
  const Var<Scalar> per_element = mul(mul(modulating, log_sigmoid(z)), constant(weight));
  return neg(mean(per_element));
}

namespace {

template <typename Scalar>
Var<Scalar> column(const Var<Scalar>& boxes, Index k) {
  return slice(boxes, 1, k, k + 1);
}

template <typename Scalar>
Var<Scalar> gt_column(const Tensor<Scalar>& boxes, Index k) {
  const Index n = boxes.dim(0);
  Tensor<Scalar> col({n, 1});
  for (Index i = 0; i < n; ++i) col[i] = boxes.at(i, k);
  return constant(col);
}

}  // namespace

template <typename Scalar>
Var<Scalar> iou_loss(const Var<Scalar>& pred, const Tensor<Scalar>& gt) {
  const Var<Scalar> px1 = column(pred, 0), py1 = column(pred, 1), px2 = column(pred, 2), py2 = column(pred, 3);
  const Var<Scalar> gx1 = gt_column(gt, 0), gy1 = gt_column(gt, 1), gx2 = gt_column(gt, 2), gy2 = gt_column(gt, 3);
  const Var<Scalar> iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)));
  const Var<Scalar> ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)));
  const Var<Scalar> inter = mul(iw, ih);
  const Var<Scalar> area_p = mul(sub(px2, px1), sub(py2, py1));
  const Var<Scalar> area_g = mul(sub(gx2, gx1), sub(gy2, gy1));
  const Var<Scalar> uni = sub(add(area_p, area_g), inter);
  return add_scalar(neg(mean(div(inter, uni))), Scalar(1));
}

template <typename Scalar>
Var<Scalar> nwd_loss(const Var<Scalar>& pred, const Tensor<Scalar>& gt, double constant_c) {
  const Var<Scalar> px1 = column(pred, 0), py1 = column(pred, 1), px2 = column(pred, 2), py2 = column(pred, 3);
  const Var<Scalar> gx1 = gt_column(gt, 0), gy1 = gt_column(gt, 1), gx2 = gt_column(gt, 2), gy2 = gt_column(gt, 3);
  const Scalar half(0.5);
  // Center difference and half-size difference per axis.
  const Var<Scalar> dcx = scale(sub(add(px1, px2), add(gx1, gx2)), half);
  const Var<Scalar> dcy = scale(sub(add(py1, py2), add(gy1, gy2)), half);
  const Var<Scalar> dw = scale(sub(sub(px2, px1), sub(gx2, gx1)), half);
  const Var<Scalar> dh = scale(sub(sub(py2, py1), sub(gy2, gy1)), half);
  const Var<Scalar> w2 = add(add(square(dcx), square(dcy)), add(square(dw), square(dh)));
  const Var<Scalar> nwd = exp(scale(sqrt(w2), static_cast<Scalar>(-1.0 / constant_c)));
  return add_scalar(neg(mean(nwd)), Scalar(1));
}

template <typename Scalar>
Var<Scalar> decode_cells(const Var<Scalar>& reg, const std::vector<Index>& cells, Index stride) {
  const Index w = reg.dim(2);
  const Index k = static_cast<Index>(cells.size());
  const Var<Scalar> rows = index_select(to_tokens(reg), cells);  // K x 4
  Tensor<Scalar> grid_x({k, 1}), grid_y({k, 1});
  for (Index i = 0; i < k; ++i) {
    grid_x[i] = static_cast<Scalar>(cells[i] % w) + Scalar(0.5);
    grid_y[i] = static_cast<Scalar>(cells[i] / w) + Scalar(0.5);
  }
  const Scalar s = static_cast<Scalar>(stride);
  const Var<Scalar> cx = scale(add(column(rows, 0), constant(grid_x)), s);
  const Var<Scalar> cy = scale(add(column(rows, 1), constant(grid_y)), s);
  const Var<Scalar> half_w = scale(exp(column(rows, 2)), s / 2);
  const Var<Scalar> half_h = scale(exp(column(rows, 3)), s / 2);
  return concat<Scalar>({sub(cx, half_w), sub(cy, half_h), add(cx, half_w), add(cy, half_h)}, 1);
}

template <typename Scalar>
LossResult<Scalar> total_loss(const HeadOutput<Scalar>& out, const CellTargets& targets, const LossWeights& weights) {
  const Index h = out.grid_height(), w = out.grid_width();
  if (targets.grid_height != h || targets.grid_width != w) {
    throw std::invalid_argument("total_loss: targets built for a different grid");
  }
  LossResult<Scalar> result;
  Tensor<Scalar> obj_target({h * w, 1});
  for (Index cell : targets.positive_cells) obj_target[cell] = Scalar(1);
  const Var<Scalar> obj_logits = reshape(out.obj, {h * w, 1});
  const Var<Scalar> l_obj = focal_loss(obj_logits, obj_target, weights.focal_alpha, weights.focal_gamma);
  Var<Scalar> total = scale(l_obj, static_cast<Scalar>(weights.obj));
  result.breakdown.obj = static_cast<double>(l_obj.value()[0]);

  if (targets.positive_cells.empty()) {
    result.breakdown.no_positives = true;
  } else {
    const Index k = static_cast<Index>(targets.positive_cells.size());
    Tensor<Scalar> gt({k, 4});
    for (Index i = 0; i < k; ++i) {
      const Box& b = targets.matched_boxes[i];
      gt.at(i, 0) = static_cast<Scalar>(b.x_min);
      gt.at(i, 1) = static_cast<Scalar>(b.y_min);
      gt.at(i, 2) = static_cast<Scalar>(b.x_max);
      gt.at(i, 3) = static_cast<Scalar>(b.y_max);
    }
    const Var<Scalar> pred = decode_cells(out.reg, targets.positive_cells, out.stride);
    const Var<Scalar> l_iou = iou_loss(pred, gt);
    const Var<Scalar> l_nwd = nwd_loss(pred, gt, weights.nwd_constant);
    const Var<Scalar> l_reg =
        add(scale(l_iou, static_cast<Scalar>(weights.iou)), scale(l_nwd, static_cast<Scalar>(weights.nwd)));
    const Var<Scalar> cls_logits = index_select(reshape(out.cls, {h * w, 1}), targets.positive_cells);
    const Var<Scalar> l_cls =
        focal_loss(cls_logits, Tensor<Scalar>({k, 1}, Scalar(1)), weights.focal_alpha, weights.focal_gamma);
    total = add(total, add(scale(l_reg, static_cast<Scalar>(weights.reg)), scale(l_cls, static_cast<Scalar>(weights.cls))));
    result.breakdown.iou = static_cast<double>(l_iou.value()[0]);
    result.breakdown.nwd = static_cast<double>(l_nwd.value()[0]);
    result.breakdown.reg = static_cast<double>(l_reg.value()[0]);
    result.breakdown.cls = static_cast<double>(l_cls.value()[0]);
  }
  result.total = total;
  result.breakdown.total = static_cast<double>(total.value()[0]);
  return result;
}

#define BELTCRACK_INSTANTIATE_LOSS(S)                                                   \
  template Var<S> focal_loss(const Var<S>&, const Tensor<S>&, double, double);          \
  template Var<S> iou_loss(const Var<S>&, const Tensor<S>&);                            \
  template Var<S> nwd_loss(const Var<S>&, const Tensor<S>&, double);                    \
  template Var<S> decode_cells(const Var<S>&, const std::vector<Index>&, Index);        \
  template LossResult<S> total_loss(const HeadOutput<S>&, const CellTargets&, const LossWeights&);

BELTCRACK_INSTANTIATE_LOSS(float)
BELTCRACK_INSTANTIATE_LOSS(double)

}  // namespace beltcrack
