#pragma once

#include "beltcrack/autograd.hpp"

#include <vector>

namespace beltcrack {

// Differentiable operations over Var. Binary elementwise ops broadcast with
// numpy rules (trailing-aligned, size-1 dims stretch).

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> minimum(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> maximum(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar offset);
template <typename Scalar> Var<Scalar> neg(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> exp(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> log(const Var<Scalar>& x);
// Gradient at 0 is taken as 0 rather than infinity.
template <typename Scalar> Var<Scalar> sqrt(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> square(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> silu(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x);

// log(sigmoid(x)) without overflow for large |x|.
template <typename Scalar> Var<Scalar> log_sigmoid(const Var<Scalar>& x);

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& x);
// Reductions keep the reduced axis with size 1.
template <typename Scalar> Var<Scalar> sum_axis(const Var<Scalar>& x, int axis);
template <typename Scalar> Var<Scalar> mean_axis(const Var<Scalar>& x, int axis);
template <typename Scalar> Var<Scalar> max_axis(const Var<Scalar>& x, int axis);

template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);
template <typename Scalar> Var<Scalar> transpose(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis);
template <typename Scalar> Var<Scalar> slice(const Var<Scalar>& x, int axis, Index begin, Index end);
template <typename Scalar> Var<Scalar> index_select(const Var<Scalar>& x, const std::vector<Index>& rows);

enum class PadMode { kZero, kReflect, kReplicate };
struct Padding2d {
  Index top = 0, bottom = 0, left = 0, right = 0;
};
// Pads/crops act on the last two axes.
template <typename Scalar> Var<Scalar> pad2d(const Var<Scalar>& x, Padding2d pad, PadMode mode);
template <typename Scalar> Var<Scalar> crop2d(const Var<Scalar>& x, Index top, Index left, Index height, Index width);
template <typename Scalar> Var<Scalar> upsample_nearest(const Var<Scalar>& x, Index factor);

template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> softmax_rows(const Var<Scalar>& x);

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};
// x: C x H x W, weight: O x (C/groups) x k x k, bias: O (may be undefined).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Conv2dOptions options);

// x: C x H x W normalized over (C/groups) x H x W per group; gamma/beta: C.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Index groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5));

// x: N x D normalized per row; gamma/beta: D.
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                            Scalar eps = Scalar(1e-5));

// c x h x w <-> (h*w) x c token layout used by every attention block.
template <typename Scalar> Var<Scalar> to_tokens(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> from_tokens(const Var<Scalar>& tokens, Index height, Index width);

template <typename Scalar> Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar> Var<Scalar> operator/(const Var<Scalar>& a, const Var<Scalar>& b) { return div(a, b); }

}  // namespace beltcrack
