#pragma once

#include "beltcrack/features.hpp"
#include "beltcrack/layers.hpp"

#include <vector>

namespace beltcrack {

// Per-position dot product over channels: two c x h x w maps -> 1 x h x w.
template <typename Scalar>
Var<Scalar> affinity(const Var<Scalar>& a, const Var<Scalar>& b);

// D_1 = C_11 and D_i = C_1i - C_11 for the remaining frames, so that
// D_i = (F_i - F_1) . F_1 per position. Output keeps the input order with
// D_1 first.
template <typename Scalar>
std::vector<Var<Scalar>> difference_maps(const Var<Scalar>& self_affinity, const std::vector<Var<Scalar>>& cross);

// sum_j D_j * F_j with D_j broadcast over channels. The keyframe (frame 1 of
// the aggregation) is the last slice of the stack.
template <typename Scalar>
Var<Scalar> aggregate(const FeatureStack<Scalar>& stack);

// Encoder-decoder over the aggregated map: two stride-2 stages, multi-head
// self-attention at the bottleneck, nearest upsampling with additive skips,
// and an outer identity skip. Spatial sizes not divisible by 4 are padded
// and cropped back.
template <typename Scalar>
struct Hourglass {
  ConvNormAct<Scalar> down1, down2, up1;
  LayerNorm<Scalar> attention_norm;
  MultiHeadAttention<Scalar> attention;
  Conv2d<Scalar> out_conv;

  Hourglass() = default;
  Hourglass(Index channels, Index heads, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
class TemporalModule {
 public:
  TemporalModule() = default;
  TemporalModule(Index channels, Index heads, Rng& rng) : hourglass(channels, heads, rng) {}

  Var<Scalar> global_context(const Var<Scalar>& aggregated) const { return hourglass(aggregated); }
  // F_T for one window.
  Var<Scalar> operator()(const FeatureStack<Scalar>& stack) const { return hourglass(aggregate(stack)); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    hourglass.collect(out, prefix + ".hourglass");
  }

  Hourglass<Scalar> hourglass;
};

}  // namespace beltcrack
