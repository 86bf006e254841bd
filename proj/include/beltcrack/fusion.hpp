#pragma once

#include "beltcrack/layers.hpp"

#include <utility>
#include <vector>

namespace beltcrack {

struct FusionConfig {
  Index csab_blocks = 2;      // n per residual compensation unit
  Index window = 4;           // windowed-attention window size
  Index heads = 4;
  Index channel_reduction = 4;  // CAB bottleneck ratio
};

// Global-average-pool -> 1x1 bottleneck -> logistic gate per channel.
template <typename Scalar>
struct ChannelAttention {
  Conv2d<Scalar> squeeze, excite;

  ChannelAttention() = default;
  ChannelAttention(Index channels, Index reduction, Rng& rng);
  Var<Scalar> gate(const Var<Scalar>& x) const;  // c x 1 x 1, in (0,1)
  Var<Scalar> operator()(const Var<Scalar>& x) const { return mul(x, gate(x)); }
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

// Channelwise mean and max -> 7x7 conv -> logistic gate per position.
template <typename Scalar>
struct SpatialAttention {
  Conv2d<Scalar> conv;

  SpatialAttention() = default;
  explicit SpatialAttention(Rng& rng) : conv(2, 1, 7, rng) {}
  Var<Scalar> gate(const Var<Scalar>& x) const;  // 1 x h x w, in (0,1)
  Var<Scalar> operator()(const Var<Scalar>& x) const { return mul(x, gate(x)); }
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }
};

// CSAB(X) = SAB(CAB(Conv(X))) + X.
template <typename Scalar>
struct CsaBlock {
  Conv2d<Scalar> conv;
  ChannelAttention<Scalar> cab;
  SpatialAttention<Scalar> sab;

  CsaBlock() = default;
  CsaBlock(Index channels, Index reduction, Rng& rng) : conv(channels, channels, 3, rng), cab(channels, reduction, rng), sab(rng) {}
  Var<Scalar> inner(const Var<Scalar>& x) const { return sab(cab(conv(x))); }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return add(inner(x), x); }
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

// Concat -> 1x1 conv (norm, ReLU) back to c channels -> n CSAB blocks.
template <typename Scalar>
struct ResidualCompensationUnit {
  ConvNormAct<Scalar> reduce;
  std::vector<CsaBlock<Scalar>> blocks;

  ResidualCompensationUnit() = default;
  ResidualCompensationUnit(Index channels, Index n_blocks, Index reduction, Rng& rng);
  Var<Scalar> reduced(const Var<Scalar>& a, const Var<Scalar>& b) const;
  Var<Scalar> operator()(const Var<Scalar>& a, const Var<Scalar>& b) const;
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

// Non-overlapping windowed self-attention block: X + MSA(LN(X)) inside
// each window. Sizes not divisible by the window are zero-padded and cropped.
template <typename Scalar>
struct WindowAttentionBlock {
  LayerNorm<Scalar> norm;
  MultiHeadAttention<Scalar> attention;
  Index window = 4;

  WindowAttentionBlock() = default;
  WindowAttentionBlock(Index channels, Index window, Index heads, Rng& rng)
      : norm(channels), attention(channels, heads, rng), window(window) {}
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

template <typename Scalar>
struct FusedFeature {
  Var<Scalar> spatial_temporal;          // F_st
  Var<Scalar> local_frequency_temporal;  // F_flt
  Var<Scalar> global_frequency_temporal; // F_fgt
  Var<Scalar> local_fst;                 // F_flst
  Var<Scalar> frequency_temporal;        // F_ft
  Var<Scalar> output;                    // F_fst
};

template <typename Scalar>
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(Index channels, const FusionConfig& config, Rng& rng);

  Var<Scalar> fuse_st(const Var<Scalar>& spatial, const Var<Scalar>& temporal) const;
  std::pair<Var<Scalar>, Var<Scalar>> fuse_ft(const Var<Scalar>& frequency, const Var<Scalar>& temporal) const;
  // F_flst = RCU1(F_flt, F_st); F_ft = RCU2(F_fgt, F_flt); F_fst = RCU3(F_flst, F_ft).
  FusedFeature<Scalar> fuse_all(const Var<Scalar>& spatial, const Var<Scalar>& temporal,
                                const Var<Scalar>& frequency) const;

  ConvNormAct<Scalar> st_conv, local_ft_conv, global_ft_conv;
  WindowAttentionBlock<Scalar> window_block;
  ResidualCompensationUnit<Scalar> rcu1, rcu2, rcu3;

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

}  // namespace beltcrack
