#include "beltcrack/fusion.hpp"

namespace beltcrack {

template <typename Scalar>
ChannelAttention<Scalar>::ChannelAttention(Index channels, Index reduction, Rng& rng)
    : squeeze(channels, std::max<Index>(1, channels / reduction), 1, rng),
      excite(std::max<Index>(1, channels / reduction), channels, 1, rng) {}

template <typename Scalar>
Var<Scalar> ChannelAttention<Scalar>::gate(const Var<Scalar>& x) const {
  const Var<Scalar> pooled = mean_axis(mean_axis(x, 2), 1);
  return sigmoid(excite(relu(squeeze(pooled))));
}

template <typename Scalar>
void ChannelAttention<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  squeeze.collect(out, prefix + ".squeeze");
  excite.collect(out, prefix + ".excite");
}

template <typename Scalar>
Var<Scalar> SpatialAttention<Scalar>::gate(const Var<Scalar>& x) const {
  return sigmoid(conv(concat<Scalar>({mean_axis(x, 0), max_axis(x, 0)}, 0)));
}

template <typename Scalar>
void CsaBlock<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  cab.collect(out, prefix + ".cab");
  sab.collect(out, prefix + ".sab");
}

template <typename Scalar>
ResidualCompensationUnit<Scalar>::ResidualCompensationUnit(Index channels, Index n_blocks, Index reduction, Rng& rng)
    : reduce(2 * channels, channels, 1, rng, 1, Activation::kRelu, true) {
  if (n_blocks < 1) throw std::invalid_argument("residual compensation unit needs n >= 1 CSAB blocks");
  for (Index i = 0; i < n_blocks; ++i) blocks.emplace_back(channels, reduction, rng);
}

template <typename Scalar>
Var<Scalar> ResidualCompensationUnit<Scalar>::reduced(const Var<Scalar>& a, const Var<Scalar>& b) const {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("rcu: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  return reduce(concat<Scalar>({a, b}, 0));
}

template <typename Scalar>
Var<Scalar> ResidualCompensationUnit<Scalar>::operator()(const Var<Scalar>& a, const Var<Scalar>& b) const {
  Var<Scalar> x = reduced(a, b);
  for (const auto& block : blocks) x = block(x);
  return x;
}

template <typename Scalar>
void ResidualCompensationUnit<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  reduce.collect(out, prefix + ".reduce");
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".csab" + std::to_string(i + 1));
}

template <typename Scalar>
Var<Scalar> WindowAttentionBlock<Scalar>::operator()(const Var<Scalar>& x) const {
  const Index h = x.dim(1), w = x.dim(2);
  const Index pad_h = (window - h % window) % window, pad_w = (window - w % window) % window;
  const Var<Scalar> padded = pad2d(x, {0, pad_h, 0, pad_w}, PadMode::kZero);
  const Index rows = padded.dim(1) / window, cols = padded.dim(2) / window;
  std::vector<Var<Scalar>> row_parts;
  for (Index r = 0; r < rows; ++r) {
    std::vector<Var<Scalar>> parts;
    for (Index c = 0; c < cols; ++c) {
      const Var<Scalar> tokens = to_tokens(crop2d(padded, r * window, c * window, window, window));
      parts.push_back(from_tokens(add(tokens, attention(norm(tokens))), window, window));
    }
    row_parts.push_back(parts.size() == 1 ? parts[0] : concat(parts, 2));
  }
  const Var<Scalar> merged = row_parts.size() == 1 ? row_parts[0] : concat(row_parts, 1);
  return crop2d(merged, 0, 0, h, w);
}

template <typename Scalar>
void WindowAttentionBlock<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  norm.collect(out, prefix + ".norm");
  attention.collect(out, prefix + ".attention");
}

template <typename Scalar>
FusionModule<Scalar>::FusionModule(Index channels, const FusionConfig& config, Rng& rng)
    : st_conv(2 * channels, channels, 3, rng, 1, Activation::kSilu, true),
      local_ft_conv(2 * channels, channels, 3, rng, 1, Activation::kSilu, true),
      global_ft_conv(2 * channels, channels, 3, rng, 1, Activation::kSilu, true),
      window_block(2 * channels, config.window, config.heads, rng),
      rcu1(channels, config.csab_blocks, config.channel_reduction, rng),
      rcu2(channels, config.csab_blocks, config.channel_reduction, rng),
      rcu3(channels, config.csab_blocks, config.channel_reduction, rng) {}

template <typename Scalar>
Var<Scalar> FusionModule<Scalar>::fuse_st(const Var<Scalar>& spatial, const Var<Scalar>& temporal) const {
  if (spatial.shape() != temporal.shape()) throw std::invalid_argument("fuse_st: shape mismatch");
  return st_conv(concat<Scalar>({spatial, temporal}, 0));
}

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> FusionModule<Scalar>::fuse_ft(const Var<Scalar>& frequency,
                                                                  const Var<Scalar>& temporal) const {
  if (frequency.shape() != temporal.shape()) throw std::invalid_argument("fuse_ft: shape mismatch");
  const Var<Scalar> joint = concat<Scalar>({frequency, temporal}, 0);
  return {local_ft_conv(joint), global_ft_conv(window_block(joint))};
}

template <typename Scalar>
FusedFeature<Scalar> FusionModule<Scalar>::fuse_all(const Var<Scalar>& spatial, const Var<Scalar>& temporal,
                                                    const Var<Scalar>& frequency) const {
  FusedFeature<Scalar> f;
  f.spatial_temporal = fuse_st(spatial, temporal);
  std::tie(f.local_frequency_temporal, f.global_frequency_temporal) = fuse_ft(frequency, temporal);
  f.local_fst = rcu1(f.local_frequency_temporal, f.spatial_temporal);
  f.frequency_temporal = rcu2(f.global_frequency_temporal, f.local_frequency_temporal);
  f.output = rcu3(f.local_fst, f.frequency_temporal);
  return f;
}

template <typename Scalar>
void FusionModule<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  st_conv.collect(out, prefix + ".st");
  local_ft_conv.collect(out, prefix + ".ft_local");
  global_ft_conv.collect(out, prefix + ".ft_global");
  window_block.collect(out, prefix + ".window");
  rcu1.collect(out, prefix + ".rcu1");
  rcu2.collect(out, prefix + ".rcu2");
  rcu3.collect(out, prefix + ".rcu3");
}

#define BELTCRACK_INSTANTIATE_FUSION(S)        \
  template struct ChannelAttention<S>;         \
  template struct SpatialAttention<S>;         \
  template struct CsaBlock<S>;                 \
  template struct ResidualCompensationUnit<S>; \
  template struct WindowAttentionBlock<S>;     \
  template class FusionModule<S>;

BELTCRACK_INSTANTIATE_FUSION(float)
BELTCRACK_INSTANTIATE_FUSION(double)

}  // namespace beltcrack
