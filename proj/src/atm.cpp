#include "beltcrack/atm.hpp"

namespace beltcrack {

template <typename Scalar>
Var<Scalar> affinity(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape() || a.shape().size() != 3) {
    throw std::invalid_argument("affinity: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  return sum_axis(mul(a, b), 0);
}

template <typename Scalar>
std::vector<Var<Scalar>> difference_maps(const Var<Scalar>& self_affinity, const std::vector<Var<Scalar>>& cross) {
  std::vector<Var<Scalar>> out{self_affinity};
  for (const auto& c : cross) out.push_back(sub(c, self_affinity));
  return out;
}

template <typename Scalar>
Var<Scalar> aggregate(const FeatureStack<Scalar>& stack) {
  stack.validate();
  const Var<Scalar>& key = stack.keyframe();
  const Var<Scalar> self_affinity = affinity(key, key);
  std::vector<Var<Scalar>> others(stack.frames.begin(), stack.frames.end() - 1);
  std::vector<Var<Scalar>> cross;
  for (const auto& f : others) cross.push_back(affinity(key, f));
  const auto diffs = difference_maps(self_affinity, cross);
  Var<Scalar> total = mul(diffs[0], key);
  for (std::size_t j = 0; j < others.size(); ++j) total = add(total, mul(diffs[j + 1], others[j]));
  return total;
}

template <typename Scalar>
Hourglass<Scalar>::Hourglass(Index channels, Index heads, Rng& rng)
    : down1(channels, channels, 3, rng, 2),
      down2(channels, channels, 3, rng, 2),
      up1(channels, channels, 3, rng),
      attention_norm(channels),
      attention(channels, heads, rng),
      out_conv(channels, channels, 3, rng) {}

template <typename Scalar>
Var<Scalar> Hourglass<Scalar>::operator()(const Var<Scalar>& x) const {
  const Index h = x.dim(1), w = x.dim(2);
  const Index pad_h = (4 - h % 4) % 4, pad_w = (4 - w % 4) % 4;
  const Var<Scalar> padded = pad2d(x, {0, pad_h, 0, pad_w}, PadMode::kReplicate);
  const Var<Scalar> d1 = down1(padded);
  const Var<Scalar> d2 = down2(d1);
  const Var<Scalar> tokens = to_tokens(d2);
  const Var<Scalar> bottleneck = add(d2, from_tokens(attention(attention_norm(tokens)), d2.dim(1), d2.dim(2)));
  const Var<Scalar> u1 = up1(add(upsample_nearest(bottleneck, 2), d1));
  const Var<Scalar> u2 = out_conv(upsample_nearest(u1, 2));
  return add(x, crop2d(u2, 0, 0, h, w));
}

template <typename Scalar>
void Hourglass<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  down1.collect(out, prefix + ".down1");
  down2.collect(out, prefix + ".down2");
  up1.collect(out, prefix + ".up1");
  attention_norm.collect(out, prefix + ".attention_norm");
  attention.collect(out, prefix + ".attention");
  out_conv.collect(out, prefix + ".out");
}

#define BELTCRACK_INSTANTIATE_ATM(S)                                                             \
  template Var<S> affinity(const Var<S>&, const Var<S>&);                                       \
  template std::vector<Var<S>> difference_maps(const Var<S>&, const std::vector<Var<S>>&);      \
  template Var<S> aggregate(const FeatureStack<S>&);                                            \
  template struct Hourglass<S>;

BELTCRACK_INSTANTIATE_ATM(float)
BELTCRACK_INSTANTIATE_ATM(double)

}  // namespace beltcrack
