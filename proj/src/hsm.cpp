#include "beltcrack/hsm.hpp"

#include <cmath>

namespace beltcrack {

template <typename Scalar>
SpatialModule<Scalar>::SpatialModule(Index channels, Index frames, Rng& rng)
    : channels_(channels), frames_(frames), key_channels_(std::max<Index>(1, channels / 2)),
      value_channels_(std::max<Index>(1, channels / 2)) {
  if (frames < 1) throw std::invalid_argument("SpatialModule needs T >= 1");
  if (frames > 1) gate_conv = Conv2d<Scalar>((frames - 1) * channels, channels, 3, rng);
  local_conv = Conv2d<Scalar>(2 * channels, channels, 3, rng);
  const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(channels));
  query_proj = parameter(uniform_tensor<Scalar>({channels, key_channels_}, bound, rng));
  key_proj = parameter(uniform_tensor<Scalar>({channels, key_channels_}, bound, rng));
  value_proj = parameter(uniform_tensor<Scalar>({channels, channels}, bound, rng));
  query_key_conv = Conv2d<Scalar>(channels, key_channels_, 1, rng);
  query_value_conv = Conv2d<Scalar>(channels, value_channels_, 1, rng);
  memory_key_conv = Conv2d<Scalar>(channels, key_channels_, 1, rng);
  memory_value_conv = Conv2d<Scalar>(channels, value_channels_, 1, rng);
  read_conv = Conv2d<Scalar>(2 * value_channels_, channels, 1, rng);
}

template <typename Scalar>
Var<Scalar> SpatialModule<Scalar>::gate_preactivation(const FeatureStack<Scalar>& stack) const {
  stack.validate();
  if (stack.length() != frames_) {
    throw std::invalid_argument("SpatialModule built for T=" + std::to_string(frames_) + ", got " +
                                std::to_string(stack.length()));
  }
  if (frames_ == 1) return constant(Tensor<Scalar>(stack.keyframe().shape(), Scalar(0)));
  std::vector<Var<Scalar>> refs(stack.frames.begin(), stack.frames.end() - 1);
  return gate_conv(refs.size() == 1 ? refs[0] : concat(refs, 0));
}

template <typename Scalar>
GatedLocalFeature<Scalar> SpatialModule<Scalar>::gate_reference_frames(const FeatureStack<Scalar>& stack) const {
  const Var<Scalar>& key = stack.keyframe();
  GatedLocalFeature<Scalar> out;
  out.gated_keyframe = mul(sigmoid(gate_preactivation(stack)), key);
  out.local = local_conv(concat<Scalar>({out.gated_keyframe, key}, 0));
  return out;
}

template <typename Scalar>
Var<Scalar> SpatialModule<Scalar>::non_local_attention(const Var<Scalar>& local) const {
  const Index h = local.dim(1), w = local.dim(2);
  const Var<Scalar> tokens = to_tokens(local);
  const Var<Scalar> attended = attend(matmul(tokens, query_proj), matmul(tokens, key_proj), matmul(tokens, value_proj));
  return add(from_tokens(attended, h, w), local);
}

template <typename Scalar>
MemoryBank<Scalar> SpatialModule<Scalar>::build_memory(const Var<Scalar>& attended, const Var<Scalar>& keyframe) const {
  if (attended.shape() != keyframe.shape()) throw std::invalid_argument("memory_read: shape mismatch");
  return {query_key_conv(keyframe), query_value_conv(keyframe), memory_key_conv(attended), memory_value_conv(attended)};
}

template <typename Scalar>
Var<Scalar> SpatialModule<Scalar>::memory_read(const MemoryBank<Scalar>& bank) const {
  const Index h = bank.query_key.dim(1), w = bank.query_key.dim(2);
  const Var<Scalar> read = attend(to_tokens(bank.query_key), to_tokens(bank.memory_key), to_tokens(bank.memory_value));
  return read_conv(concat<Scalar>({from_tokens(read, h, w), bank.query_value}, 0));
}

template <typename Scalar>
Var<Scalar> SpatialModule<Scalar>::memory_read(const Var<Scalar>& attended, const Var<Scalar>& keyframe) const {
  return memory_read(build_memory(attended, keyframe));
}

template <typename Scalar>
Var<Scalar> SpatialModule<Scalar>::operator()(const FeatureStack<Scalar>& stack) const {
  const auto gated = gate_reference_frames(stack);
  return memory_read(non_local_attention(gated.local), stack.keyframe());
}

template <typename Scalar>
void SpatialModule<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  if (gate_conv.weight.defined()) gate_conv.collect(out, prefix + ".gate");
  local_conv.collect(out, prefix + ".local");
  out.emplace_back(prefix + ".nonlocal.wq", query_proj);
  out.emplace_back(prefix + ".nonlocal.wk", key_proj);
  out.emplace_back(prefix + ".nonlocal.wv", value_proj);
  query_key_conv.collect(out, prefix + ".memory.query_key");
  query_value_conv.collect(out, prefix + ".memory.query_value");
  memory_key_conv.collect(out, prefix + ".memory.memory_key");
  memory_value_conv.collect(out, prefix + ".memory.memory_value");
  read_conv.collect(out, prefix + ".memory.read");
}

template class SpatialModule<float>;
template class SpatialModule<double>;

}  // namespace beltcrack
