#include "beltcrack/backbone.hpp"

namespace beltcrack {

template <typename Scalar>
CspBlock<Scalar>::CspBlock(Index width, Rng& rng)
    : split_main(width, width / 2, 1, rng),
      split_bypass(width, width - width / 2, 1, rng),
      bottleneck(width / 2, width / 2, 3, rng),
      merge(width, width, 1, rng) {}

template <typename Scalar>
Var<Scalar> CspBlock<Scalar>::operator()(const Var<Scalar>& x) const {
  const Var<Scalar> main = split_main(x);
  const Var<Scalar> refined = add(main, bottleneck(main));
  return merge(concat<Scalar>({refined, split_bypass(x)}, 0));
}

template <typename Scalar>
void CspBlock<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  split_main.collect(out, prefix + ".split_main");
  split_bypass.collect(out, prefix + ".split_bypass");
  bottleneck.collect(out, prefix + ".bottleneck");
  merge.collect(out, prefix + ".merge");
}

template <typename Scalar>
Backbone<Scalar>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  if (config.stride < 2 || (config.stride & (config.stride - 1))) {
    throw std::invalid_argument("backbone stride must be a power of two >= 2");
  }
  if (config.channels < 2) throw std::invalid_argument("backbone channels must be >= 2");
  int stages = 0;
  for (Index s = config.stride; s > 1; s /= 2) ++stages;
  Index in = 3;
  for (int i = 0; i < stages; ++i) {
    const Index width = std::max(config.min_width, config.channels >> (stages - 1 - i));
    widths_.push_back(width);
    downsample_.emplace_back(in, width, 3, rng, 2);
    if (i > 0) blocks_.emplace_back(width, rng);
    in = width;
  }
  if (in != config.channels) {
    // min_width above channels: project down to the requested width.
    downsample_.emplace_back(in, config.channels, 1, rng, 1);
    widths_.push_back(config.channels);
  }
}

template <typename Scalar>
Var<Scalar> Backbone<Scalar>::frame_features(const Var<Scalar>& frame) const {
  if (frame.shape().size() != 3 || frame.dim(0) != 3) {
    throw std::invalid_argument("backbone expects 3 x H x W frames, got " + shape_string(frame.shape()));
  }
  static const Tensor<Scalar> mean({3, 1, 1}, {Scalar(0.485), Scalar(0.456), Scalar(0.406)});
  static const Tensor<Scalar> inv_std({3, 1, 1}, {Scalar(1 / 0.229), Scalar(1 / 0.224), Scalar(1 / 0.225)});
  Var<Scalar> x = mul(sub(frame, constant(mean)), constant(inv_std));
  for (std::size_t i = 0; i < downsample_.size(); ++i) {
    x = downsample_[i](x);
    if (i >= 1 && i - 1 < blocks_.size()) x = blocks_[i - 1](x);
  }
  return x;
}

template <typename Scalar>
FeatureStack<Scalar> Backbone<Scalar>::extract(const std::vector<Var<Scalar>>& frames) const {
  if (frames.empty()) throw std::invalid_argument("extract: no frames");
  for (const auto& f : frames) {
    if (f.shape().size() != 3 || f.shape() != frames.front().shape()) {
      throw std::invalid_argument("extract: frames must share one 3 x H x W shape");
    }
    if (f.dim(1) % config_.stride || f.dim(2) % config_.stride) {
      throw std::invalid_argument("extract: frame " + std::to_string(f.dim(1)) + "x" + std::to_string(f.dim(2)) +
                                  " not divisible by stride " + std::to_string(config_.stride));
    }
  }
  FeatureStack<Scalar> stack;
  stack.stride = config_.stride;
  for (const auto& f : frames) stack.frames.push_back(frame_features(f));
  return stack;
}

template <typename Scalar>
void Backbone<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < downsample_.size(); ++i) downsample_[i].collect(out, prefix + ".down" + std::to_string(i));
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".csp" + std::to_string(i + 1));
}

template struct CspBlock<float>;
template struct CspBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace beltcrack
