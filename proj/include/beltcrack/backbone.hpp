#pragma once

#include "beltcrack/features.hpp"
#include "beltcrack/layers.hpp"

#include <vector>

namespace beltcrack {

struct BackboneConfig {
  Index channels = 32;   // c of the emitted FeatureStack
  Index stride = 16;     // power of two; one stride-2 stage per factor of 2
  Index min_width = 8;   // narrowest stage width
};

// Cross-stage-partial block: half the channels pass through a residual
// bottleneck, the other half bypass it, a 1x1 conv merges both.
template <typename Scalar>
struct CspBlock {
  ConvNormAct<Scalar> split_main, split_bypass, bottleneck, merge;

  CspBlock() = default;
  CspBlock(Index width, Rng& rng);
  Var<Scalar> operator()(const Var<Scalar>& x) const;
  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

// Shared-weight per-frame extractor: a strided conv stem followed by
// stride-2 stages with CSP blocks. Frames are normalized with per-channel
// mean/std before the stem.
template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& rng);

  // One 3 x H x W frame -> c x H/stride x W/stride.
  Var<Scalar> frame_features(const Var<Scalar>& frame) const;

  // Throws before any computation if H or W is not divisible by the stride.
  FeatureStack<Scalar> extract(const std::vector<Var<Scalar>>& frames) const;

  Index stride() const { return config_.stride; }
  Index channels() const { return config_.channels; }
  const std::vector<Index>& widths() const { return widths_; }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;

 private:
  BackboneConfig config_;
  std::vector<Index> widths_;
  std::vector<ConvNormAct<Scalar>> downsample_;
  std::vector<CspBlock<Scalar>> blocks_;  // one per stage after the stem
};

}  // namespace beltcrack
