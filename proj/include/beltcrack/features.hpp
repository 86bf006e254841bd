#pragma once

#include "beltcrack/autograd.hpp"

#include <stdexcept>
#include <vector>

namespace beltcrack {

// Per-frame c x h x w feature maps of one window, oldest first; the last
// slice belongs to the keyframe.
template <typename Scalar>
struct FeatureStack {
  std::vector<Var<Scalar>> frames;
  Index stride = 1;

  Index length() const { return static_cast<Index>(frames.size()); }
  Index channels() const { return frames.front().dim(0); }
  Index height() const { return frames.front().dim(1); }
  Index width() const { return frames.front().dim(2); }
  const Var<Scalar>& keyframe() const { return frames.back(); }

  void validate() const {
    if (frames.empty()) throw std::invalid_argument("FeatureStack is empty");
    for (const auto& f : frames) {
      if (f.shape() != frames.front().shape() || f.shape().size() != 3) {
        throw std::invalid_argument("FeatureStack slices must share one c x h x w shape");
      }
    }
  }

  // Dense T x c x h x w copy of the current values.
  Tensor<Scalar> to_tensor() const {
    validate();
    const Index slice = frames.front().size();
    Tensor<Scalar> out({length(), channels(), height(), width()});
    for (Index t = 0; t < length(); ++t) out.values().segment(t * slice, slice) = frames[t].value().values();
    return out;
  }
};

}  // namespace beltcrack
