#pragma once

#include "beltcrack/features.hpp"
#include "beltcrack/layers.hpp"

#include <string>
#include <vector>

namespace beltcrack {

// Orthonormal two-channel filter bank with periodic extension.
struct WaveletBasis {
  std::string name;
  std::vector<double> lowpass;
  std::vector<double> highpass;
};

// Throws std::invalid_argument listing the supported names for unknown ones.
WaveletBasis wavelet_basis(const std::string& name);
std::vector<std::string> supported_wavelets();

// Sub-bands of one decomposition level, each c x h/2 x w/2. LH is low-pass
// along the width and high-pass along the height (horizontal structure), HL
// the converse, HH high-pass along both. `height`/`width` is the size before
// any reflect padding so iwt can crop back.
template <typename Scalar>
struct SubBands {
  Var<Scalar> ll, lh, hl, hh;
  Index height = 0;
  Index width = 0;
};

// Raw single-level transforms on c x h x w (h, w even) <-> 4 x c x h/2 x w/2.
template <typename Scalar>
Tensor<Scalar> analysis(const Tensor<Scalar>& x, const WaveletBasis& basis);
template <typename Scalar>
Tensor<Scalar> synthesis(const Tensor<Scalar>& bands, const WaveletBasis& basis);

// Differentiable stacked transforms; each is the other's adjoint.
template <typename Scalar>
Var<Scalar> wt_stacked(const Var<Scalar>& x, const WaveletBasis& basis);
template <typename Scalar>
Var<Scalar> iwt_stacked(const Var<Scalar>& bands, const WaveletBasis& basis);

// Single-level 2D DWT. Odd h or w is reflect-padded by one row/column first.
template <typename Scalar>
SubBands<Scalar> wt(const Var<Scalar>& x, const WaveletBasis& basis);

// Inverse of wt, cropping any padding recorded in `bands`.
template <typename Scalar>
Var<Scalar> iwt(const SubBands<Scalar>& bands, const WaveletBasis& basis);

template <typename Scalar>
Var<Scalar> iwt(const Var<Scalar>& ll, const Var<Scalar>& lh, const Var<Scalar>& hl, const Var<Scalar>& hh,
                const WaveletBasis& basis);

// Cascade decomposition of the LL band to `levels` deep.
template <typename Scalar>
std::vector<SubBands<Scalar>> wavelet_pyramid(const Var<Scalar>& x, int levels, const WaveletBasis& basis);

// Depthwise k x k kernels per level. Each level's weight is 4c x 1 x k x k,
// ordered [LL channels, LH channels, HL channels, HH channels].
template <typename Scalar>
struct SubbandKernels {
  std::vector<Var<Scalar>> levels;

  SubbandKernels() = default;
  // Delta kernels plus uniform noise of the given amplitude.
  SubbandKernels(Index channels, int levels, Index kernel, Scalar noise, Rng& rng);

  static SubbandKernels delta(Index channels, int levels, Index kernel);
  static SubbandKernels zeros(Index channels, int levels, Index kernel);

  int depth() const { return static_cast<int>(levels.size()); }
  Index kernel() const { return levels.front().dim(2); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;
};

// Per-level sub-band convolution followed by bottom-up reconstruction. Level
// j produces Y^(j) = DWConv(W^(j), WT(X_LL^(j-1))); the merge runs from the
// deepest level up, Z^(J) = IWT(Y^(J)) and, above it,
// Z^(j) = IWT((Y_LL^(j) + Z^(j+1)) / 2, Y_H^(j)). Both LL estimates at level
// j are averaged so delta kernels reproduce the input. Output matches the
// input's spatial size (reflect-pad to a multiple of 2^J, crop after).
template <typename Scalar>
Var<Scalar> cascade_forward(const Var<Scalar>& x, const SubbandKernels<Scalar>& kernels, const WaveletBasis& basis);

template <typename Scalar>
class WaveletFrequencyModule {
 public:
  WaveletFrequencyModule() = default;
  WaveletFrequencyModule(Index channels, int levels, Index kernel, const std::string& basis, Rng& rng);

  // Shared-kernel cascade over every slice, summed, then a 1x1 merge conv.
  Var<Scalar> operator()(const FeatureStack<Scalar>& stack) const;
  // The summed cascade output before the merge conv.
  Var<Scalar> slice_sum(const FeatureStack<Scalar>& stack) const;

  SubbandKernels<Scalar>& kernels() { return kernels_; }
  const SubbandKernels<Scalar>& kernels() const { return kernels_; }
  Conv2d<Scalar>& merge() { return merge_; }
  const WaveletBasis& basis() const { return basis_; }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;

 private:
  WaveletBasis basis_;
  SubbandKernels<Scalar> kernels_;
  Conv2d<Scalar> merge_;
};

}  // namespace beltcrack
