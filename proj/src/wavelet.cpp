#include "beltcrack/wavelet.hpp"

#include <cmath>
#include <sstream>

namespace beltcrack {

std::vector<std::string> supported_wavelets() { return {"haar", "db2"}; }

WaveletBasis wavelet_basis(const std::string& name) {
  if (name == "haar") {
    const double r = 1.0 / std::sqrt(2.0);
    return {"haar", {r, r}, {r, -r}};
  }
  if (name == "db2") {
    const double s3 = std::sqrt(3.0), d = 4.0 * std::sqrt(2.0);
    std::vector<double> lo{(1 + s3) / d, (3 + s3) / d, (3 - s3) / d, (1 - s3) / d};
    std::vector<double> hi{lo[3], -lo[2], lo[1], -lo[0]};
    return {"db2", lo, hi};
  }
  std::ostringstream msg;
  msg << "unknown wavelet basis '" << name << "'; supported:";
  for (const auto& s : supported_wavelets()) msg << " " << s;
  throw std::invalid_argument(msg.str());
}

template <typename Scalar>
Tensor<Scalar> analysis(const Tensor<Scalar>& x, const WaveletBasis& basis) {
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw std::invalid_argument("wavelet analysis needs c x h x w with even h, w; got " + shape_string(x.shape()));
  }
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2), h2 = h / 2, w2 = w / 2;
  const auto taps = static_cast<Index>(basis.lowpass.size());
  const auto& lo = basis.lowpass;
  const auto& hi = basis.highpass;
  Tensor<Scalar> out({4, c, h2, w2});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h2; ++i)
      for (Index j = 0; j < w2; ++j) {
        double ll = 0, lh = 0, hl = 0, hh = 0;
        for (Index m = 0; m < taps; ++m) {
          const Index y = (2 * i + m) % h;
          for (Index n = 0; n < taps; ++n) {
            const double v = x.at(ch, y, (2 * j + n) % w);
            ll += lo[m] * lo[n] * v;
            lh += hi[m] * lo[n] * v;
            hl += lo[m] * hi[n] * v;
            hh += hi[m] * hi[n] * v;
          }
        }
        out.at(0, ch, i, j) = static_cast<Scalar>(ll);
        out.at(1, ch, i, j) = static_cast<Scalar>(lh);
        out.at(2, ch, i, j) = static_cast<Scalar>(hl);
        out.at(3, ch, i, j) = static_cast<Scalar>(hh);
      }
  return out;
}

template <typename Scalar>
Tensor<Scalar> synthesis(const Tensor<Scalar>& bands, const WaveletBasis& basis) {
  if (bands.rank() != 4 || bands.dim(0) != 4) {
    throw std::invalid_argument("wavelet synthesis needs 4 x c x h x w bands; got " + shape_string(bands.shape()));
  }
  const Index c = bands.dim(1), h2 = bands.dim(2), w2 = bands.dim(3), h = 2 * h2, w = 2 * w2;
  const auto taps = static_cast<Index>(basis.lowpass.size());
  const auto& lo = basis.lowpass;
  const auto& hi = basis.highpass;
  Tensor<Scalar> out({c, h, w});
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h2; ++i)
      for (Index j = 0; j < w2; ++j) {
        const double ll = bands.at(0, ch, i, j), lh = bands.at(1, ch, i, j);
        const double hl = bands.at(2, ch, i, j), hh = bands.at(3, ch, i, j);
        for (Index m = 0; m < taps; ++m) {
          const Index y = (2 * i + m) % h;
          for (Index n = 0; n < taps; ++n) {
            const double v = lo[m] * lo[n] * ll + hi[m] * lo[n] * lh + lo[m] * hi[n] * hl + hi[m] * hi[n] * hh;
            out.at(ch, y, (2 * j + n) % w) += static_cast<Scalar>(v);
          }
        }
      }
  return out;
}

template <typename Scalar>
Var<Scalar> wt_stacked(const Var<Scalar>& x, const WaveletBasis& basis) {
  return Var<Scalar>::make(analysis(x.value(), basis), {x}, [basis](detail::Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->grad_buffer().values() += synthesis(self.grad, basis).values();
    }
  });
}

template <typename Scalar>
Var<Scalar> iwt_stacked(const Var<Scalar>& bands, const WaveletBasis& basis) {
  return Var<Scalar>::make(synthesis(bands.value(), basis), {bands}, [basis](detail::Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->grad_buffer().values() += analysis(self.grad, basis).values();
    }
  });
}

namespace {

template <typename Scalar>
Var<Scalar> band(const Var<Scalar>& stacked, Index which) {
  const Index c = stacked.dim(1), h = stacked.dim(2), w = stacked.dim(3);
  return reshape(slice(stacked, 0, which, which + 1), {c, h, w});
}

template <typename Scalar>
Var<Scalar> stack_bands(const Var<Scalar>& ll, const Var<Scalar>& lh, const Var<Scalar>& hl, const Var<Scalar>& hh) {
  for (const auto* b : {&lh, &hl, &hh}) {
    if (b->shape() != ll.shape()) {
      throw std::invalid_argument("iwt: sub-band shapes differ: " + shape_string(ll.shape()) + " vs " +
                                  shape_string(b->shape()));
    }
  }
  if (ll.shape().size() != 3) throw std::invalid_argument("iwt: sub-bands must be c x h x w");
  const Index c = ll.dim(0), h = ll.dim(1), w = ll.dim(2);
  return reshape(concat<Scalar>({ll, lh, hl, hh}, 0), {4, c, h, w});
}

}  // namespace

template <typename Scalar>
SubBands<Scalar> wt(const Var<Scalar>& x, const WaveletBasis& basis) {
  if (x.shape().size() != 3) throw std::invalid_argument("wt expects c x h x w, got " + shape_string(x.shape()));
  SubBands<Scalar> out;
  out.height = x.dim(1);
  out.width = x.dim(2);
  const Var<Scalar> padded = pad2d(x, {0, out.height % 2, 0, out.width % 2}, PadMode::kReflect);
  const Var<Scalar> stacked = wt_stacked(padded, basis);
  out.ll = band(stacked, 0);
  out.lh = band(stacked, 1);
  out.hl = band(stacked, 2);
  out.hh = band(stacked, 3);
  return out;
}

template <typename Scalar>
Var<Scalar> iwt(const SubBands<Scalar>& bands, const WaveletBasis& basis) {
  const Var<Scalar> full = iwt_stacked(stack_bands(bands.ll, bands.lh, bands.hl, bands.hh), basis);
  const Index h = bands.height ? bands.height : full.dim(1);
  const Index w = bands.width ? bands.width : full.dim(2);
  return crop2d(full, 0, 0, h, w);
}

template <typename Scalar>
Var<Scalar> iwt(const Var<Scalar>& ll, const Var<Scalar>& lh, const Var<Scalar>& hl, const Var<Scalar>& hh,
                const WaveletBasis& basis) {
  return iwt_stacked(stack_bands(ll, lh, hl, hh), basis);
}

template <typename Scalar>
std::vector<SubBands<Scalar>> wavelet_pyramid(const Var<Scalar>& x, int levels, const WaveletBasis& basis) {
  if (levels < 1) throw std::invalid_argument("wavelet_pyramid needs at least one level");
  std::vector<SubBands<Scalar>> out;
  Var<Scalar> ll = x;
  for (int j = 0; j < levels; ++j) {
    out.push_back(wt(ll, basis));
    ll = out.back().ll;
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
SubbandKernels<Scalar>::SubbandKernels(Index channels, int depth, Index kernel, Scalar noise, Rng& rng) {
  *this = delta(channels, depth, kernel);
  for (auto& level : levels) {
    level.mutable_value().values() += uniform_tensor<Scalar>(level.shape(), noise, rng).values();
  }
}

template <typename Scalar>
SubbandKernels<Scalar> SubbandKernels<Scalar>::delta(Index channels, int depth, Index kernel) {
  SubbandKernels out = zeros(channels, depth, kernel);
  for (auto& level : out.levels) {
    for (Index b = 0; b < 4 * channels; ++b) level.mutable_value().at(b, 0, kernel / 2, kernel / 2) = Scalar(1);
  }
  return out;
}

template <typename Scalar>
SubbandKernels<Scalar> SubbandKernels<Scalar>::zeros(Index channels, int depth, Index kernel) {
  if (depth < 1) throw std::invalid_argument("wavelet cascade needs J >= 1 levels");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("sub-band kernel size must be odd");
  SubbandKernels out;
  for (int j = 0; j < depth; ++j) out.levels.push_back(parameter(Tensor<Scalar>({4 * channels, 1, kernel, kernel})));
  return out;
}

template <typename Scalar>
void SubbandKernels<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  for (std::size_t j = 0; j < levels.size(); ++j) out.emplace_back(prefix + ".level" + std::to_string(j + 1), levels[j]);
}

template <typename Scalar>
Var<Scalar> cascade_forward(const Var<Scalar>& x, const SubbandKernels<Scalar>& kernels, const WaveletBasis& basis) {
  if (kernels.depth() < 1) throw std::invalid_argument("cascade_forward: J must be >= 1");
  if (x.shape().size() != 3) throw std::invalid_argument("cascade_forward expects c x h x w");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int depth = kernels.depth();
  if (kernels.levels.front().dim(0) != 4 * c) {
    throw std::invalid_argument("cascade_forward: kernels built for " + std::to_string(kernels.levels.front().dim(0) / 4) +
                                " channels, input has " + std::to_string(c));
  }
  const Index multiple = Index{1} << depth;
  const Index pad_h = (multiple - h % multiple) % multiple, pad_w = (multiple - w % multiple) % multiple;
  Var<Scalar> ll = pad2d(x, {0, pad_h, 0, pad_w}, PadMode::kReflect);

  const Conv2dOptions depthwise{1, kernels.kernel() / 2, 4 * c};
  std::vector<Var<Scalar>> responses;  // Y^(j), 4c x h_j x w_j
  for (int j = 0; j < depth; ++j) {
    const Var<Scalar> bands = wt_stacked(ll, basis);
    const Index hj = bands.dim(2), wj = bands.dim(3);
    ll = reshape(slice(bands, 0, 0, 1), {c, hj, wj});
    responses.push_back(conv2d(reshape(bands, {4 * c, hj, wj}), kernels.levels[j], Var<Scalar>(), depthwise));
  }

  Var<Scalar> z;
  for (int j = depth - 1; j >= 0; --j) {
    const Var<Scalar>& y = responses[j];
    const Index hj = y.dim(1), wj = y.dim(2);
    Var<Scalar> low = slice(y, 0, 0, c);
    if (z.defined()) low = scale(add(low, z), Scalar(0.5));
    const Var<Scalar> merged = concat<Scalar>({low, slice(y, 0, c, 4 * c)}, 0);
    z = iwt_stacked(reshape(merged, {4, c, hj, wj}), basis);
  }
  return crop2d(z, 0, 0, h, w);
}

template <typename Scalar>
WaveletFrequencyModule<Scalar>::WaveletFrequencyModule(Index channels, int levels, Index kernel,
                                                       const std::string& basis, Rng& rng)
    : basis_(wavelet_basis(basis)),
      kernels_(channels, levels, kernel, Scalar(0.1), rng),
      merge_(channels, channels, 1, rng) {}

template <typename Scalar>
Var<Scalar> WaveletFrequencyModule<Scalar>::slice_sum(const FeatureStack<Scalar>& stack) const {
  stack.validate();
  Var<Scalar> total;
  for (const auto& frame : stack.frames) {
    Var<Scalar> out = cascade_forward(frame, kernels_, basis_);
    total = total.defined() ? add(total, out) : out;
  }
  return total;
}

template <typename Scalar>
Var<Scalar> WaveletFrequencyModule<Scalar>::operator()(const FeatureStack<Scalar>& stack) const {
  return merge_(slice_sum(stack));
}

template <typename Scalar>
void WaveletFrequencyModule<Scalar>::collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
  kernels_.collect(out, prefix + ".kernels");
  merge_.collect(out, prefix + ".merge");
}

#define BELTCRACK_INSTANTIATE_WAVELET(S)                                                                      \
  template Tensor<S> analysis(const Tensor<S>&, const WaveletBasis&);                                        \
  template Tensor<S> synthesis(const Tensor<S>&, const WaveletBasis&);                                       \
  template Var<S> wt_stacked(const Var<S>&, const WaveletBasis&);                                            \
  template Var<S> iwt_stacked(const Var<S>&, const WaveletBasis&);                                           \
  template SubBands<S> wt(const Var<S>&, const WaveletBasis&);                                               \
  template Var<S> iwt(const SubBands<S>&, const WaveletBasis&);                                              \
  template Var<S> iwt(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const WaveletBasis&);      \
  template std::vector<SubBands<S>> wavelet_pyramid(const Var<S>&, int, const WaveletBasis&);                \
  template struct SubbandKernels<S>;                                                                         \
  template Var<S> cascade_forward(const Var<S>&, const SubbandKernels<S>&, const WaveletBasis&);             \
  template class WaveletFrequencyModule<S>;

BELTCRACK_INSTANTIATE_WAVELET(float)
BELTCRACK_INSTANTIATE_WAVELET(double)

}  // namespace beltcrack
