#pragma once

#include "beltcrack/ops.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace beltcrack {

using Rng = std::mt19937_64;

template <typename Scalar>
using NamedParameters = std::vector<std::pair<std::string, Var<Scalar>>>;

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, Scalar bound, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, Scalar stddev, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

enum class Activation { kNone, kRelu, kSilu, kSigmoid };

template <typename Scalar>
Var<Scalar> activate(const Var<Scalar>& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kSilu:
      return silu(x);
    case Activation::kSigmoid:
      return sigmoid(x);
    case Activation::kNone:
      break;
  }
  return x;
}

template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;
  Var<Scalar> bias;  // undefined when bias-free
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(Index in, Index out, Index kernel, Rng& rng, bool with_bias = true, Index stride = 1, Index groups = 1)
      : options{stride, kernel / 2, groups} {
    const Index fan_in = in / groups * kernel * kernel;
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(fan_in));
    weight = parameter(uniform_tensor<Scalar>({out, in / groups, kernel, kernel}, bound, rng));
    if (with_bias) bias = parameter(uniform_tensor<Scalar>({out}, bound, rng));
  }

  Index in_channels() const { return weight.dim(1) * options.groups; }
  Index out_channels() const { return weight.dim(0); }
  Index kernel() const { return weight.dim(2); }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias, options); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename Scalar>
struct GroupNorm {
  Var<Scalar> gamma;
  Var<Scalar> beta;
  Index groups = 1;

  GroupNorm() = default;
  GroupNorm(Index channels, Index max_groups = 8) {
    groups = std::min(max_groups, channels);
    while (channels % groups) --groups;
    gamma = parameter(Tensor<Scalar>({channels}, Scalar(1)));
    beta = parameter(Tensor<Scalar>({channels}, Scalar(0)));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return group_norm(x, groups, gamma, beta); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// Conv -> GroupNorm -> activation.
template <typename Scalar>
struct ConvNormAct {
  Conv2d<Scalar> conv;
  GroupNorm<Scalar> norm;
  Activation act = Activation::kSilu;

  ConvNormAct() = default;
  ConvNormAct(Index in, Index out, Index kernel, Rng& rng, Index stride = 1, Activation act = Activation::kSilu,
              bool with_bias = false)
      : conv(in, out, kernel, rng, with_bias, stride), norm(out), act(act) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return activate(norm(conv(x)), act); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    conv.collect(out, prefix + ".conv");
    norm.collect(out, prefix + ".norm");
  }
};

template <typename Scalar>
struct LayerNorm {
  Var<Scalar> gamma;
  Var<Scalar> beta;

  LayerNorm() = default;
  explicit LayerNorm(Index dim)
      : gamma(parameter(Tensor<Scalar>({dim}, Scalar(1)))), beta(parameter(Tensor<Scalar>({dim}, Scalar(0)))) {}

  Var<Scalar> operator()(const Var<Scalar>& tokens) const { return layer_norm_rows(tokens, gamma, beta); }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// Scaled dot-product attention: Softmax(Q K^T / sqrt(d_k)) V over rows.
template <typename Scalar>
Var<Scalar> attend(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v) {
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(1)));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk)), v);
}

// Multi-head self-attention over N x D tokens, returning N x D (no residual).
template <typename Scalar>
struct MultiHeadAttention {
  Var<Scalar> wq, wk, wv, wo;
  Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index dim, Index heads, Rng& rng) : heads(heads) {
    if (heads < 1 || dim % heads) throw std::invalid_argument("attention dim must be divisible by heads");
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
    wq = parameter(uniform_tensor<Scalar>({dim, dim}, bound, rng));
    wk = parameter(uniform_tensor<Scalar>({dim, dim}, bound, rng));
    wv = parameter(uniform_tensor<Scalar>({dim, dim}, bound, rng));
    wo = parameter(uniform_tensor<Scalar>({dim, dim}, bound, rng));
  }

  Var<Scalar> operator()(const Var<Scalar>& tokens) const {
    const Var<Scalar> q = matmul(tokens, wq);
    const Var<Scalar> k = matmul(tokens, wk);
    const Var<Scalar> v = matmul(tokens, wv);
    const Index dim = wq.dim(1), head_dim = dim / heads;
    std::vector<Var<Scalar>> outs;
    outs.reserve(heads);
    for (Index h = 0; h < heads; ++h) {
      const Index b = h * head_dim, e = b + head_dim;
      outs.push_back(attend(slice(q, 1, b, e), slice(k, 1, b, e), slice(v, 1, b, e)));
    }
    return matmul(heads == 1 ? outs[0] : concat(outs, 1), wo);
  }

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
  }
};

}  // namespace beltcrack
