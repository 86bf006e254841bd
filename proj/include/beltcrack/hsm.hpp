#pragma once

#include "beltcrack/features.hpp"
#include "beltcrack/layers.hpp"

namespace beltcrack {

template <typename Scalar>
struct GatedLocalFeature {
  Var<Scalar> gated_keyframe;  // sigmoid(gate) * F_t
  Var<Scalar> local;           // F_l
};

template <typename Scalar>
struct MemoryBank {
  Var<Scalar> query_key, query_value;    // from the keyframe F_t
  Var<Scalar> memory_key, memory_value;  // from the attended map F_g
};

// Hierarchical spatial module. Reference frames gate the keyframe, a
// non-local block relates every position pair, and a key/value memory read
// lets the keyframe query the attended map.
template <typename Scalar>
class SpatialModule {
 public:
  SpatialModule() = default;
  // `frames` fixes the gate's input width, (frames - 1) * channels.
  SpatialModule(Index channels, Index frames, Rng& rng);

  // With a single frame there are no references and the gate is sigmoid(0).
  GatedLocalFeature<Scalar> gate_reference_frames(const FeatureStack<Scalar>& stack) const;
  Var<Scalar> gate_preactivation(const FeatureStack<Scalar>& stack) const;

  // F_g = Softmax(Q K^T / sqrt(d_k)) V + F_l over the h*w positions.
  Var<Scalar> non_local_attention(const Var<Scalar>& local) const;

  MemoryBank<Scalar> build_memory(const Var<Scalar>& attended, const Var<Scalar>& keyframe) const;
  // Space-time-memory read: each keyframe position attends over memory keys,
  // reads memory values, and the read is merged with the query values by a
  // 1x1 conv back to c channels.
  Var<Scalar> memory_read(const Var<Scalar>& attended, const Var<Scalar>& keyframe) const;
  Var<Scalar> memory_read(const MemoryBank<Scalar>& bank) const;

  // F_S for one window.
  Var<Scalar> operator()(const FeatureStack<Scalar>& stack) const;

  Index key_channels() const { return key_channels_; }
  Index value_channels() const { return value_channels_; }

  // Exposed so tests can materialize or pin individual weights.
  Conv2d<Scalar> gate_conv, local_conv;
  Var<Scalar> query_proj, key_proj, value_proj;  // c x d_k, c x d_k, c x c
  Conv2d<Scalar> query_key_conv, query_value_conv, memory_key_conv, memory_value_conv, read_conv;

  void collect(NamedParameters<Scalar>& out, const std::string& prefix) const;

 private:
  Index channels_ = 0;
  Index frames_ = 0;
  Index key_channels_ = 0;
  Index value_channels_ = 0;
};

}  // namespace beltcrack
