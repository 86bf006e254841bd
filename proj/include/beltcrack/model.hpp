#pragma once

#include "beltcrack/atm.hpp"
#include "beltcrack/backbone.hpp"
#include "beltcrack/fusion.hpp"
#include "beltcrack/head.hpp"
#include "beltcrack/hsm.hpp"
#include "beltcrack/wavelet.hpp"

#include <map>
#include <string>
#include <vector>

namespace beltcrack {

struct ModelConfig {
  Index frames = 5;       // T
  Index channels = 32;    // c
  Index stride = 16;
  Index min_width = 8;
  int wavelet_levels = 2; // J
  Index wavelet_kernel = 3;
  std::string wavelet_basis = "haar";
  Index attention_heads = 4;  // hourglass bottleneck
  FusionConfig fusion;
  Index head_hidden = 32;

  // Flat key=value form, used in checkpoints and manifests.
  std::map<std::string, std::string> to_map() const;
};

// Branch outputs of one window, kept for inspection and tests.
template <typename Scalar>
struct ForwardTrace {
  FeatureStack<Scalar> features;
  Var<Scalar> spatial;    // F_S
  Var<Scalar> temporal;   // F_T
  Var<Scalar> frequency;  // F_F
  FusedFeature<Scalar> fused;
  HeadOutput<Scalar> head;
};

// Full detector: shared backbone -> spatial / temporal / frequency branches
// -> residual compensation fusion -> decoupled head on the keyframe grid.
template <typename Scalar>
class BeltCrackDet {
 public:
  BeltCrackDet() = default;
  BeltCrackDet(const ModelConfig& config, Rng& rng);

  // frames: T images 3 x H x W in [0,1], keyframe last.
  HeadOutput<Scalar> operator()(const std::vector<Var<Scalar>>& frames) const { return trace(frames).head; }
  ForwardTrace<Scalar> trace(const std::vector<Var<Scalar>>& frames) const;

  NamedParameters<Scalar> parameters() const;
  Index parameter_count() const;
  const ModelConfig& config() const { return config_; }

  Backbone<Scalar> backbone;
  SpatialModule<Scalar> hsm;
  TemporalModule<Scalar> atm;
  WaveletFrequencyModule<Scalar> wfm;
  FusionModule<Scalar> fusion;
  DetectionHead<Scalar> head;

 private:
  ModelConfig config_;
};

inline constexpr const char* kCheckpointTag = "beltcrack-checkpoint";
inline constexpr int kCheckpointVersion = 1;

// Header line with the version tag, one JSON line holding the model config
// and the parameter table, then raw little-endian float64 values in table
// order.
template <typename Scalar>
void save_checkpoint(const BeltCrackDet<Scalar>& model, const std::string& path);

// Reads the config stored in a checkpoint.
ModelConfig read_checkpoint_config(const std::string& path);

// Loads values into a model built from the same config. Throws on a version
// mismatch, missing or extra parameters, or a shape mismatch.
template <typename Scalar>
void load_checkpoint(BeltCrackDet<Scalar>& model, const std::string& path);

}  // namespace beltcrack
