#pragma once

#include "beltcrack/loss.hpp"
#include "beltcrack/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace beltcrack {

struct RunConfig {
  std::string train_annotations, train_images;
  std::string val_annotations, val_images;
  Index input_size = 64;  // frames are resized to input_size x input_size

  ModelConfig model;
  LossWeights loss;
  double assign_radius = 1.5;  // strides

  Index epochs = 5;
  Index batch = 4;
  Index max_steps = 0;  // > 0 overrides epochs
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 5e-4;
  double lr_final_ratio = 0.01;  // cosine floor as a fraction of lr
  Index warmup_steps = 0;
  double grad_clip = 10.0;  // global norm, 0 disables
  Index checkpoint_every = 0;  // steps, 0 disables

  double score_threshold = 0.001;
  double nms_iou = 0.65;
  Index max_detections = 100;

  std::uint64_t seed = 0;
  std::string precision = "double";  // or "float"
};

// Canonical flat form: every key, values printed so they parse back exactly.
std::map<std::string, std::string> config_to_map(const RunConfig& config);
// Keys missing from the map keep their defaults. Throws on unknown keys,
// unparsable values or failed validation.
RunConfig config_from_map(const std::map<std::string, std::string>& values);

// `key = value` lines; `#` starts a comment; values may be double-quoted.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);
// "key=value"; applied on top of an existing config and revalidated.
void apply_override(RunConfig& config, const std::string& assignment);

std::string config_text(const RunConfig& config);
// 16 hex digits of FNV-1a over config_text.
std::string config_hash(const RunConfig& config);

void validate(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace beltcrack
