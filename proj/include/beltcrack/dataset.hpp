#pragma once

#include "beltcrack/box.hpp"
#include "beltcrack/image.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace beltcrack {

struct GroundTruthBox {
  Box box;
  int class_id = 0;  // single "crack" class

  double area() const { return box.area(); }
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct FrameRecord {
  std::int64_t image_id = 0;
  std::string sequence_id;
  Index frame_index = 0;
  std::string image_path;  // relative to the dataset image root
  int width = 0, height = 0;
  std::vector<GroundTruthBox> boxes;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

enum class SizeBucket { kTiny, kSmall, kMedium, kLarge, kHuge };

// Area edges between consecutive buckets, in pixels^2. A box of area equal to
// an edge belongs to the upper bucket.
inline constexpr std::array<double, 4> kSizeBucketEdges{100.0, 1000.0, 10000.0, 100000.0};
inline constexpr std::array<SizeBucket, 5> kAllSizeBuckets{SizeBucket::kTiny, SizeBucket::kSmall, SizeBucket::kMedium,
                                                          SizeBucket::kLarge, SizeBucket::kHuge};

SizeBucket size_bucket(double area);
const char* bucket_name(SizeBucket bucket);
// [lower, upper) for the bucket; the outer bounds are 0 and infinity.
std::pair<double, double> bucket_range(SizeBucket bucket);

struct Dataset {
  std::vector<FrameRecord> records;  // grouped by sequence_id, sorted by frame_index
  std::string image_root;
  // Set when an image lacks sequence_id or frame_index: every image becomes
  // its own sequence and windows are forced to T = 1.
  bool single_image_mode = false;
  int dropped_boxes = 0;  // non-positive extent after clamping
  std::vector<std::string> warnings;

  std::string image_file(const FrameRecord& r) const;
};

// COCO-style JSON with per-image `sequence_id` and `frame_index`. Annotation
// category ids are written as 1 for the crack class.
Dataset load_dataset(const std::string& annotation_file, const std::string& image_root, bool check_images = true);
void save_dataset(const std::vector<FrameRecord>& records, const std::string& annotation_file);

// Sorts by (sequence_id, frame_index); throws on a duplicate pair.
void canonicalize(std::vector<FrameRecord>& records);

// Indices into the record list; `frames` has exactly T entries, keyframe last.
struct Window {
  std::string sequence_id;
  std::vector<std::size_t> frames;
  std::size_t keyframe() const { return frames.back(); }
};

// L >= T: the L - T + 1 full windows. L < T: one window per frame, head
// padded with the first frame. With pad_head every frame gets a window,
// the first T - 1 padded.
std::vector<Window> sliding_windows(const std::vector<FrameRecord>& records, Index frames, bool pad_head = false);

struct SequenceSample {
  std::vector<Image> frames;
  std::vector<GroundTruthBox> keyframe_boxes;
  std::string sequence_id;
  Index keyframe_index = 0;
  std::int64_t keyframe_image_id = 0;
};

// Reads a window's images from disk.
SequenceSample load_sample(const Dataset& dataset, const Window& window);
// Same, from images already loaded in record order.
SequenceSample make_sample(const Dataset& dataset, const std::vector<Image>& images, const Window& window);
// Every record's image, in record order. Throws naming the file when an
// image is missing, corrupt, or its size disagrees with the record.
std::vector<Image> load_images(const Dataset& dataset);

struct SynthConfig {
  int width = 64, height = 64;
  int frames = 20;
  double belt_speed = 2.0;  // px/frame along +x
  int crack_count = 2;
  double crack_min = 12.0, crack_max = 28.0;  // crack length range, px
  double crack_thickness = 2.5;
  double noise = 0.02;         // sensor noise std in [0,1] units
  double texture_density = 0.3;  // grain spots per 100 px^2 of belt
  std::string sequence_id = "synth";
};

struct SynthSequence {
  std::vector<FrameRecord> records;
  std::vector<Image> images;
};

// Moving textured belt with dark elongated crack polygons translating at the
// belt speed. Boxes are the bounds of each polygon clipped to the frame;
// a crack with less than a quarter of its area in view gets no box.
// Deterministic given the seed. Throws if a crack cannot fit in the frame.
SynthSequence synth_sequence(const SynthConfig& config, std::uint64_t seed);

// Writes `sequences` generated sequences under out_dir (images/<seq>/NNNNNN.png
// plus annotations.json) and returns the annotation path.
std::string write_synth_dataset(const SynthConfig& config, int sequences, std::uint64_t seed, const std::string& out_dir);

}  // namespace beltcrack
