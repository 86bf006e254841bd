#pragma once

#include "beltcrack/dataset.hpp"
#include "beltcrack/head.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace beltcrack {

// Per-image greedy matching. Detections must be sorted by score descending;
// each claims the unmatched ground truth of highest IoU (>= threshold), ties
// going to the lower index.
struct ImageMatch {
  std::vector<int> detection_to_gt;  // -1 for a false positive
  std::vector<bool> gt_matched;
  int true_positives() const;
};

ImageMatch match(const std::vector<Detection>& detections, const std::vector<GroundTruthBox>& ground_truth,
                 double iou_threshold = 0.5);

// Pooled matches over a dataset.
struct MatchSet {
  struct Entry {
    double score = 0;
    bool true_positive = false;
    SizeBucket bucket = SizeBucket::kTiny;  // matched gt's bucket for a TP, the detection's own otherwise
  };
  std::vector<Entry> detections;  // sorted by score descending
  std::vector<SizeBucket> gt_buckets;

  Index num_ground_truth() const { return static_cast<Index>(gt_buckets.size()); }
};

// Images are paired by position; detections are sorted per image before
// matching.
MatchSet match_dataset(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<GroundTruthBox>>& ground_truth, double iou_threshold = 0.5);

struct PrPoint {
  double threshold = 0;
  double recall = 0;
  double precision = 1;
};

struct ApResult {
  double ap = 0;
  bool no_ground_truth = false;  // AP defined as 0
};

// All-points interpolation: area under the monotone precision envelope. Tied
// scores form one threshold step.
ApResult average_precision(const MatchSet& matches);

// Cumulative counts at every threshold (descending). An empty prediction set
// has precision 1 by convention.
std::vector<PrPoint> pr_curve(const MatchSet& matches, const std::vector<double>& thresholds);
// The curve at every distinct detection score.
std::vector<PrPoint> pr_curve(const MatchSet& matches);
// AP from such a curve (points in descending threshold order).
double average_precision(const std::vector<PrPoint>& curve);

struct BucketCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  double ap50 = 0;
  bool no_ground_truth = false;
  double score_threshold = 0;
  double precision = 1, recall = 0, f1 = 0;
  std::string operating_rule = "score threshold maximizing F1 over the evaluated split";
  std::vector<PrPoint> pr_points;
  std::map<SizeBucket, BucketCounts> bucket_counts;
  Index num_images = 0, num_detections = 0, num_ground_truth = 0;
};

double f1_score(double precision, double recall);

EvalReport evaluate(const MatchSet& matches, Index num_images);
EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth, double iou_threshold = 0.5);

std::string report_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path);
void write_pr_csv(const std::vector<PrPoint>& points, const std::string& path);
std::vector<PrPoint> read_pr_csv(const std::string& path);
// Line plot of precision against recall with the AP in the title.
void write_pr_plot(const std::vector<PrPoint>& points, double ap, const std::string& path);

// COCO results: [{image_id, category_id, bbox: [x, y, w, h], score}].
void write_coco_results(const std::map<std::int64_t, std::vector<Detection>>& detections, const std::string& path);
std::map<std::int64_t, std::vector<Detection>> read_coco_results(const std::string& path);

// Score map (h x w, values in [0,1]) upsampled by nearest neighbour to the
// image size, color-mapped (warm = high) and alpha-blended over the image.
Image render_heatmap(const Tensor<double>& scores, const Image& image, double alpha = 0.5);

template <typename Scalar>
Tensor<double> score_map(const HeadOutput<Scalar>& out);

}  // namespace beltcrack
