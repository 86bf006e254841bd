#include "beltcrack/metrics.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace beltcrack {

namespace fs = std::filesystem;
using nlohmann::json;

int ImageMatch::true_positives() const {
  return static_cast<int>(std::count_if(detection_to_gt.begin(), detection_to_gt.end(), [](int g) { return g >= 0; }));
}

ImageMatch match(const std::vector<Detection>& detections, const std::vector<GroundTruthBox>& ground_truth,
                 double iou_threshold) {
  ImageMatch m;
  m.detection_to_gt.assign(detections.size(), -1);
  m.gt_matched.assign(ground_truth.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (m.gt_matched[g]) continue;
      const double v = iou(detections[d].box, ground_truth[g].box);
      if (v > best_iou || (best < 0 && v >= iou_threshold)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      m.detection_to_gt[d] = best;
      m.gt_matched[static_cast<std::size_t>(best)] = true;
    }
  }
  return m;
}

MatchSet match_dataset(const std::vector<std::vector<Detection>>& detections,
                       const std::vector<std::vector<GroundTruthBox>>& ground_truth, double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("match_dataset: detections for " + std::to_string(detections.size()) +
                                " images, ground truth for " + std::to_string(ground_truth.size()));
  }
  MatchSet out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    std::vector<Detection> dets = detections[i];
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const auto& gts = ground_truth[i];
    const ImageMatch m = match(dets, gts, iou_threshold);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      MatchSet::Entry e;
      e.score = dets[d].score;
      e.true_positive = m.detection_to_gt[d] >= 0;
      e.bucket = e.true_positive ? size_bucket(gts[static_cast<std::size_t>(m.detection_to_gt[d])].area())
                                 : size_bucket(dets[d].box.area());
      out.detections.push_back(e);
    }
    for (const auto& g : gts) out.gt_buckets.push_back(size_bucket(g.area()));
  }
  std::stable_sort(out.detections.begin(), out.detections.end(),
                   [](const MatchSet::Entry& a, const MatchSet::Entry& b) { return a.score > b.score; });
  return out;
}

namespace {

// Cumulative (tp, fp) at the end of each group of tied scores.
struct Step {
  double threshold;
  int tp, fp;
};

std::vector<Step> threshold_steps(const MatchSet& m) {
  std::vector<Step> steps;
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < m.detections.size(); ++i) {
    (m.detections[i].true_positive ? tp : fp)++;
    if (i + 1 == m.detections.size() || m.detections[i + 1].score != m.detections[i].score) {
      steps.push_back({m.detections[i].score, tp, fp});
    }
  }
  return steps;
}

PrPoint point_for(double threshold, int tp, int fp, Index num_gt) {
  PrPoint p;
  p.threshold = threshold;
  p.recall = num_gt > 0 ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0;
  p.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
  return p;
}

}  // namespace

double average_precision(const std::vector<PrPoint>& curve) {
  std::vector<double> precision;
  for (const auto& p : curve) precision.push_back(p.precision);
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev) * precision[i];
    prev = curve[i].recall;
  }
  return ap;
}

ApResult average_precision(const MatchSet& matches) {
  ApResult r;
  if (matches.num_ground_truth() == 0) {
    r.no_ground_truth = true;
    return r;
  }
  r.ap = average_precision(pr_curve(matches));
  return r;
}

std::vector<PrPoint> pr_curve(const MatchSet& matches, const std::vector<double>& thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end(), std::greater<>())) {
    throw std::invalid_argument("pr_curve: thresholds must be descending");
  }
  std::vector<PrPoint> out;
  std::size_t i = 0;
  int tp = 0, fp = 0;
  for (double t : thresholds) {
    while (i < matches.detections.size() && matches.detections[i].score >= t) {
      (matches.detections[i].true_positive ? tp : fp)++;
      ++i;
    }
    out.push_back(point_for(t, tp, fp, matches.num_ground_truth()));
  }
  return out;
}

std::vector<PrPoint> pr_curve(const MatchSet& matches) {
  std::vector<PrPoint> out;
  for (const auto& s : threshold_steps(matches)) out.push_back(point_for(s.threshold, s.tp, s.fp, matches.num_ground_truth()));
  return out;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

EvalReport evaluate(const MatchSet& matches, Index num_images) {
  EvalReport rep;
  const ApResult ap = average_precision(matches);
  rep.ap50 = ap.ap;
  rep.no_ground_truth = ap.no_ground_truth;
  rep.pr_points = pr_curve(matches);
  rep.num_images = num_images;
  rep.num_detections = static_cast<Index>(matches.detections.size());
  rep.num_ground_truth = matches.num_ground_truth();

  // Operating point: best F1, ties to the higher threshold. With no
  // detections nothing is predicted.
  rep.score_threshold = std::numeric_limits<double>::infinity();
  rep.precision = 1.0;
  rep.recall = 0.0;
  rep.f1 = 0.0;
  for (const auto& p : rep.pr_points) {
    const double f = f1_score(p.precision, p.recall);
    if (f > rep.f1) {
      rep.f1 = f;
      rep.precision = p.precision;
      rep.recall = p.recall;
      rep.score_threshold = p.threshold;
    }
  }
  if (rep.f1 == 0.0 && !rep.pr_points.empty() && std::isinf(rep.score_threshold)) {
    // Every threshold scores F1 = 0; report the strictest one.
    const auto& p = rep.pr_points.front();
    rep.score_threshold = p.threshold;
    rep.precision = p.precision;
    rep.recall = p.recall;
  }

  for (SizeBucket b : kAllSizeBuckets) rep.bucket_counts[b] = {};
  for (const auto& e : matches.detections) {
    if (e.score < rep.score_threshold) break;
    (e.true_positive ? rep.bucket_counts[e.bucket].tp : rep.bucket_counts[e.bucket].fp)++;
  }
  for (SizeBucket g : matches.gt_buckets) rep.bucket_counts[g].fn++;
  for (auto& [b, c] : rep.bucket_counts) c.fn -= c.tp;
  return rep;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth, double iou_threshold) {
  return evaluate(match_dataset(detections, ground_truth, iou_threshold), static_cast<Index>(ground_truth.size()));
}

namespace {

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string report_json(const EvalReport& r) {
  json j;
  j["schema"] = "beltcrack-eval-report/1";
  j["operating_rule"] = r.operating_rule;
  j["iou_threshold"] = 0.5;
  j["ap50"] = r.ap50;
  j["no_ground_truth"] = r.no_ground_truth;
  j["score_threshold"] = finite_or_null(r.score_threshold);
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["num_images"] = r.num_images;
  j["num_detections"] = r.num_detections;
  j["num_ground_truth"] = r.num_ground_truth;
  j["pr_points"] = json::array();
  for (const auto& p : r.pr_points) j["pr_points"].push_back({{"threshold", p.threshold}, {"recall", p.recall}, {"precision", p.precision}});
  j["bucket_counts"] = json::object();
  for (const auto& [b, c] : r.bucket_counts) {
    const auto [lo, hi] = bucket_range(b);
    j["bucket_counts"][bucket_name(b)] = {{"lower", lo}, {"upper", finite_or_null(hi)}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  }
  return j.dump(2);
}

void write_report(const EvalReport& report, const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path);
  out << report_json(report) << "\n";
}

void write_pr_csv(const std::vector<PrPoint>& points, const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "threshold,recall,precision\n" << std::setprecision(17);
  for (const auto& p : points) out << p.threshold << "," << p.recall << "," << p.precision << "\n";
}

std::vector<PrPoint> read_pr_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "threshold,recall,precision") throw std::runtime_error(path + ": unexpected PR CSV header");
  std::vector<PrPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    PrPoint p;
    char c1 = 0, c2 = 0;
    if (!(s >> p.threshold >> c1 >> p.recall >> c2 >> p.precision) || c1 != ',' || c2 != ',') {
      throw std::runtime_error(path + ": bad PR CSV line '" + line + "'");
    }
    out.push_back(p);
  }
  return out;
}

void write_pr_plot(const std::vector<PrPoint>& points, double ap, const std::string& path) {
  const int size = 480, margin = 56;
  const int plot = size - 2 * margin;
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  auto to_px = [&](double r, double p) {
    return cv::Point(margin + static_cast<int>(std::lround(r * plot)), size - margin - static_cast<int>(std::lround(p * plot)));
  };
  for (int k = 0; k <= 10; ++k) {
    const double v = k / 10.0;
    const cv::Scalar grid(225, 225, 225);
    cv::line(img, to_px(v, 0), to_px(v, 1), grid, 1);
    cv::line(img, to_px(0, v), to_px(1, v), grid, 1);
    if (k % 2 == 0) {
      std::ostringstream lbl;
      lbl << std::fixed << std::setprecision(1) << v;
      cv::putText(img, lbl.str(), to_px(v, 0) + cv::Point(-10, 18), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
      cv::putText(img, lbl.str(), to_px(0, v) + cv::Point(-30, 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
  }
  cv::rectangle(img, to_px(0, 1), to_px(1, 0), cv::Scalar(0, 0, 0), 1);
  // Step curve from (0, first precision).
  std::vector<cv::Point> curve;
  if (!points.empty()) {
    double prev_p = points.front().precision;
    curve.push_back(to_px(0, prev_p));
    for (const auto& p : points) {
      curve.push_back(to_px(p.recall, prev_p));
      curve.push_back(to_px(p.recall, p.precision));
      prev_p = p.precision;
    }
  }
  if (curve.size() >= 2) cv::polylines(img, curve, false, cv::Scalar(200, 80, 20), 2, cv::LINE_AA);
  std::ostringstream title;
  title << "PR curve  AP50 = " << std::fixed << std::setprecision(4) << ap;
  cv::putText(img, title.str(), cv::Point(margin, 30), cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, "recall", cv::Point(size / 2 - 20, size - 14), cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, "precision", cv::Point(4, margin - 12), cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  ensure_parent(path);
  if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write plot " + path);
}

void write_coco_results(const std::map<std::int64_t, std::vector<Detection>>& detections, const std::string& path) {
  json arr = json::array();
  for (const auto& [image_id, dets] : detections)
    for (const auto& d : dets) {
      arr.push_back({{"image_id", image_id},
                     {"category_id", d.class_id + 1},
                     {"bbox", {d.box.x_min, d.box.y_min, d.box.width(), d.box.height()}},
                     {"score", d.score}});
    }
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << arr.dump(1) << "\n";
}

std::map<std::int64_t, std::vector<Detection>> read_coco_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file " + path);
  json arr;
  try {
    arr = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed detections file " + path + ": " + e.what());
  }
  if (!arr.is_array()) throw std::runtime_error(path + ": COCO results must be a JSON array");
  std::map<std::int64_t, std::vector<Detection>> out;
  for (const auto& e : arr) {
    const auto bbox = e.at("bbox").get<std::vector<double>>();
    if (bbox.size() != 4) throw std::runtime_error(path + ": bbox must have 4 numbers");
    Detection d;
    d.box = {bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
    d.score = e.at("score").get<double>();
    d.objectness = d.score;
    d.class_score = 1.0;
    d.class_id = e.value("category_id", 1) - 1;
    out[e.at("image_id").get<std::int64_t>()].push_back(d);
  }
  return out;
}

Image render_heatmap(const Tensor<double>& scores, const Image& image, double alpha) {
  if (scores.rank() != 2) throw std::invalid_argument("render_heatmap: scores must be h x w");
  const Index h = image.dim(1), w = image.dim(2);
  const Index gh = scores.dim(0), gw = scores.dim(1);
  cv::Mat levels(static_cast<int>(h), static_cast<int>(w), CV_8U);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double s = scores.at(std::min(gh - 1, y * gh / h), std::min(gw - 1, x * gw / w));
      levels.at<unsigned char>(static_cast<int>(y), static_cast<int>(x)) =
          static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0));
    }
  cv::Mat colored;
  cv::applyColorMap(levels, colored, cv::COLORMAP_JET);
  Image out({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const auto bgr = colored.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (Index c = 0; c < 3; ++c) {
        const double color = bgr[2 - c] / 255.0;
        out.at(c, y, x) = static_cast<float>((1 - alpha) * image.at(c, y, x) + alpha * color);
      }
    }
  return out;
}

template <typename Scalar>
Tensor<double> score_map(const HeadOutput<Scalar>& out) {
  const Index h = out.grid_height(), w = out.grid_width();
  Tensor<double> s({h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double o = static_cast<double>(out.obj.value().at(0, y, x));
      const double c = static_cast<double>(out.cls.value().at(0, y, x));
      s.at(y, x) = 1.0 / (1.0 + std::exp(-o)) / (1.0 + std::exp(-c));
    }
  return s;
}

template Tensor<double> score_map(const HeadOutput<float>&);
template Tensor<double> score_map(const HeadOutput<double>&);

}  // namespace beltcrack
