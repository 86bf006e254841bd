#include "beltcrack/dataset.hpp"

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace beltcrack {

namespace fs = std::filesystem;
using nlohmann::json;

SizeBucket size_bucket(double area) {
  for (std::size_t i = 0; i < kSizeBucketEdges.size(); ++i)
    if (area < kSizeBucketEdges[i]) return kAllSizeBuckets[i];
  return SizeBucket::kHuge;
}

const char* bucket_name(SizeBucket bucket) {
  switch (bucket) {
    case SizeBucket::kTiny:
      return "tiny";
    case SizeBucket::kSmall:
      return "small";
    case SizeBucket::kMedium:
      return "medium";
    case SizeBucket::kLarge:
      return "large";
    case SizeBucket::kHuge:
      return "huge";
  }
  return "?";
}

std::pair<double, double> bucket_range(SizeBucket bucket) {
  const auto i = static_cast<std::size_t>(bucket);
  const double lower = i == 0 ? 0.0 : kSizeBucketEdges[i - 1];
  const double upper = i < kSizeBucketEdges.size() ? kSizeBucketEdges[i] : std::numeric_limits<double>::infinity();
  return {lower, upper};
}

std::string Dataset::image_file(const FrameRecord& r) const { return (fs::path(image_root) / r.image_path).string(); }

void canonicalize(std::vector<FrameRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const FrameRecord& a, const FrameRecord& b) {
    return a.sequence_id != b.sequence_id ? a.sequence_id < b.sequence_id : a.frame_index < b.frame_index;
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].sequence_id == records[i - 1].sequence_id && records[i].frame_index == records[i - 1].frame_index) {
      throw std::runtime_error("duplicate frame: sequence '" + records[i].sequence_id + "' frame_index " +
                               std::to_string(records[i].frame_index));
    }
  }
}

Dataset load_dataset(const std::string& annotation_file, const std::string& image_root, bool check_images) {
  std::ifstream in(annotation_file);
  if (!in) throw std::runtime_error("cannot open annotation file: " + annotation_file);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed annotation file " + annotation_file + ": " + e.what());
  }

  Dataset ds;
  ds.image_root = image_root;
  const auto& images = doc.at("images");
  for (const auto& im : images) {
    if (!im.contains("sequence_id") || !im.contains("frame_index")) {
      ds.single_image_mode = true;
      break;
    }
  }
  if (ds.single_image_mode) {
    ds.warnings.push_back("images without sequence_id/frame_index: treating every image as its own sequence, T=1");
  }

  std::map<std::int64_t, std::size_t> by_id;
  for (const auto& im : images) {
    FrameRecord r;
    r.image_id = im.at("id").get<std::int64_t>();
    r.image_path = im.at("file_name").get<std::string>();
    r.width = im.at("width").get<int>();
    r.height = im.at("height").get<int>();
    if (r.width <= 0 || r.height <= 0) {
      throw std::runtime_error("image " + r.image_path + ": width and height must be positive");
    }
    if (ds.single_image_mode) {
      r.sequence_id = "image_" + std::to_string(r.image_id);
      r.frame_index = 0;
    } else {
      const auto& sid = im.at("sequence_id");
      r.sequence_id = sid.is_string() ? sid.get<std::string>() : sid.dump();
      r.frame_index = im.at("frame_index").get<Index>();
      if (r.frame_index < 0) throw std::runtime_error("image " + r.image_path + ": negative frame_index");
    }
    if (check_images) {
      const auto path = fs::path(image_root) / r.image_path;
      if (!fs::exists(path)) throw std::runtime_error("missing image file: " + path.string());
    }
    if (!by_id.emplace(r.image_id, ds.records.size()).second) {
      throw std::runtime_error("duplicate image id " + std::to_string(r.image_id));
    }
    ds.records.push_back(std::move(r));
  }

  if (doc.contains("annotations")) {
    for (const auto& a : doc.at("annotations")) {
      const auto image_id = a.at("image_id").get<std::int64_t>();
      const auto it = by_id.find(image_id);
      if (it == by_id.end()) throw std::runtime_error("annotation refers to unknown image id " + std::to_string(image_id));
      FrameRecord& r = ds.records[it->second];
      const auto bbox = a.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw std::runtime_error("annotation bbox must have 4 numbers");
      const Box raw{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
      const Box b = raw.clamped(r.width, r.height);
      if (!b.valid()) {
        ++ds.dropped_boxes;
        continue;
      }
      r.boxes.push_back({b, 0});
    }
  }
  if (ds.dropped_boxes > 0) {
    ds.warnings.push_back(std::to_string(ds.dropped_boxes) + " boxes with non-positive extent after clamping dropped");
  }
  canonicalize(ds.records);
  return ds;
}

void save_dataset(const std::vector<FrameRecord>& input, const std::string& annotation_file) {
  std::vector<FrameRecord> records = input;
  canonicalize(records);
  json doc;
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array({{{"id", 1}, {"name", "crack"}}});
  std::int64_t ann_id = 1;
  for (const auto& r : records) {
    doc["images"].push_back({{"id", r.image_id},
                             {"file_name", r.image_path},
                             {"width", r.width},
                             {"height", r.height},
                             {"sequence_id", r.sequence_id},
                             {"frame_index", r.frame_index}});
    for (const auto& g : r.boxes) {
      doc["annotations"].push_back({{"id", ann_id++},
                                    {"image_id", r.image_id},
                                    {"category_id", 1},
                                    {"bbox", {g.box.x_min, g.box.y_min, g.box.width(), g.box.height()}},
                                    {"area", g.area()},
                                    {"iscrowd", 0}});
    }
  }
  const auto parent = fs::path(annotation_file).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(annotation_file);
  if (!out) throw std::runtime_error("cannot write annotation file: " + annotation_file);
  out << doc.dump(1) << "\n";
}

std::vector<Window> sliding_windows(const std::vector<FrameRecord>& records, Index frames, bool pad_head) {
  if (frames < 1) throw std::invalid_argument("sliding_windows: T must be >= 1");
  std::vector<Window> out;
  std::set<std::string> seen;
  std::size_t begin = 0;
  while (begin < records.size()) {
    std::size_t end = begin + 1;
    while (end < records.size() && records[end].sequence_id == records[begin].sequence_id) {
      if (records[end].frame_index <= records[end - 1].frame_index) {
        throw std::invalid_argument("sliding_windows: records of '" + records[begin].sequence_id +
                                    "' are not sorted by frame_index");
      }
      ++end;
    }
    if (!seen.insert(records[begin].sequence_id).second) {
      throw std::invalid_argument("sliding_windows: records of '" + records[begin].sequence_id + "' are not grouped");
    }
    const auto length = static_cast<Index>(end - begin);
    const Index first_key = (length >= frames && !pad_head) ? frames - 1 : 0;
    for (Index key = first_key; key < length; ++key) {
      Window w;
      w.sequence_id = records[begin].sequence_id;
      for (Index k = key - frames + 1; k <= key; ++k) w.frames.push_back(begin + static_cast<std::size_t>(std::max<Index>(k, 0)));
      out.push_back(std::move(w));
    }
    begin = end;
  }
  return out;
}

std::vector<Image> load_images(const Dataset& dataset) {
  std::vector<Image> images;
  images.reserve(dataset.records.size());
  for (const auto& r : dataset.records) {
    const std::string path = dataset.image_file(r);
    Image im = read_image(path);
    if (im.dim(1) != r.height || im.dim(2) != r.width) {
      throw std::runtime_error("image " + path + " is " + std::to_string(im.dim(2)) + "x" + std::to_string(im.dim(1)) +
                               ", annotation says " + std::to_string(r.width) + "x" + std::to_string(r.height));
    }
    images.push_back(std::move(im));
  }
  return images;
}

namespace {

void fill_keyframe(SequenceSample& s, const Dataset& dataset, const Window& window) {
  const FrameRecord& key = dataset.records.at(window.keyframe());
  s.keyframe_boxes = key.boxes;
  s.sequence_id = key.sequence_id;
  s.keyframe_index = key.frame_index;
  s.keyframe_image_id = key.image_id;
}

}  // namespace

SequenceSample make_sample(const Dataset& dataset, const std::vector<Image>& images, const Window& window) {
  SequenceSample s;
  for (std::size_t i : window.frames) s.frames.push_back(images.at(i));
  fill_keyframe(s, dataset, window);
  return s;
}

SequenceSample load_sample(const Dataset& dataset, const Window& window) {
  SequenceSample s;
  for (std::size_t i : window.frames) s.frames.push_back(read_image(dataset.image_file(dataset.records.at(i))));
  fill_keyframe(s, dataset, window);
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic belt sequences

namespace {

struct Point {
  double x, y;
};
using Polygon = std::vector<Point>;

// Sutherland-Hodgman against one half-plane given by inside(p) and the
// boundary crossing.
template <typename Inside, typename Cross>
Polygon clip_edge(const Polygon& poly, Inside inside, Cross cross) {
  Polygon out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    const bool ia = inside(a), ib = inside(b);
    if (ia) out.push_back(a);
    if (ia != ib) out.push_back(cross(a, b));
  }
  return out;
}

Polygon clip_to_rect(Polygon poly, double w, double h) {
  auto at_x = [](double x) {
    return [x](const Point& a, const Point& b) { return Point{x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](const Point& a, const Point& b) { return Point{a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y}; };
  };
  poly = clip_edge(poly, [](const Point& p) { return p.x >= 0; }, at_x(0));
  if (poly.empty()) return poly;
  poly = clip_edge(poly, [w](const Point& p) { return p.x <= w; }, at_x(w));
  if (poly.empty()) return poly;
  poly = clip_edge(poly, [](const Point& p) { return p.y >= 0; }, at_y(0));
  if (poly.empty()) return poly;
  return clip_edge(poly, [h](const Point& p) { return p.y <= h; }, at_y(h));
}

Box bounds(const Polygon& poly) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : poly) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

double polygon_area(const Polygon& poly) {
  double twice = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(twice);
}

// Jagged elongated polygon centered near the origin: a random-walk spine
// thickened along its normal, tapering at both tips.
Polygon crack_shape(double length, double thickness, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle_dist(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double angle = angle_dist(rng);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double nx = -dy, ny = dx;
  const int segments = 6;
  std::vector<Point> left, right;
  double lateral = 0;
  for (int i = 0; i <= segments; ++i) {
    const double s = (static_cast<double>(i) / segments - 0.5) * length;
    if (i > 0 && i < segments) lateral += 0.08 * length * jitter(rng);
    const double taper = (i == 0 || i == segments) ? 0.15 : 1.0;
    const double half = 0.5 * thickness * taper * (1.0 + 0.3 * jitter(rng));
    const double cx = s * dx + lateral * nx, cy = s * dy + lateral * ny;
    left.push_back({cx + half * nx, cy + half * ny});
    right.push_back({cx - half * nx, cy - half * ny});
  }
  Polygon poly = left;
  poly.insert(poly.end(), right.rbegin(), right.rend());
  return poly;
}

}  // namespace

SynthSequence synth_sequence(const SynthConfig& cfg, std::uint64_t seed) {
  constexpr double kMinVisibleFraction = 0.25;
  if (cfg.width < 8 || cfg.height < 8) throw std::invalid_argument("synth: frame must be at least 8x8");
  if (cfg.frames < 1) throw std::invalid_argument("synth: frames must be >= 1");
  if (cfg.crack_count < 0) throw std::invalid_argument("synth: crack_count must be >= 0");
  if (!(cfg.crack_min > 0) || cfg.crack_max < cfg.crack_min) throw std::invalid_argument("synth: bad crack size range");
  if (cfg.crack_max + cfg.crack_thickness >= std::min(cfg.width, cfg.height)) {
    throw std::invalid_argument("synth: crack larger than frame (max length " + std::to_string(cfg.crack_max) +
                                " vs frame " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height) + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Cracks: shape in local coordinates and their position at the middle
  // frame; they translate along +x at the belt speed.
  const double mid = 0.5 * (cfg.frames - 1);
  std::vector<Polygon> cracks;
  std::vector<double> shade;
  for (int k = 0; k < cfg.crack_count; ++k) {
    const double length = cfg.crack_min + (cfg.crack_max - cfg.crack_min) * unit(rng);
    Polygon shape = crack_shape(length, cfg.crack_thickness, rng);
    const Box b = bounds(shape);
    if (b.width() >= cfg.width || b.height() >= cfg.height) throw std::invalid_argument("synth: crack larger than frame");
    const double ox = -b.x_min + (cfg.width - b.width()) * unit(rng);
    const double oy = -b.y_min + (cfg.height - b.height()) * unit(rng);
    for (auto& p : shape) {
      p.x += ox - cfg.belt_speed * mid;
      p.y += oy;
    }
    cracks.push_back(std::move(shape));
    shade.push_back(0.12 + 0.1 * unit(rng));
  }

  // Belt texture on belt coordinates u = x - speed * t, sampled on an integer
  // grid and interpolated along u.
  const double travel = cfg.belt_speed * (cfg.frames - 1);
  const int u0 = static_cast<int>(std::floor(std::min(0.0, -travel))) - 2;
  const int u1 = static_cast<int>(std::ceil(std::max(0.0, -travel))) + cfg.width + 2;
  const int tex_w = u1 - u0 + 1;
  std::vector<double> texture(static_cast<std::size_t>(tex_w) * cfg.height);
  for (auto& v : texture) v = 0.04 * gauss(rng);
  const int spots = static_cast<int>(cfg.texture_density * tex_w * cfg.height / 100.0);
  for (int s = 0; s < spots; ++s) {
    const double sx = tex_w * unit(rng), sy = cfg.height * unit(rng);
    const double amp = 0.15 * (unit(rng) - 0.5);
    const double radius = 0.7 + 1.3 * unit(rng);
    const int r = static_cast<int>(std::ceil(2 * radius));
    for (int y = std::max(0, static_cast<int>(sy) - r); y < std::min(cfg.height, static_cast<int>(sy) + r + 1); ++y)
      for (int x = std::max(0, static_cast<int>(sx) - r); x < std::min(tex_w, static_cast<int>(sx) + r + 1); ++x) {
        const double d2 = (x + 0.5 - sx) * (x + 0.5 - sx) + (y + 0.5 - sy) * (y + 0.5 - sy);
        texture[static_cast<std::size_t>(y) * tex_w + x] += amp * std::exp(-d2 / (2 * radius * radius));
      }
  }
  const double tint[3] = {0.50 + 0.04 * unit(rng), 0.50 + 0.04 * unit(rng), 0.52 + 0.04 * unit(rng)};

  SynthSequence out;
  const int supersample = 8;
  for (int t = 0; t < cfg.frames; ++t) {
    const double shift = cfg.belt_speed * (t - mid);
    FrameRecord r;
    r.sequence_id = cfg.sequence_id;
    r.frame_index = t;
    r.width = cfg.width;
    r.height = cfg.height;
    std::ostringstream name;
    name << "images/" << cfg.sequence_id << "/" << std::setw(6) << std::setfill('0') << t << ".png";
    r.image_path = name.str();

    Image im({3, cfg.height, cfg.width});
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double u = x - cfg.belt_speed * t - u0;
        const int ui = static_cast<int>(std::floor(u));
        const double f = u - ui;
        const double* row = &texture[static_cast<std::size_t>(y) * tex_w];
        const double v = (1 - f) * row[ui] + f * row[ui + 1];
        for (int c = 0; c < 3; ++c) im.at(c, y, x) = static_cast<float>(tint[c] + v);
      }

    for (std::size_t k = 0; k < cracks.size(); ++k) {
      Polygon moved = cracks[k];
      for (auto& p : moved) p.x += shift + cfg.belt_speed * mid;
      // Coverage mask by supersampled polygon fill.
      cv::Mat mask = cv::Mat::zeros(cfg.height * supersample, cfg.width * supersample, CV_8U);
      std::vector<cv::Point> pts;
      for (const auto& p : moved) {
        pts.emplace_back(static_cast<int>(std::lround(p.x * supersample * 16)),
                         static_cast<int>(std::lround(p.y * supersample * 16)));
      }
      cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(255), cv::LINE_8, 4);
      cv::Mat coverage;
      cv::resize(mask, coverage, cv::Size(cfg.width, cfg.height), 0, 0, cv::INTER_AREA);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const double a = coverage.at<unsigned char>(y, x) / 255.0;
          if (a <= 0) continue;
          for (int c = 0; c < 3; ++c) {
            float& px = im.at(c, y, x);
            px = static_cast<float>((1 - a) * px + a * shade[k]);
          }
        }
      const Polygon visible = clip_to_rect(moved, cfg.width, cfg.height);
      // Heavily truncated cracks at the frame edge are left unlabeled.
      if (visible.size() >= 3 && polygon_area(visible) >= kMinVisibleFraction * polygon_area(moved)) {
        const Box b = bounds(visible);
        if (b.width() >= 1.0 && b.height() >= 1.0) r.boxes.push_back({b, 0});
      }
    }
    for (Index i = 0; i < im.size(); ++i) im[i] += static_cast<float>(cfg.noise * gauss(rng));
    quantize_8bit(im);
    out.records.push_back(std::move(r));
    out.images.push_back(std::move(im));
  }
  return out;
}

std::string write_synth_dataset(const SynthConfig& config, int sequences, std::uint64_t seed, const std::string& out_dir) {
  if (sequences < 1) throw std::invalid_argument("synth: need at least one sequence");
  std::vector<FrameRecord> all;
  std::int64_t next_id = 1;
  for (int s = 0; s < sequences; ++s) {
    SynthConfig cfg = config;
    std::ostringstream sid;
    sid << config.sequence_id << "_" << std::setw(3) << std::setfill('0') << s;
    cfg.sequence_id = sid.str();
    auto seq = synth_sequence(cfg, seed + static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < seq.records.size(); ++i) {
      seq.records[i].image_id = next_id++;
      write_image((fs::path(out_dir) / seq.records[i].image_path).string(), seq.images[i]);
      all.push_back(std::move(seq.records[i]));
    }
  }
  const std::string path = (fs::path(out_dir) / "annotations.json").string();
  save_dataset(all, path);
  return path;
}

}  // namespace beltcrack
