#pragma once

#include <algorithm>

namespace beltcrack {

// Axis-aligned box in pixel coordinates.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_max > x_min && y_max > y_min; }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  Box clamped(double image_width, double image_height) const {
    return {std::clamp(x_min, 0.0, image_width), std::clamp(y_min, 0.0, image_height),
            std::clamp(x_max, 0.0, image_width), std::clamp(y_max, 0.0, image_height)};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct Detection {
  Box box;
  double objectness = 0;
  double class_score = 0;
  double score = 0;  // objectness * class_score
  int class_id = 0;
};

}  // namespace beltcrack
