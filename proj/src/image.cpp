#include "beltcrack/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <filesystem>
#include <stdexcept>

namespace beltcrack {

Image read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing image file: " + path);
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image file: " + path);
  const Index h = bgr.rows, w = bgr.cols;
  Image out({3, h, w});
  for (Index y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
  }
  return out;
}

void write_image(const std::string& path, const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_image expects 3 x H x W");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const Index h = image.dim(1), w = image.dim(2);
  cv::Mat bgr(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  for (Index y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image file: " + path);
}

void quantize_8bit(Image& image) {
  for (Index i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    image[i] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  }
}

Image resize_image(const Image& image, Index height, Index width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize_image: target size must be positive");
  const Index h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  const int interp = (height < h || width < w) ? cv::INTER_AREA : cv::INTER_LINEAR;
  Image out({3, height, width});
  for (Index c = 0; c < 3; ++c) {
    cv::Mat src(static_cast<int>(h), static_cast<int>(w), CV_32F, const_cast<float*>(image.data()) + c * h * w);
    cv::Mat dst(static_cast<int>(height), static_cast<int>(width), CV_32F, out.data() + c * height * width);
    cv::resize(src, dst, dst.size(), 0, 0, interp);
  }
  return out;
}

}  // namespace beltcrack
