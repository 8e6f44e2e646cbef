#pragma once

#include <cstdint>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>
#include <vector>

#include "phytrack/tensor.hpp"

namespace phytrack {

// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const { return rgb.empty(); }

  std::uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

inline Image load_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image: " + path);
  Image img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const cv::Vec3b& px = bgr.at<cv::Vec3b>(y, x);
      img.at(y, x, 0) = px[2];
      img.at(y, x, 1) = px[1];
      img.at(y, x, 2) = px[0];
    }
  return img;
}

inline void save_png(const Image& img, const std::string& path) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

// (H, W, 3) tensor in [0,1].
inline Tensor image_to_tensor01(const Image& img) {
  Tensor t({img.height, img.width, 3});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) t(y, x, c) = img.at(y, x, c) / 255.0;
  return t;
}

inline Image tensor01_to_image(const Tensor& t) {
  Image img(t.dim(1), t.dim(0));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(t(y, x, c), 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

struct OverlayBox {
  double left, top, width, height;
  int id;
};

// Burns boxes and track IDs into a copy of the frame.
inline Image render_overlay(const Image& frame, const std::vector<OverlayBox>& boxes) {
  cv::Mat bgr(frame.height, frame.width, CV_8UC3);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x)
      bgr.at<cv::Vec3b>(y, x) =
          cv::Vec3b(frame.at(y, x, 2), frame.at(y, x, 1), frame.at(y, x, 0));
  static const cv::Scalar palette[] = {
      {0, 0, 255}, {0, 255, 0}, {255, 0, 0},   {0, 255, 255},
      {255, 0, 255}, {255, 255, 0}, {0, 128, 255}, {255, 128, 0}};
  for (const auto& b : boxes) {
    const cv::Scalar& color = palette[static_cast<std::size_t>(b.id) % 8];
    cv::rectangle(bgr,
                  cv::Rect2d(b.left, b.top, std::max(1.0, b.width), std::max(1.0, b.height)),
                  color, 1);
    cv::putText(bgr, std::to_string(b.id),
                cv::Point(static_cast<int>(b.left), std::max(8, static_cast<int>(b.top) - 2)),
                cv::FONT_HERSHEY_PLAIN, 0.7, color, 1);
  }
  Image out(frame.width, frame.height);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const cv::Vec3b& px = bgr.at<cv::Vec3b>(y, x);
      out.at(y, x, 0) = px[2];
      out.at(y, x, 1) = px[1];
      out.at(y, x, 2) = px[0];
    }
  return out;
}

}  // namespace phytrack
