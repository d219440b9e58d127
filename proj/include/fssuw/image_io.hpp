#pragma once

// Thin OpenCV-backed codecs. Everything else in the library works on Tensor.

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace fssuw::io {

/// Raw decoded pixels: [H,W,channels] in RGB (or single-channel) order.
struct RawImage {
  Tensor<std::uint8_t> pixels;
  std::size_t channels = 0;
  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

inline RawImage read_raw(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!m.empty(), ErrorCode::IoError, "cannot decode image " + path.string());
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  const auto h = static_cast<std::size_t>(m.rows), w = static_cast<std::size_t>(m.cols);
  const auto c = static_cast<std::size_t>(m.channels());
  RawImage out{Tensor<std::uint8_t>({h, w, c}), c};
  for (std::size_t y = 0; y < h; ++y) std::copy_n(m.ptr<std::uint8_t>(static_cast<int>(y)), w * c, &out.pixels.at(y, 0, 0));
  return out;
}

/// RGB image as [3,H,W] floats in [0,1]. Grayscale inputs are replicated.
inline Tensor<float> read_rgb(const std::filesystem::path& path) {
  const RawImage raw = read_raw(path);
  const std::size_t h = raw.height(), w = raw.width();
  Tensor<float> out({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(c, y, x) = static_cast<float>(raw.pixels.at(y, x, raw.channels == 1 ? 0 : c)) / 255.0f;
  return out;
}

/// Write [H,W,3] RGB or [H,W,1] gray bytes as PNG.
inline void write_png(const std::filesystem::path& path, const Tensor<std::uint8_t>& pixels) {
  require(pixels.rank() == 3 && (pixels.dim(2) == 3 || pixels.dim(2) == 1), ErrorCode::ShapeMismatch,
          "write_png expects [H,W,3] or [H,W,1]");
  const int h = static_cast<int>(pixels.dim(0)), w = static_cast<int>(pixels.dim(1));
  const int type = pixels.dim(2) == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat m(h, w, type, const_cast<std::uint8_t*>(pixels.data()));
  cv::Mat out;
  if (pixels.dim(2) == 3)
    cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  else
    out = m;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  require(cv::imwrite(path.string(), out), ErrorCode::IoError, "cannot write " + path.string());
}

/// [3,H,W] floats in [0,1] -> [H,W,3] bytes.
inline Tensor<std::uint8_t> to_bytes(const Tensor<float>& rgb) {
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  Tensor<std::uint8_t> out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.at(c, y, x), 0.0f, 1.0f) * 255.0f));
  return out;
}

/// Jet-coloured heatmap of a [H,W] map in [0,1], upscaled by nearest neighbour.
template <typename T>
Tensor<std::uint8_t> heatmap(const Tensor<T>& values, std::size_t out_h, std::size_t out_w) {
  const Tensor<T> big = resize_nearest(values, out_h, out_w);
  cv::Mat gray(static_cast<int>(out_h), static_cast<int>(out_w), CV_8UC1);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      gray.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
          static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(big.at(y, x)), 0.0, 1.0) * 255.0));
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  cv::cvtColor(color, color, cv::COLOR_BGR2RGB);
  Tensor<std::uint8_t> out({out_h, out_w, 3});
  for (std::size_t y = 0; y < out_h; ++y) std::copy_n(color.ptr<std::uint8_t>(static_cast<int>(y)), out_w * 3, &out.at(y, 0, 0));
  return out;
}

/// Vertical bar chart of values in [0,1] with one label per bar.
inline Tensor<std::uint8_t> bar_chart(const std::vector<double>& values, const std::vector<std::string>& labels,
                                      const std::string& title, int width = 640, int height = 400) {
  require(values.size() == labels.size() && !values.empty(), ErrorCode::InvalidArgument,
          "bar chart needs one label per value");
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 50, right = 20, top = 40, bottom = 50;
  const int plot_w = width - left - right, plot_h = height - top - bottom;
  cv::line(img, {left, top}, {left, top + plot_h}, cv::Scalar(0, 0, 0), 1);
  cv::line(img, {left, top + plot_h}, {left + plot_w, top + plot_h}, cv::Scalar(0, 0, 0), 1);
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = top + plot_h - tick * plot_h / 4;
    cv::line(img, {left - 4, y}, {left, y}, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, std::to_string(tick * 25), {5, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
  }
  const int n = static_cast<int>(values.size());
  const int slot = plot_w / n, bar = std::max(4, slot * 3 / 5);
  for (int i = 0; i < n; ++i) {
    const double v = std::clamp(values[static_cast<std::size_t>(i)], 0.0, 1.0);
    const int x0 = left + i * slot + (slot - bar) / 2;
    const int y0 = top + plot_h - static_cast<int>(std::lround(v * plot_h));
    cv::rectangle(img, {x0, y0}, {x0 + bar, top + plot_h}, cv::Scalar(180, 110, 40), cv::FILLED);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    cv::putText(img, buf, {x0, std::max(top, y0 - 4)}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, labels[static_cast<std::size_t>(i)], {x0, top + plot_h + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1);
  }
  cv::putText(img, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(0, 0, 0), 1);
  cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  Tensor<std::uint8_t> out({static_cast<std::size_t>(height), static_cast<std::size_t>(width), 3});
  for (int y = 0; y < height; ++y)
    std::copy_n(img.ptr<std::uint8_t>(y), static_cast<std::size_t>(width) * 3, &out.at(static_cast<std::size_t>(y), 0, 0));
  return out;
}

}  // namespace fssuw::io
