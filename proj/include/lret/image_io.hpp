#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lret/tensor.hpp"

namespace lret {

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline int ppm_token(std::istream& in) {
  // skips whitespace and '#' comments between header tokens
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    } else {
      c = in.get();
    }
  }
  if (c == EOF) throw std::runtime_error("ppm: truncated header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace detail

/// Reads an 8-bit RGB image as (H,W,3) floats scaled to [0,1] by /255.
/// PNG goes through OpenCV; PPM (P6) is parsed natively.
inline Tensor read_image(const std::string& path) {
  if (detail::ends_with(path, ".ppm")) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("image: cannot open " + path);
    char p, six;
    in.get(p);
    in.get(six);
    if (p != 'P' || six != '6') throw std::runtime_error("image: not a P6 ppm: " + path);
    int w = detail::ppm_token(in);
    int h = detail::ppm_token(in);
    int maxval = detail::ppm_token(in);
    if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error("image: bad ppm header: " + path);
    std::vector<unsigned char> raw(size_t(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (in.gcount() != std::streamsize(raw.size())) {
      throw std::runtime_error("image: truncated ppm payload: " + path);
    }
    Tensor t = Tensor::zeros({h, w, 3});
    for (size_t i = 0; i < raw.size(); ++i) t[int64_t(i)] = float(raw[i]) / 255.0f;
    return t;
  }
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("image: cannot decode " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Tensor t = Tensor::zeros({rgb.rows, rgb.cols, 3});
  for (int y = 0; y < rgb.rows; ++y) {
    const unsigned char* row = rgb.ptr<unsigned char>(y);
    for (int x = 0; x < rgb.cols * 3; ++x) {
      t[int64_t(y) * rgb.cols * 3 + x] = float(row[x]) / 255.0f;
    }
  }
  return t;
}

/// Writes (H,W,3) floats in [0,1] as an 8-bit RGB image; the format follows
/// the file extension (.ppm or .png).
inline void write_image(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(2) != 3) {
    throw std::invalid_argument("image: expected (H,W,3), got " + img.shape_str());
  }
  const int h = img.dim(0), w = img.dim(1);
  std::vector<unsigned char> raw(size_t(h) * w * 3);
  for (size_t i = 0; i < raw.size(); ++i) {
    float v = std::clamp(img[int64_t(i)], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  if (detail::ends_with(path, ".ppm")) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("image: cannot write " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw std::runtime_error("image: write failed for " + path);
    return;
  }
  cv::Mat rgb(h, w, CV_8UC3, raw.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("image: write failed for " + path);
}

}  // namespace lret
