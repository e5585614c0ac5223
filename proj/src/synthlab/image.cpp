/**
 * Copyright 2026 The CONSULT Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "synthlab/image.hpp"

#include <numeric>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "synthlab/cv_bridge.hpp"

namespace consult::synthlab {

namespace {

void check_shape(int height, int width) {
  if (height < kMinImageSide || width < kMinImageSide)
    throw InvalidArgument("image must be at least " + std::to_string(kMinImageSide) + "x" +
                          std::to_string(kMinImageSide) + ", got " + std::to_string(height) + "x" +
                          std::to_string(width));
}

}  // namespace

GrayImage::GrayImage(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
  check_shape(height, width);
  pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

GrayImage::GrayImage(int height, int width, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  check_shape(height, width);
  if (pixels_.size() != static_cast<std::size_t>(height) * width)
    throw InvalidArgument("pixel buffer size does not match image shape");
}

double GrayImage::mean() const {
  if (pixels_.empty()) return 0.0;
  const auto sum = std::accumulate(pixels_.begin(), pixels_.end(), std::uint64_t{0});
  return static_cast<double>(sum) / static_cast<double>(pixels_.size());
}

DefectMask::DefectMask(int height, int width) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw InvalidArgument("mask shape must be positive");
  bits_.assign(static_cast<std::size_t>(height) * width, 0);
}

std::size_t DefectMask::area() const {
  std::size_t n = 0;
  for (auto b : bits_) n += (b != 0);
  return n;
}

bool DefectMask::subset_of(const DefectMask& other) const {
  if (other.height_ != height_ || other.width_ != width_) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !other.bits_[i]) return false;
  return true;
}

GrayImage read_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read image: " + path.string());
  return from_mat(m);
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  if (!cv::imwrite(path.string(), as_mat(img))) throw DataError("cannot write image: " + path.string());
}

DefectMask read_mask_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read mask: " + path.string());
  DefectMask out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.set(y, x, m.at<std::uint8_t>(y, x) >= 128);
  return out;
}

void write_mask_png(const std::filesystem::path& path, const DefectMask& mask) {
  cv::Mat m = as_mat(mask) * 255;
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write mask: " + path.string());
}

GrayImage resize(const GrayImage& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  cv::Mat out;
  cv::resize(as_mat(img), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return from_mat(out);
}

}  // namespace consult::synthlab
