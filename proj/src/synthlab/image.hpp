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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace consult::synthlab {

inline constexpr int kMinImageSide = 32;

// 8-bit single-channel image, row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int height, int width, std::uint8_t fill = 0);
  GrayImage(int height, int width, std::vector<std::uint8_t> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t at(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& at(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  double mean() const;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Boolean pixel mask stored as 0/1 bytes.
class DefectMask {
 public:
  DefectMask() = default;
  DefectMask(int height, int width);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }

  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::size_t area() const;
  bool same_shape(const GrayImage& img) const {
    return img.height() == height_ && img.width() == width_;
  }
  // True when every set pixel of *this is also set in other.
  bool subset_of(const DefectMask& other) const;

  friend bool operator==(const DefectMask&, const DefectMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// PNG I/O. Colour inputs are converted by luminance.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& img);
// Masks are stored as 0/255.
DefectMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const DefectMask& mask);

// Bilinear resize to the working resolution.
GrayImage resize(const GrayImage& img, int height, int width);

}  // namespace consult::synthlab
