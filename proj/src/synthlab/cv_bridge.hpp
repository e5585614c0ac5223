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

#include <opencv2/core.hpp>

#include "synthlab/image.hpp"

namespace consult::synthlab {

// Non-owning OpenCV views over our pixel buffers.
inline cv::Mat as_mat(GrayImage& img) {
  return cv::Mat(img.height(), img.width(), CV_8UC1, img.pixels().data());
}
inline cv::Mat as_mat(const GrayImage& img) {
  return cv::Mat(img.height(), img.width(), CV_8UC1, const_cast<std::uint8_t*>(img.pixels().data()));
}
inline cv::Mat as_mat(DefectMask& m) {
  return cv::Mat(m.height(), m.width(), CV_8UC1, m.bits().data());
}
inline cv::Mat as_mat(const DefectMask& m) {
  return cv::Mat(m.height(), m.width(), CV_8UC1, const_cast<std::uint8_t*>(m.bits().data()));
}

inline GrayImage from_mat(const cv::Mat& m) {
  CV_Assert(m.type() == CV_8UC1);
  GrayImage out(m.rows, m.cols);
  cv::Mat view = as_mat(out);
  m.copyTo(view);
  return out;
}

}  // namespace consult::synthlab
