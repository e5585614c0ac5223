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

#include "harness/config.hpp"
#include "synthlab/image.hpp"

// Procedural surrogate for brain MRI slices: an elliptical head with a bright
// rim, folded ridge texture and dark ventricles on a low-level noise floor.
namespace consult::harness {

struct PhantomSample {
  synthlab::GrayImage image;
  synthlab::DefectMask mask;  // all zero for healthy samples
};

PhantomSample phantom_healthy(int size, std::uint64_t seed);

// Healthy phantom plus one lesion: a smooth Bezier blob whose intensity is
// offset from the underlying tissue with its own low-frequency noise.
PhantomSample phantom_lesion(int size, std::uint64_t seed, std::uint64_t lesion_seed, const PhantomConfig& cfg);

// Writes train/healthy, test/healthy, test/anomalous and test/masks under
// root and returns a directory DataConfig pointing at them.
DataConfig write_phantom_corpus(const PhantomConfig& cfg, std::uint64_t seed, const std::filesystem::path& root);

}  // namespace consult::harness
