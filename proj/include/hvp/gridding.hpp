// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hvp/errors.hpp"

namespace hvp::grid {

inline constexpr std::size_t kRows = 3;
inline constexpr std::size_t kCols = 4;
inline constexpr std::size_t kPatches = kRows * kCols;
inline constexpr std::size_t kSetSize = 6;

// 1-based patch indices, row-major over the 3x4 grid.
inline constexpr std::array<std::size_t, kSetSize> kOIndices{2, 3, 5, 8, 10, 11};
inline constexpr std::array<std::size_t, kSetSize> kIIndices{1, 4, 6, 7, 9, 12};

struct GridSpec {
  std::size_t view_size = 0;   // W
  std::size_t patch_size = 0;  // H
  std::array<std::size_t, kCols> x_offsets{};
  std::array<std::size_t, kRows> y_offsets{};
};

namespace detail {

// round(k * span / (n - 1)), halves rounded away from zero.
template <std::size_t N>
std::array<std::size_t, N> uniform_offsets(std::size_t span) {
  std::array<std::size_t, N> out{};
  for (std::size_t k = 0; k < N; ++k) {
    out[k] = static_cast<std::size_t>(std::round(static_cast<double>(k * span) / static_cast<double>(N - 1)));
  }
  return out;
}

template <std::size_t N>
bool has_gap(const std::array<std::size_t, N>& offsets, std::size_t patch) {
  for (std::size_t k = 1; k < N; ++k)
    if (offsets[k] - offsets[k - 1] > patch) return true;
  return false;
}

}  // namespace detail

/// Window positions for a W x W view cut into 12 H x H patches. Rejects
/// H > W and any layout whose windows leave pixels uncovered.
inline GridSpec make_gridspec(std::size_t view_size, std::size_t patch_size) {
  if (patch_size == 0 || patch_size > view_size) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " must be in (0, view size " +
                      std::to_string(view_size) + "]");
  }
  GridSpec spec;
  spec.view_size = view_size;
  spec.patch_size = patch_size;
  const std::size_t span = view_size - patch_size;
  spec.x_offsets = detail::uniform_offsets<kCols>(span);
  spec.y_offsets = detail::uniform_offsets<kRows>(span);
  if (detail::has_gap(spec.x_offsets, patch_size) || detail::has_gap(spec.y_offsets, patch_size)) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " leaves uncovered pixels in a " +
                      std::to_string(view_size) + " view");
  }
  return spec;
}

/// The 12 patches of one view, each [channels x H x H], index 0 = patch 1.
struct PatchGrid {
  std::size_t patch_size = 0;
  std::size_t channels = 1;
  std::array<std::vector<float>, kPatches> patches;

  /// 1-based access matching the grid numbering.
  const std::vector<float>& patch(std::size_t index) const { return patches.at(index - 1); }
};

/// Copies the 12 windows out of a [channels x W x W] view.
inline PatchGrid extract_patches(std::span<const float> view, const GridSpec& spec, std::size_t channels = 1) {
  const std::size_t w = spec.view_size, h = spec.patch_size;
  if (view.size() != channels * w * w) {
    throw ShapeError("extract_patches: view has " + std::to_string(view.size()) + " values, expected " +
                     std::to_string(channels * w * w));
  }
  PatchGrid grid;
  grid.patch_size = h;
  grid.channels = channels;
  for (std::size_t j = 0; j < kPatches; ++j) {
    const std::size_t y0 = spec.y_offsets[j / kCols];
    const std::size_t x0 = spec.x_offsets[j % kCols];
    auto& p = grid.patches[j];
    p.resize(channels * h * h);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < h; ++x) p[(c * h + y) * h + x] = view[(c * w + y0 + y) * w + x0 + x];
  }
  return grid;
}

using PatchSequence = std::array<std::vector<float>, kSetSize>;

struct OISequences {
  PatchSequence o;
  PatchSequence i;
};

/// The "O"-shaped and "I"-shaped patch sets, each in ascending index order.
inline OISequences o_i_sequences(const PatchGrid& grid) {
  OISequences out;
  for (std::size_t k = 0; k < kSetSize; ++k) {
    out.o[k] = grid.patch(kOIndices[k]);
    out.i[k] = grid.patch(kIIndices[k]);
  }
  return out;
}

}  // namespace hvp::grid
