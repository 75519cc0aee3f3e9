#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmkd/losses.hpp"

namespace mmkd {

inline constexpr int kHeatmapCell = 32;
inline constexpr int kHeatmapSide = 3 * kHeatmapCell;

/// Row-major 96x96 gray levels: each matrix cell becomes a 32x32 block,
/// values map linearly from [min, max] to [0, 255]; a constant matrix is 128.
std::vector<std::uint8_t> heatmap_pixels(const Matrix3& m);

/// Binary PGM (P5, maxval 255) bytes for heatmap_pixels(m).
std::string heatmap_pgm(const Matrix3& m);

void emit_heatmap(const Matrix3& m, const std::string& path);

}  // namespace mmkd
