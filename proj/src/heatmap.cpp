#include "mmkd/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mmkd/errors.hpp"

namespace mmkd {

std::vector<std::uint8_t> heatmap_pixels(const Matrix3& m) {
  double lo = m[0][0], hi = m[0][0];
  for (const auto& row : m) {
    for (double v : row) {
      if (!std::isfinite(v)) throw NumericError("heatmap: matrix has a non-finite entry");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(kHeatmapSide * kHeatmapSide));
  for (int y = 0; y < kHeatmapSide; ++y) {
    for (int x = 0; x < kHeatmapSide; ++x) {
      const double v = m[static_cast<std::size_t>(y / kHeatmapCell)][static_cast<std::size_t>(x / kHeatmapCell)];
      const long level = hi > lo ? std::lround(255.0 * (v - lo) / (hi - lo)) : 128;
      pixels[static_cast<std::size_t>(y * kHeatmapSide + x)] = static_cast<std::uint8_t>(std::clamp(level, 0L, 255L));
    }
  }
  return pixels;
}

std::string heatmap_pgm(const Matrix3& m) {
  const auto pixels = heatmap_pixels(m);
  std::string out = "P5\n" + std::to_string(kHeatmapSide) + " " + std::to_string(kHeatmapSide) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

void emit_heatmap(const Matrix3& m, const std::string& path) {
  const auto bytes = heatmap_pgm(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace mmkd
