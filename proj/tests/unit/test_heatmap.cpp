#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "mmkd/errors.hpp"
#include "mmkd/heatmap.hpp"

using namespace mmkd;

TEST_CASE("zero matrix is uniform mid-gray") {
  const auto px = heatmap_pixels(Matrix3{});
  CHECK(px.size() == 96u * 96u);
  CHECK(std::all_of(px.begin(), px.end(), [](std::uint8_t p) { return p == 128; }));
}

TEST_CASE("linear map endpoints and block layout") {
  const Matrix3 m{{{-1.0, 0.0, 1.0}, {2.0, 3.0, 0.5}, {0.0, 0.0, 0.0}}};
  const auto px = heatmap_pixels(m);
  auto at = [&](int r, int c) { return px[static_cast<std::size_t>(r * kHeatmapSide + c)]; };
  CHECK(at(0, 0) == 0);
  CHECK(at(31, 31) == 0);
  CHECK(at(32 + 5, 64 + 7) == static_cast<std::uint8_t>(std::lround(255.0 * 1.5 / 4.0)));
  CHECK(at(40, 40) == 255);
  CHECK(at(63, 63) == 255);
  CHECK(at(0, 64) == static_cast<std::uint8_t>(std::lround(255.0 * 2.0 / 4.0)));
}

TEST_CASE("PGM bytes and file output") {
  const Matrix3 m{{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}};
  const auto pgm = heatmap_pgm(m);
  const std::string header = "P5\n96 96\n255\n";
  REQUIRE(pgm.size() == header.size() + 96 * 96);
  CHECK(pgm.compare(0, header.size(), header) == 0);
  CHECK(static_cast<unsigned char>(pgm[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(pgm.back()) == 255);

  const auto dir = test_util::scratch_dir("heatmap");
  emit_heatmap(m, (dir / "h.pgm").string());
  CHECK(test_util::slurp(dir / "h.pgm") == pgm);
  CHECK_THROWS_AS(emit_heatmap(m, (dir / "missing" / "deeper" / "h.pgm").string()), IoError);
}

TEST_CASE("non-finite entries are rejected") {
  Matrix3 m{};
  m[1][1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(heatmap_pixels(m), NumericError);
}
