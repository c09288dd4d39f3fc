#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "test_util.hpp"

using namespace roadgnn;

namespace {

Raster make_raster(int w, int h, int channels, std::uint64_t seed, double a = 0.5, double e = -0.5,
                   double c = 0.0, double f = 0.0) {
  Raster r;
  r.width = w;
  r.height = h;
  r.channels = channels;
  r.a = a;
  r.e = e;
  r.c = c;
  r.f = f;
  r.data.resize(std::size_t(w) * h * channels);
  Rng rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  for (auto& v : r.data) v = std::uint8_t(px(rng));
  return r;
}

}  // namespace

TEST_CASE("load_raster parses PPM + world file") {
  std::stringstream img;
  img << "P6\n2 2\n255\n";
  const unsigned char pix[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30};
  img.write(reinterpret_cast<const char*>(pix), 12);
  Raster r = load_pnm(img);
  std::stringstream wld("0.5\n0\n0\n-0.5\n100.25\n200.75\n");
  parse_world_file(wld, r);
  REQUIRE(r.width == 2);
  REQUIRE(r.channels == 3);
  const auto [x, y] = r.pixel_to_world(0, 0);
  CHECK(x == 100.25);  // C,F = center of top-left pixel
  CHECK(y == 200.75);
  CHECK(r.at(0, 0, 0) == 255);
  CHECK(r.at(1, 1, 2) == 30);
}

TEST_CASE("world file with zero determinant is rejected") {
  Raster r = make_raster(2, 2, 1, 0);
  std::stringstream wld("0.5\n0\n0\n0\n0\n0\n");  // E=0, B=0
  CHECK_THROWS_AS(parse_world_file(wld, r), SchemaError);
}

TEST_CASE("16-bit rasters are rejected") {
  std::stringstream img;
  img << "P5\n2 2\n65535\n";
  CHECK_THROWS_AS(load_pnm(img), IoError);
}

TEST_CASE("world_to_pixel trivial cases") {
  Raster r = make_raster(4, 4, 1, 1, 1.0, -1.0, 0.0, 0.0);
  auto [c1, r1] = r.world_to_pixel(3.0, -4.0);
  CHECK(c1 == Catch::Approx(3.0));
  CHECK(r1 == Catch::Approx(4.0));
  auto [c2, r2] = r.world_to_pixel(r.c, r.f);
  CHECK(c2 == Catch::Approx(0.0).margin(1e-12));
  CHECK(r2 == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("pixel/world round-trip on a checkerboard raster") {
  Raster r = make_raster(1000, 1000, 1, 0, 0.5, -0.5, 1234.5, 987.25);
  for (int row = 0; row < 1000; ++row)
    for (int col = 0; col < 1000; ++col)
      r.data[std::size_t(row) * 1000 + col] = ((row / 8 + col / 8) % 2) ? 255 : 0;
  Rng rng(17);
  std::uniform_real_distribution<double> pick(-200.0, 1200.0);
  for (int t = 0; t < 100; ++t) {
    const double col = pick(rng), row = pick(rng);
    const auto [x, y] = r.pixel_to_world(col, row);
    const auto [c2, r2] = r.world_to_pixel(x, y);
    CHECK(std::abs(c2 - col) * r.pixel_pitch() < 1e-9);  // within 1e-9 m
    CHECK(std::abs(r2 - row) * r.pixel_pitch() < 1e-9);
  }
}

TEST_CASE("extract_tile heading 0 at integer center is a pure crop") {
  const Raster r = make_raster(200, 200, 3, 21);
  const auto [cx, cy] = r.pixel_to_world(60.0, 60.0);
  const ImageTile tile = extract_tile(r, cx, cy, 0.0);
  REQUIRE(tile.size == 120);
  for (int row = 0; row < 120; ++row)
    for (int col = 0; col < 120; ++col)
      for (int ch = 0; ch < 3; ++ch) REQUIRE(tile.at(row, col, ch) == r.at(row, col, ch));
  CHECK(tile.out_of_bounds_fraction == 0.0);
}

TEST_CASE("extract_tile heading 90 matches rotation oracle at pixel centers") {
  // asymmetric pattern so any axis mix-up shows
  Raster r = make_raster(240, 240, 1, 0);
  for (int row = 0; row < 240; ++row)
    for (int col = 0; col < 240; ++col) r.data[std::size_t(row) * 240 + col] = std::uint8_t((3 * col + 7 * row) % 251);
  const auto [cx, cy] = r.pixel_to_world(120.0, 120.0);
  const ImageTile t90 = extract_tile(r, cx, cy, 90.0);

  // oracle: rotate pixel offsets about the center index by 90 degrees
  // clockwise in world space. For output offset (dr, dc) from the tile's
  // nominal center, the source pixel is center + (dc_src, dr_src) with
  // dc_src = -dr and dr_src = dc.
  for (int row = 0; row < 120; ++row)
    for (int col = 0; col < 120; ++col) {
      const int dr = row - 60, dc = col - 60;
      const int src_col = 120 - dr;
      const int src_row = 120 + dc;
      REQUIRE(t90.at(row, col, 0) == r.at(src_row, src_col, 0));
    }
}

TEST_CASE("extract_tile far outside is all zero") {
  const Raster r = make_raster(200, 200, 3, 2);
  const ImageTile tile = extract_tile(r, 1e6, 1e6, 45.0);
  CHECK(tile.out_of_bounds_fraction == 1.0);
  for (auto p : tile.pixels) CHECK(p == 0);
}

TEST_CASE("extract_tile input validation") {
  const Raster r = make_raster(200, 200, 3, 2);
  CHECK_THROWS_AS(extract_tile(r, 0, 0, 360.0), SchemaError);
  Raster bad = r;
  bad.e = -0.25;  // non-square pixels
  CHECK_THROWS_AS(extract_tile(bad, 0, 0, 0.0), SchemaError);
}

TEST_CASE("histogram_features basics") {
  ImageTile black;
  black.channels = 3;
  black.pixels.assign(120 * 120 * 3, 0);
  const auto h = histogram_features(black);
  REQUIRE(h.size() == 96);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(h[std::size_t(ch) * 32] == 1.0);
    for (int b = 1; b < 32; ++b) CHECK(h[std::size_t(ch) * 32 + b] == 0.0);
  }

  ImageTile mid = black;
  std::fill(mid.pixels.begin(), mid.pixels.end(), 128);
  const auto h2 = histogram_features(mid);
  for (int ch = 0; ch < 3; ++ch) CHECK(h2[std::size_t(ch) * 32 + 16] == 1.0);  // 128/8 = 16

  ImageTile dsm;
  dsm.channels = 1;
  dsm.pixels.assign(120 * 120, 200);
  CHECK(histogram_features(mid, &dsm).size() == 128);
}

TEST_CASE("histogram bins sum to one per channel") {
  const Raster r = make_raster(300, 300, 3, 33);
  const auto [cx, cy] = r.pixel_to_world(150.0, 150.0);
  const ImageTile tile = extract_tile(r, cx, cy, 37.0);
  const auto h = histogram_features(tile);
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0.0, count = 0.0;
    for (int b = 0; b < 32; ++b) {
      sum += h[std::size_t(ch) * 32 + b];
      count += h[std::size_t(ch) * 32 + b] * 14400.0;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    CHECK(count == Catch::Approx(14400.0).margin(1e-6));
  }
}

TEST_CASE("histogram rejects mismatched tiles") {
  ImageTile rgb;
  rgb.channels = 3;
  rgb.pixels.assign(120 * 120 * 3, 0);
  ImageTile dsm;
  dsm.channels = 1;
  dsm.size = 60;
  dsm.pixels.assign(60 * 60, 0);
  CHECK_THROWS_AS(histogram_features(rgb, &dsm), SchemaError);
}
