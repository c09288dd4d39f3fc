#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "roadgnn/common.hpp"
#include "roadgnn/geo.hpp"

namespace roadgnn {

// Georeferenced 8-bit raster (RGB or single-channel DSM). The affine maps
// pixel (col,row) centers to planar meters:
//   x = A*col + B*row + C,  y = D*col + E*row + F
// with A,D,B,E,C,F in world-file line order.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;  // row-major, interleaved channels
  double a = 1, d = 0, b = 0, e = -1, c = 0, f = 0;

  std::uint8_t at(int row, int col, int ch) const {
    return data[(std::size_t(row) * width + col) * channels + ch];
  }

  double det() const { return a * e - d * b; }

  std::pair<double, double> pixel_to_world(double col, double row) const {
    return {a * col + b * row + c, d * col + e * row + f};
  }

  std::pair<double, double> world_to_pixel(double x, double y) const {
    const double inv = 1.0 / det();
    const double dx = x - c, dy = y - f;
    return {(e * dx - b * dy) * inv, (-d * dx + a * dy) * inv};
  }

  // Ground distance per pixel, from the x-scale term.
  double pixel_pitch() const { return std::abs(a); }
};

namespace detail {

inline int pnm_token(std::istream& in) {
  // skips whitespace and '#' comment lines
  int c;
  while ((c = in.peek()) != EOF) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value;
  if (!(in >> value)) throw IoError("truncated PNM header");
  return value;
}

}  // namespace detail

inline Raster load_pnm(std::istream& in) {
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  int channels;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    throw IoError("unsupported raster magic '" + magic + "' (want P5 or P6)");
  Raster r;
  r.channels = channels;
  r.width = detail::pnm_token(in);
  r.height = detail::pnm_token(in);
  const int maxval = detail::pnm_token(in);
  if (maxval != 255) throw IoError("unsupported depth: maxval " + std::to_string(maxval));
  if (r.width <= 0 || r.height <= 0) throw IoError("bad raster dimensions");
  in.get();  // single whitespace after maxval
  r.data.resize(std::size_t(r.width) * r.height * channels);
  in.read(reinterpret_cast<char*>(r.data.data()), std::streamsize(r.data.size()));
  if (std::size_t(in.gcount()) != r.data.size()) throw IoError("truncated raster payload");
  return r;
}

inline void save_pnm(const Raster& r, std::ostream& out) {
  out << (r.channels == 3 ? "P6" : "P5") << "\n" << r.width << " " << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.data.data()), std::streamsize(r.data.size()));
}

inline void parse_world_file(std::istream& in, Raster& r) {
  double coeff[6];
  for (double& x : coeff)
    if (!(in >> x)) throw IoError("world file: expected 6 numbers");
  r.a = coeff[0];
  r.d = coeff[1];
  r.b = coeff[2];
  r.e = coeff[3];
  r.c = coeff[4];
  r.f = coeff[5];
  if (r.det() == 0.0) throw SchemaError("world file: affine not invertible");
}

inline Raster load_raster(const std::string& image_path, const std::string& world_path) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + image_path);
  Raster r = load_pnm(img);
  std::ifstream wld(world_path);
  if (!wld) throw IoError("cannot open " + world_path);
  parse_world_file(wld, r);
  return r;
}

// Road-aligned image tile: the road axis maps to the tile's vertical axis.
struct ImageTile {
  static constexpr int kSize = 120;
  int size = kSize;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // size*size*channels
  double center_x = 0, center_y = 0;  // planar meters
  double heading_deg = 0;
  double out_of_bounds_fraction = 0;

  std::uint8_t at(int row, int col, int ch) const {
    return pixels[(std::size_t(row) * size + col) * channels + ch];
  }
};

// Samples a size x size tile centered on `center`, rotated so that a road
// with the given compass heading runs along the tile's vertical axis.
// Output pixel (row,col) reads the source at
//   center + R(heading) * ((col - size/2), (size/2 - row)) * pitch
// with bilinear interpolation; out-of-bounds samples are zero.
inline ImageTile extract_tile(const Raster& r, double center_x, double center_y,
                              double heading_deg, int size = ImageTile::kSize) {
  if (heading_deg < 0.0 || heading_deg >= 360.0)
    throw SchemaError("extract_tile: heading must be in [0,360)");
  const double pitch = r.pixel_pitch();
  if (pitch == 0.0) throw SchemaError("extract_tile: degenerate pixel pitch");
  if (std::abs(std::abs(r.a) - std::abs(r.e)) > 1e-12)
    throw SchemaError("extract_tile: non-square pixels unsupported");

  ImageTile tile;
  tile.size = size;
  tile.channels = r.channels;
  tile.pixels.assign(std::size_t(size) * size * r.channels, 0);
  tile.center_x = center_x;
  tile.center_y = center_y;
  tile.heading_deg = heading_deg;

  const double th = deg2rad(heading_deg);
  const double ct = std::cos(th), st = std::sin(th);
  std::size_t oob = 0;
  for (int row = 0; row < size; ++row) {
    for (int col = 0; col < size; ++col) {
      // tile-frame displacement in meters, +x right, +y up (along the road)
      const double tx = double(col - size / 2) * pitch;
      const double ty = double(size / 2 - row) * pitch;
      // rotate clockwise by heading: tile-up points along the road heading
      const double wx = center_x + tx * ct + ty * st;
      const double wy = center_y - tx * st + ty * ct;
      const auto [pc, pr] = r.world_to_pixel(wx, wy);
      if (pc < 0.0 || pc > double(r.width - 1) || pr < 0.0 || pr > double(r.height - 1)) {
        ++oob;
        continue;
      }
      const int c0 = int(std::floor(pc)), r0 = int(std::floor(pr));
      const int c1 = std::min(c0 + 1, r.width - 1), r1 = std::min(r0 + 1, r.height - 1);
      const double fc = pc - c0, fr = pr - r0;
      for (int ch = 0; ch < r.channels; ++ch) {
        const double v = (1 - fr) * ((1 - fc) * r.at(r0, c0, ch) + fc * r.at(r0, c1, ch)) +
                         fr * ((1 - fc) * r.at(r1, c0, ch) + fc * r.at(r1, c1, ch));
        tile.pixels[(std::size_t(row) * size + col) * r.channels + ch] =
            std::uint8_t(std::lround(v));
      }
    }
  }
  tile.out_of_bounds_fraction = double(oob) / double(std::size_t(size) * size);
  return tile;
}

// 32 bins of width 8 per channel over [0,256), counts normalized by pixel
// count so each channel's bins sum to 1. R,G,B first, then the optional DSM
// channel: 96 values, or 128 with DSM.
inline std::vector<double> histogram_features(const ImageTile& rgb, const ImageTile* dsm = nullptr) {
  if (rgb.channels != 3) throw SchemaError("histogram_features: RGB tile must have 3 channels");
  if (dsm) {
    if (dsm->channels != 1) throw SchemaError("histogram_features: DSM tile must have 1 channel");
    if (dsm->size != rgb.size) throw SchemaError("histogram_features: mismatched tile sizes");
  }
  constexpr int kBins = 32;
  const double npix = double(rgb.size) * rgb.size;
  std::vector<double> out;
  out.reserve(std::size_t(kBins) * (dsm ? 4 : 3));
  auto accumulate = [&](const ImageTile& t, int ch) {
    std::array<double, kBins> bins{};
    for (int row = 0; row < t.size; ++row)
      for (int col = 0; col < t.size; ++col) bins[t.at(row, col, ch) / 8] += 1.0;
    for (double b : bins) out.push_back(b / npix);
  };
  for (int ch = 0; ch < 3; ++ch) accumulate(rgb, ch);
  if (dsm) accumulate(*dsm, 0);
  return out;
}

}  // namespace roadgnn
