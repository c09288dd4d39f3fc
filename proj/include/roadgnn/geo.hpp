#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "roadgnn/common.hpp"

namespace roadgnn {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

// Equirectangular projection about a reference latitude. Adequate at city
// scale (sub-meter error over a few kilometers); not a general reprojection.
struct LocalProjection {
  static constexpr double kMetersPerDegLat = 111320.0;
  double ref_lat = 0.0;

  std::pair<double, double> to_meters(double lon, double lat) const {
    return {lon * kMetersPerDegLat * std::cos(deg2rad(ref_lat)), lat * kMetersPerDegLat};
  }
};

// Compass bearing from the first to the last point: 0 = north, clockwise,
// result in [0, 360). Great-circle initial bearing.
inline double bearing(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw SchemaError("bearing: need >= 2 points");
  const auto [lon1, lat1] = points.front();
  const auto [lon2, lat2] = points.back();
  if (lon1 == lon2 && lat1 == lat2) throw SchemaError("bearing: identical endpoints");
  const double p1 = deg2rad(lat1), p2 = deg2rad(lat2), dl = deg2rad(lon2 - lon1);
  const double y = std::sin(dl) * std::cos(p2);
  const double x = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
  double deg = rad2deg(std::atan2(y, x));
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

// Projects to planar meters, resamples to n points equally spaced by arc
// length, and translates by the centroid of the resampled points.
inline std::vector<std::pair<double, double>> resample_geometry(
    const std::vector<std::pair<double, double>>& lonlat, std::size_t n,
    const LocalProjection& proj) {
  if (lonlat.size() < 2) throw SchemaError("resample_geometry: need >= 2 points");
  if (n < 2) throw SchemaError("resample_geometry: need n >= 2");

  std::vector<std::pair<double, double>> pts;
  pts.reserve(lonlat.size());
  for (const auto& [lon, lat] : lonlat) pts.push_back(proj.to_meters(lon, lat));

  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dx = pts[i].first - pts[i - 1].first;
    const double dy = pts[i].second - pts[i - 1].second;
    cum[i] = cum[i - 1] + std::hypot(dx, dy);
  }
  const double total = cum.back();
  if (total <= 0.0) throw SchemaError("resample_geometry: zero-length geometry");

  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = total * double(k) / double(n - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < target) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double t = span > 0.0 ? (target - cum[seg]) / span : 0.0;
    out.emplace_back(pts[seg].first + t * (pts[seg + 1].first - pts[seg].first),
                     pts[seg].second + t * (pts[seg + 1].second - pts[seg].second));
  }

  double cx = 0.0, cy = 0.0;
  for (const auto& [x, y] : out) {
    cx += x;
    cy += y;
  }
  cx /= double(n);
  cy /= double(n);
  for (auto& [x, y] : out) {
    x -= cx;
    y -= cy;
  }
  return out;
}

}  // namespace roadgnn
