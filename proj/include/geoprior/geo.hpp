#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "geoprior/encoder.hpp"

namespace geoprior {

inline constexpr double kEarthRadiusKm = 6371.0088;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

using Vec3 = std::array<double, 3>;

inline Vec3 to_unit_vector(double lon_deg, double lat_deg) {
  const double lon = deg_to_rad(lon_deg);
  const double lat = deg_to_rad(lat_deg);
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

// Inverse of to_unit_vector; v need not be exactly unit length.
inline void from_unit_vector(const Vec3& v, double& lon_deg, double& lat_deg) {
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  lat_deg = std::clamp(rad_to_deg(std::asin(std::clamp(v[2] / norm, -1.0, 1.0))), -90.0, 90.0);
  lon_deg = std::clamp(rad_to_deg(std::atan2(v[1], v[0])), -180.0, 180.0);
}

// Great-circle angle in radians on the unit sphere (haversine form).
inline double haversine(double lon1_deg, double lat1_deg, double lon2_deg, double lat2_deg) {
  const double dlat = deg_to_rad(lat2_deg - lat1_deg);
  const double dlon = deg_to_rad(lon2_deg - lon1_deg);
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(deg_to_rad(lat1_deg)) * std::cos(deg_to_rad(lat2_deg)) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * std::asin(std::min(1.0, std::sqrt(a)));
}

inline double haversine(const SpatioTemporalPoint& a, const SpatioTemporalPoint& b) {
  return haversine(a.lon, a.lat, b.lon, b.lat);
}

}  // namespace geoprior
