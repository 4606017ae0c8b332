#pragma once

#include <span>
#include <string>
#include <vector>

namespace didkit {

/// Mean Earth radius (IUGG) used for all great-circle distances.
inline constexpr double kEarthRadiusKm = 6371.0088;

struct GeoPoint {
  double lat = 0.0;  // decimal degrees, [-90, 90]
  double lon = 0.0;  // decimal degrees, [-180, 180]
};

bool valid_point(const GeoPoint& p);

enum class InstitutionKind { community_house, folk_high_school };

InstitutionKind parse_institution_kind(const std::string& text);
std::string to_string(InstitutionKind kind);

struct InstitutionSite {
  GeoPoint location;
  int opening_year = 0;
  InstitutionKind kind = InstitutionKind::community_house;
};

/// Haversine distance in km.
double great_circle_km(const GeoPoint& a, const GeoPoint& b);

/// Inverse-distance density of sites open by `year`:
///   sum over active sites of 1 / max(dist(i, site), floor_km).
/// Throws NONPOSITIVE_FLOOR when floor_km <= 0.
double market_access(const GeoPoint& origin, std::span<const InstitutionSite> sites, int year,
                     double floor_km = 1.0);

/// Nearest-vertex distance from `p` to a polyline. Throws EMPTY_PATH.
double min_distance_to_path(const GeoPoint& p, std::span<const GeoPoint> path);

/// market_access for many (origin, year) queries; OpenMP over queries.
std::vector<double> market_access_batch(std::span<const GeoPoint> origins,
                                        std::span<const int> years,
                                        std::span<const InstitutionSite> sites, double floor_km);

}  // namespace didkit
