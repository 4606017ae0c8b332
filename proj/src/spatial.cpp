#include "didkit/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "didkit/error.hpp"

namespace didkit {

bool valid_point(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

InstitutionKind parse_institution_kind(const std::string& text) {
  if (text == "community_house") return InstitutionKind::community_house;
  if (text == "folk_high_school") return InstitutionKind::folk_high_school;
  throw Error("SCHEMA_ERROR", "unknown institution kind '" + text + "'");
}

std::string to_string(InstitutionKind kind) {
  return kind == InstitutionKind::community_house ? "community_house" : "folk_high_school";
}

double great_circle_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double market_access(const GeoPoint& origin, std::span<const InstitutionSite> sites, int year,
                     double floor_km) {
  if (!(floor_km > 0.0)) throw Error("NONPOSITIVE_FLOOR", "market access floor must be > 0 km");
  double total = 0.0;
  for (const auto& site : sites) {
    if (site.opening_year > year) continue;
    total += 1.0 / std::max(great_circle_km(origin, site.location), floor_km);
  }
  return total;
}

double min_distance_to_path(const GeoPoint& p, std::span<const GeoPoint> path) {
  if (path.empty()) throw Error("EMPTY_PATH", "path has no vertices");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& v : path) best = std::min(best, great_circle_km(p, v));
  return best;
}

std::vector<double> market_access_batch(std::span<const GeoPoint> origins,
                                        std::span<const int> years,
                                        std::span<const InstitutionSite> sites, double floor_km) {
  if (!(floor_km > 0.0)) throw Error("NONPOSITIVE_FLOOR", "market access floor must be > 0 km");
  std::vector<double> out(origins.size());
  const long n = static_cast<long>(origins.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) out[i] = market_access(origins[i], sites, years[i], floor_km);
  return out;
}

}  // namespace didkit
