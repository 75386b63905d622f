#include "hexlink/hexgrid.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "hexlink/errors.hpp"

namespace hexlink {

namespace {

constexpr double kSqrt3 = std::numbers::sqrt3;
constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

double resolution_edge_m(Resolution res) {
  switch (res) {
    case Resolution::Hex6: return 3725.0;
    case Resolution::Hex7: return 1406.0;
    case Resolution::Hex8: return 531.0;
    case Resolution::Hex9: return 201.0;
    case Resolution::Hex10: return 76.0;
    case Resolution::Custom: break;
  }
  throw ConfigError("custom resolution has no reference edge length");
}

std::string_view resolution_name(Resolution res) {
  switch (res) {
    case Resolution::Hex6: return "hex6";
    case Resolution::Hex7: return "hex7";
    case Resolution::Hex8: return "hex8";
    case Resolution::Hex9: return "hex9";
    case Resolution::Hex10: return "hex10";
    case Resolution::Custom: return "custom";
  }
  return "custom";
}

Resolution parse_resolution(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (Resolution r : {Resolution::Hex6, Resolution::Hex7, Resolution::Hex8, Resolution::Hex9,
                       Resolution::Hex10, Resolution::Custom}) {
    if (lower == resolution_name(r)) return r;
  }
  throw ConfigError("unknown grid resolution '" + std::string(name) + "'");
}

HexGridConfig HexGridConfig::at_resolution(Resolution res, double origin_lat, double origin_lon) {
  HexGridConfig cfg{origin_lat, origin_lon, resolution_edge_m(res), res};
  cfg.validate();
  return cfg;
}

HexGridConfig HexGridConfig::custom(double edge_length_m, double origin_lat, double origin_lon) {
  HexGridConfig cfg{origin_lat, origin_lon, edge_length_m, Resolution::Custom};
  cfg.validate();
  return cfg;
}

void HexGridConfig::validate() const {
  if (!(edge_length_m > 0.0) || !std::isfinite(edge_length_m)) {
    throw ConfigError("grid edge length must be positive");
  }
  if (!(std::abs(origin_lat) <= 90.0) || !(std::abs(origin_lon) <= 180.0)) {
    throw ConfigError("grid origin out of range");
  }
  if (resolution != Resolution::Custom) {
    const double ref = resolution_edge_m(resolution);
    if (std::abs(edge_length_m - ref) > 1e-3 * ref) {
      throw ConfigError("edge length " + std::to_string(edge_length_m) + " m does not match " +
                        std::string(resolution_name(resolution)));
    }
  }
}

LocalPoint project(double lat, double lon, const HexGridConfig& cfg) {
  if (!(std::abs(lat) <= 90.0) || !(std::abs(lon) <= 180.0)) {
    throw CoordinateError("coordinate out of range: lat=" + std::to_string(lat) +
                          " lon=" + std::to_string(lon));
  }
  const double dlat = lat - cfg.origin_lat;
  const double dlon = lon - cfg.origin_lon;
  if (std::abs(dlat) >= kLocalWindowDeg || std::abs(dlon) >= kLocalWindowDeg) {
    throw OutOfWindowError("point (" + std::to_string(lat) + ", " + std::to_string(lon) +
                           ") is outside the local projection window");
  }
  return {kEarthRadiusM * std::cos(cfg.origin_lat * kDegToRad) * dlon * kDegToRad,
          kEarthRadiusM * dlat * kDegToRad};
}

GeoPoint unproject(const LocalPoint& p, const HexGridConfig& cfg) {
  return {cfg.origin_lat + p.y / kEarthRadiusM / kDegToRad,
          cfg.origin_lon + p.x / (kEarthRadiusM * std::cos(cfg.origin_lat * kDegToRad)) / kDegToRad};
}

CellId point_to_cell(const LocalPoint& p, const HexGridConfig& cfg) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw CoordinateError("non-finite local point");
  const double size = cfg.edge_length_m;
  const double fq = (kSqrt3 / 3.0 * p.x - p.y / 3.0) / size;
  const double fr = (2.0 / 3.0 * p.y) / size;
  const double fs = -fq - fr;

  double rq = std::round(fq);
  double rr = std::round(fr);
  double rs = std::round(fs);
  const double dq = std::abs(rq - fq);
  const double dr = std::abs(rr - fr);
  const double ds = std::abs(rs - fs);
  if (dq > dr && dq > ds) {
    rq = -rr - rs;
  } else if (dr > ds) {
    rr = -rq - rs;
  }
  return {static_cast<std::int32_t>(rq), static_cast<std::int32_t>(rr)};
}

LocalPoint cell_center(const CellId& c, const HexGridConfig& cfg) {
  const double size = cfg.edge_length_m;
  return {size * kSqrt3 * (c.q + c.r / 2.0), size * 1.5 * c.r};
}

std::array<CellId, 6> neighbors(const CellId& c) {
  std::array<CellId, 6> out;
  for (std::size_t i = 0; i < kHexDirections.size(); ++i) {
    out[i] = {c.q + kHexDirections[i][0], c.r + kHexDirections[i][1]};
  }
  return out;
}

int hex_distance(const CellId& a, const CellId& b) {
  const int dq = a.q - b.q;
  const int dr = a.r - b.r;
  return (std::abs(dq) + std::abs(dr) + std::abs(dq + dr)) / 2;
}

bool are_adjacent(const CellId& a, const CellId& b) { return hex_distance(a, b) == 1; }

std::vector<CellId> cells_within(const CellId& center, int radius) {
  std::vector<CellId> out{center};
  for (int k = 1; k <= radius; ++k) {
    // Start at center + k * direction[4], walk each side of the ring.
    CellId cur{center.q + k * kHexDirections[4][0], center.r + k * kHexDirections[4][1]};
    for (int side = 0; side < 6; ++side) {
      for (int step = 0; step < k; ++step) {
        out.push_back(cur);
        cur = {cur.q + kHexDirections[side][0], cur.r + kHexDirections[side][1]};
      }
    }
  }
  return out;
}

double cell_area_km2(const HexGridConfig& cfg) {
  const double edge_km = cfg.edge_length_m / 1000.0;
  return 1.5 * kSqrt3 * edge_km * edge_km;
}

}  // namespace hexlink
