#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hexlink {

inline constexpr double kEarthRadiusM = 6371000.0;
// Maximum |lat - origin_lat| and |lon - origin_lon| accepted by project().
inline constexpr double kLocalWindowDeg = 5.0;

enum class Resolution { Hex6, Hex7, Hex8, Hex9, Hex10, Custom };

// Reference edge length for a named resolution, in meters. Custom has none.
double resolution_edge_m(Resolution res);
std::string_view resolution_name(Resolution res);
// Accepts "hex6".."hex10" (case-insensitive) and "custom".
Resolution parse_resolution(std::string_view name);

struct HexGridConfig {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double edge_length_m = 531.0;
  Resolution resolution = Resolution::Hex8;

  static HexGridConfig at_resolution(Resolution res, double origin_lat, double origin_lon);
  static HexGridConfig custom(double edge_length_m, double origin_lat, double origin_lon);

  // Throws ConfigError when edge_length_m <= 0 or disagrees with the named
  // resolution by more than 0.1%.
  void validate() const;
};

// Axial coordinates of a pointy-top hexagon.
struct CellId {
  std::int32_t q = 0;
  std::int32_t r = 0;

  // Bijective packing: high 32 bits carry q, low 32 bits carry r (two's complement).
  std::uint64_t key() const {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(q)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(r));
  }
  static CellId from_key(std::uint64_t key) {
    return {static_cast<std::int32_t>(static_cast<std::uint32_t>(key >> 32)),
            static_cast<std::int32_t>(static_cast<std::uint32_t>(key & 0xffffffffu))};
  }

  friend bool operator==(const CellId&, const CellId&) = default;
  friend auto operator<=>(const CellId&, const CellId&) = default;
};

struct CellIdHash {
  std::size_t operator()(const CellId& c) const noexcept { return std::hash<std::uint64_t>{}(c.key()); }
};

struct LocalPoint {
  double x = 0.0;  // meters east of origin
  double y = 0.0;  // meters north of origin
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

// Local equirectangular projection about the grid origin.
LocalPoint project(double lat, double lon, const HexGridConfig& cfg);
GeoPoint unproject(const LocalPoint& p, const HexGridConfig& cfg);

CellId point_to_cell(const LocalPoint& p, const HexGridConfig& cfg);
LocalPoint cell_center(const CellId& c, const HexGridConfig& cfg);

// Axial direction offsets, in the fixed order used by neighbors().
inline constexpr std::array<std::array<int, 2>, 6> kHexDirections{{
    {+1, 0}, {+1, -1}, {0, -1}, {-1, 0}, {-1, +1}, {0, +1}}};

std::array<CellId, 6> neighbors(const CellId& c);
bool are_adjacent(const CellId& a, const CellId& b);
int hex_distance(const CellId& a, const CellId& b);
// All cells within `radius` steps of `center`, in ring order starting at center.
std::vector<CellId> cells_within(const CellId& center, int radius);

// Hexagon area for the configured edge length, km^2.
double cell_area_km2(const HexGridConfig& cfg);

}  // namespace hexlink
