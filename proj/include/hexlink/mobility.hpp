#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hexlink/hexgrid.hpp"

namespace hexlink {

struct CheckInRecord {
  std::string user_id;
  std::string location_id;  // empty for raw GPS fixes
  std::int64_t timestamp = 0;
  double lat = 0.0;
  double lon = 0.0;
};

struct Trajectory {
  std::string trajectory_id;
  std::string user_id;
  std::vector<CheckInRecord> records;  // timestamp non-decreasing
};

enum class FlowMode { Checkin, Continuous };
enum class SourceKind { CheckinInterpolated, Continuous };

// Ordered hex cells traversed by one trajectory. `times` and `poi_ids` are
// per-cell side information; they are empty when the source carries none.
struct MobilityFlow {
  std::string trajectory_id;
  std::string user_id;
  std::vector<CellId> cells;
  SourceKind source_kind = SourceKind::CheckinInterpolated;
  // Seconds since the trajectory's first record.
  std::vector<double> times;
  // Location id of the check-in that produced the cell, empty for inferred cells.
  std::vector<std::string> poi_ids;
  // Indices i where cells[i] and cells[i + 1] are not hex-adjacent.
  std::vector<std::size_t> gaps;
};

struct CsvSchema {
  std::string user_id = "user_id";
  std::string location_id = "location_id";
  std::string timestamp = "timestamp";
  std::string lat = "lat";
  std::string lon = "lon";
};

struct LoadResult {
  std::vector<CheckInRecord> records;
  std::size_t rows_read = 0;
  std::size_t malformed = 0;
};

// Reads a headered CSV of check-ins. Rows that fail to parse or fall outside
// the coordinate domain are skipped and counted.
LoadResult load_checkins(const std::filesystem::path& path, const CsvSchema& schema = {});

inline constexpr double kCheckinGapSeconds = 6.0 * 3600.0;
inline constexpr double kContinuousGapSeconds = 600.0;
inline constexpr std::size_t kDefaultMinTrajectoryLength = 3;

// Groups records per user (users in lexicographic order), sorts by time and
// splits wherever consecutive records are more than gap_threshold_s apart.
// Pieces shorter than min_len are dropped. Ids are "<user>#<k>" with k
// counting kept trajectories.
std::vector<Trajectory> build_trajectories(std::span<const CheckInRecord> records,
                                           double gap_threshold_s,
                                           std::size_t min_len = kDefaultMinTrajectoryLength);

// Evenly spaced points from a to b (both included) with spacing <= step_m.
std::vector<LocalPoint> interpolate_route(const LocalPoint& a, const LocalPoint& b, double step_m);

struct CellCrossing {
  CellId cell;
  double t_enter = 0.0;  // segment parameter in [0, 1]
  double t_exit = 0.0;
};

// Exact walk of the segment ab through the hexagons it crosses.
std::vector<CellCrossing> traverse_segment(const LocalPoint& a, const LocalPoint& b,
                                           const HexGridConfig& cfg);

// Cells crossed by segment ab, in order; first is point_to_cell(a), last is
// point_to_cell(b).
std::vector<CellId> cells_on_segment(const LocalPoint& a, const LocalPoint& b,
                                     const HexGridConfig& cfg);

MobilityFlow to_flow(const Trajectory& tr, const HexGridConfig& cfg, FlowMode mode);

struct SparsityReport {
  std::size_t n_users = 0;
  std::size_t n_locations = 0;
  std::size_t n_cells = 0;
  double loc_matrix_sparsity = 0.0;
  double cell_matrix_sparsity = 0.0;
};

// User x location and user x cell visit-indicator sparsity. Records with an
// empty location_id do not count as location visits.
SparsityReport sparsity_report(std::span<const Trajectory> trajectories, const HexGridConfig& cfg);
// Same statistic over flows: cells are the flow cells, locations the non-empty poi_ids.
SparsityReport sparsity_report(std::span<const MobilityFlow> flows);

// Grid config whose origin is the bounding-box centroid of the records.
HexGridConfig grid_for_records(std::span<const CheckInRecord> records, Resolution res,
                               double custom_edge_m = 0.0);

}  // namespace hexlink
