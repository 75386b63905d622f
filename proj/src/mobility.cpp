#include "hexlink/mobility.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

#include "hexlink/errors.hpp"
#include "csv.hpp"

namespace hexlink {

namespace {

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first == last) return false;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

LocalPoint lerp(const LocalPoint& a, const LocalPoint& b, double t) {
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

void fill_gaps(MobilityFlow& flow) {
  flow.gaps.clear();
  for (std::size_t i = 0; i + 1 < flow.cells.size(); ++i) {
    if (!are_adjacent(flow.cells[i], flow.cells[i + 1])) flow.gaps.push_back(i);
  }
}

double sparsity(std::size_t nnz, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) return 0.0;
  const double total = static_cast<double>(rows) * static_cast<double>(cols);
  return (total - static_cast<double>(nnz)) / total;
}

}  // namespace

LoadResult load_checkins(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  LoadResult result;
  std::string line;
  if (!std::getline(in, line)) return result;
  const auto header = csv::split_line(line);
  const std::size_t i_user = column_index(header, schema.user_id);
  const std::size_t i_loc = column_index(header, schema.location_id);
  const std::size_t i_time = column_index(header, schema.timestamp);
  const std::size_t i_lat = column_index(header, schema.lat);
  const std::size_t i_lon = column_index(header, schema.lon);
  const std::size_t needed = std::max({i_user, i_loc, i_time, i_lat, i_lon}) + 1;

  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++result.rows_read;
    const auto fields = csv::split_line(line);
    CheckInRecord rec;
    bool ok = fields.size() >= needed;
    if (ok) {
      rec.user_id = fields[i_user];
      rec.location_id = fields[i_loc];
      ok = !rec.user_id.empty() && parse_number(fields[i_time], rec.timestamp) &&
           parse_number(fields[i_lat], rec.lat) && parse_number(fields[i_lon], rec.lon) &&
           rec.timestamp >= 0 && std::abs(rec.lat) <= 90.0 && std::abs(rec.lon) <= 180.0;
    }
    if (ok) {
      result.records.push_back(std::move(rec));
    } else {
      ++result.malformed;
    }
  }
  if (result.rows_read > 0 && 2 * result.malformed > result.rows_read) {
    throw DataQualityError(std::to_string(result.malformed) + " of " +
                           std::to_string(result.rows_read) + " rows in '" + path.string() +
                           "' are malformed");
  }
  return result;
}

std::vector<Trajectory> build_trajectories(std::span<const CheckInRecord> records,
                                           double gap_threshold_s, std::size_t min_len) {
  if (!(gap_threshold_s > 0.0)) throw ConfigError("gap threshold must be positive");
  if (min_len < 1) throw ConfigError("minimum trajectory length must be at least 1");

  std::map<std::string, std::vector<CheckInRecord>> by_user;
  for (const auto& rec : records) by_user[rec.user_id].push_back(rec);

  std::vector<Trajectory> out;
  for (auto& [user, recs] : by_user) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const CheckInRecord& a, const CheckInRecord& b) { return a.timestamp < b.timestamp; });
    std::size_t kept = 0;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= recs.size(); ++i) {
      const bool split = i == recs.size() ||
                         static_cast<double>(recs[i].timestamp - recs[i - 1].timestamp) > gap_threshold_s;
      if (!split) continue;
      if (i - start >= min_len) {
        Trajectory tr;
        tr.user_id = user;
        tr.trajectory_id = user + "#" + std::to_string(kept++);
        tr.records.assign(recs.begin() + static_cast<std::ptrdiff_t>(start),
                          recs.begin() + static_cast<std::ptrdiff_t>(i));
        out.push_back(std::move(tr));
      }
      start = i;
    }
  }
  return out;
}

std::vector<LocalPoint> interpolate_route(const LocalPoint& a, const LocalPoint& b, double step_m) {
  if (!(step_m > 0.0)) throw ConfigError("interpolation step must be positive");
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  if (len == 0.0) return {a};
  const auto n = static_cast<std::size_t>(std::ceil(len / step_m));
  std::vector<LocalPoint> pts;
  pts.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) pts.push_back(lerp(a, b, static_cast<double>(i) / static_cast<double>(n)));
  pts.push_back(b);
  return pts;
}

std::vector<CellCrossing> traverse_segment(const LocalPoint& a, const LocalPoint& b,
                                           const HexGridConfig& cfg) {
  CellId cur = point_to_cell(a, cfg);
  const CellId last = point_to_cell(b, cfg);
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  if (dx == 0.0 && dy == 0.0) return {{cur, 0.0, 1.0}};

  std::vector<CellCrossing> out;
  double t = 0.0;
  const double len = std::hypot(dx, dy);
  const std::size_t max_steps = static_cast<std::size_t>(4.0 * len / cfg.edge_length_m) + 16;
  for (std::size_t step = 0; step < max_steps; ++step) {
    // The cell is the set of points closer to its center than to any neighbor
    // center; leave through the first bisector the segment crosses.
    const LocalPoint cc = cell_center(cur, cfg);
    const double ax = a.x - cc.x;
    const double ay = a.y - cc.y;
    double t_exit = std::numeric_limits<double>::infinity();
    CellId next = cur;
    for (const CellId& n : neighbors(cur)) {
      const LocalPoint cn = cell_center(n, cfg);
      const double ux = cn.x - cc.x;
      const double uy = cn.y - cc.y;
      const double rate = dx * ux + dy * uy;
      if (rate <= 0.0) continue;
      const double tn = (0.5 * (ux * ux + uy * uy) - (ax * ux + ay * uy)) / rate;
      if (tn < t_exit) {
        t_exit = tn;
        next = n;
      }
    }
    t_exit = std::max(t_exit, t);
    if (t_exit >= 1.0 || cur == last) {
      out.push_back({cur, t, 1.0});
      break;
    }
    out.push_back({cur, t, t_exit});
    cur = next;
    t = t_exit;
  }
  // b sitting exactly on a cell boundary may round into the neighbor.
  if (out.empty() || out.back().cell != last) out.push_back({last, 1.0, 1.0});
  return out;
}

std::vector<CellId> cells_on_segment(const LocalPoint& a, const LocalPoint& b,
                                     const HexGridConfig& cfg) {
  std::vector<CellId> cells;
  for (const auto& crossing : traverse_segment(a, b, cfg)) {
    if (cells.empty() || cells.back() != crossing.cell) cells.push_back(crossing.cell);
  }
  return cells;
}

MobilityFlow to_flow(const Trajectory& tr, const HexGridConfig& cfg, FlowMode mode) {
  if (tr.records.empty()) throw EmptyTrajectoryError("trajectory '" + tr.trajectory_id + "' is empty");

  MobilityFlow flow;
  flow.trajectory_id = tr.trajectory_id;
  flow.user_id = tr.user_id;
  std::vector<LocalPoint> pts;
  pts.reserve(tr.records.size());
  for (const auto& rec : tr.records) pts.push_back(project(rec.lat, rec.lon, cfg));

  if (mode == FlowMode::Continuous) {
    flow.source_kind = SourceKind::Continuous;
    for (const auto& p : pts) {
      const CellId c = point_to_cell(p, cfg);
      if (flow.cells.empty() || flow.cells.back() != c) flow.cells.push_back(c);
    }
    fill_gaps(flow);
    return flow;
  }

  flow.source_kind = SourceKind::CheckinInterpolated;
  const auto t0 = static_cast<double>(tr.records.front().timestamp);
  auto append = [&flow](const CellId& c, double time, const std::string& poi) {
    if (!flow.cells.empty() && flow.cells.back() == c) {
      if (flow.poi_ids.back().empty()) flow.poi_ids.back() = poi;
      return;
    }
    flow.cells.push_back(c);
    flow.times.push_back(time);
    flow.poi_ids.push_back(poi);
  };

  append(point_to_cell(pts[0], cfg), 0.0, tr.records[0].location_id);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double ta = static_cast<double>(tr.records[i].timestamp) - t0;
    const double tb = static_cast<double>(tr.records[i + 1].timestamp) - t0;
    const auto crossings = traverse_segment(pts[i], pts[i + 1], cfg);
    for (std::size_t k = 0; k < crossings.size(); ++k) {
      const bool arrival = k + 1 == crossings.size();
      append(crossings[k].cell, ta + crossings[k].t_enter * (tb - ta),
             arrival ? tr.records[i + 1].location_id : std::string());
    }
  }
  fill_gaps(flow);
  return flow;
}

SparsityReport sparsity_report(std::span<const Trajectory> trajectories, const HexGridConfig& cfg) {
  if (trajectories.empty()) throw EmptyCorpusError("sparsity report needs at least one trajectory");
  std::set<std::string> users;
  std::set<std::string> locations;
  std::set<CellId> cells;
  std::set<std::pair<std::string, std::string>> user_loc;
  std::set<std::pair<std::string, CellId>> user_cell;
  for (const auto& tr : trajectories) {
    users.insert(tr.user_id);
    for (const auto& rec : tr.records) {
      const CellId c = point_to_cell(project(rec.lat, rec.lon, cfg), cfg);
      cells.insert(c);
      user_cell.emplace(tr.user_id, c);
      if (!rec.location_id.empty()) {
        locations.insert(rec.location_id);
        user_loc.emplace(tr.user_id, rec.location_id);
      }
    }
  }
  return {users.size(), locations.size(), cells.size(),
          sparsity(user_loc.size(), users.size(), locations.size()),
          sparsity(user_cell.size(), users.size(), cells.size())};
}

SparsityReport sparsity_report(std::span<const MobilityFlow> flows) {
  if (flows.empty()) throw EmptyCorpusError("sparsity report needs at least one flow");
  std::set<std::string> users;
  std::set<std::string> locations;
  std::set<CellId> cells;
  std::set<std::pair<std::string, std::string>> user_loc;
  std::set<std::pair<std::string, CellId>> user_cell;
  for (const auto& f : flows) {
    users.insert(f.user_id);
    for (const auto& c : f.cells) {
      cells.insert(c);
      user_cell.emplace(f.user_id, c);
    }
    for (const auto& poi : f.poi_ids) {
      if (poi.empty()) continue;
      locations.insert(poi);
      user_loc.emplace(f.user_id, poi);
    }
  }
  return {users.size(), locations.size(), cells.size(),
          sparsity(user_loc.size(), users.size(), locations.size()),
          sparsity(user_cell.size(), users.size(), cells.size())};
}

HexGridConfig grid_for_records(std::span<const CheckInRecord> records, Resolution res,
                               double custom_edge_m) {
  if (records.empty()) throw EmptyCorpusError("cannot place a grid over zero records");
  double lat_lo = records[0].lat, lat_hi = records[0].lat;
  double lon_lo = records[0].lon, lon_hi = records[0].lon;
  for (const auto& rec : records) {
    lat_lo = std::min(lat_lo, rec.lat);
    lat_hi = std::max(lat_hi, rec.lat);
    lon_lo = std::min(lon_lo, rec.lon);
    lon_hi = std::max(lon_hi, rec.lon);
  }
  const double lat = 0.5 * (lat_lo + lat_hi);
  const double lon = 0.5 * (lon_lo + lon_hi);
  if (res == Resolution::Custom) return HexGridConfig::custom(custom_edge_m, lat, lon);
  return HexGridConfig::at_resolution(res, lat, lon);
}

}  // namespace hexlink
