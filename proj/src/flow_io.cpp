#include "hexlink/flow_io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "csv.hpp"
#include "hexlink/errors.hpp"

namespace hexlink {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

void write_flows(const std::filesystem::path& path, std::span<const MobilityFlow> flows) {
  auto out = open_out(path);
  for (const auto& f : flows) {
    out << csv::quote(f.trajectory_id) << ',' << csv::quote(f.user_id) << ',';
    for (std::size_t i = 0; i < f.cells.size(); ++i) {
      if (i) out << ';';
      out << f.cells[i].key();
    }
    out << '\n';
  }
}

std::vector<MobilityFlow> read_flows(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<MobilityFlow> flows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != 3) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    }
    MobilityFlow f;
    f.trajectory_id = fields[0];
    f.user_id = fields[1];
    std::string_view keys = fields[2];
    while (!keys.empty()) {
      const auto sep = keys.find(';');
      const auto tok = keys.substr(0, sep);
      std::uint64_t key = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), key);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad cell key '" +
                          std::string(tok) + "'");
      }
      f.cells.push_back(CellId::from_key(key));
      keys = sep == std::string_view::npos ? std::string_view{} : keys.substr(sep + 1);
    }
    if (f.cells.empty()) {
      throw EmptyTrajectoryError(path.string() + ":" + std::to_string(line_no) + ": flow has no cells");
    }
    for (std::size_t i = 0; i + 1 < f.cells.size(); ++i) {
      if (!are_adjacent(f.cells[i], f.cells[i + 1])) f.gaps.push_back(i);
    }
    flows.push_back(std::move(f));
  }
  return flows;
}

void write_flow_side(const std::filesystem::path& path, std::span<const MobilityFlow> flows) {
  auto out = open_out(path);
  for (const auto& f : flows) {
    if (f.times.empty() && f.poi_ids.empty()) continue;
    nlohmann::json j;
    j["trajectory_id"] = f.trajectory_id;
    j["times"] = f.times;
    j["poi_ids"] = f.poi_ids;
    out << j.dump() << '\n';
  }
}

void read_flow_side(const std::filesystem::path& path, std::vector<MobilityFlow>& flows) {
  auto in = open_in(path);
  std::unordered_map<std::string, MobilityFlow*> by_id;
  for (auto& f : flows) by_id[f.trajectory_id] = &f;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("bad side-information line in '" + path.string() + "': " + e.what());
    }
    auto it = by_id.find(j.at("trajectory_id").get<std::string>());
    if (it == by_id.end()) continue;
    MobilityFlow& f = *it->second;
    f.times = j.at("times").get<std::vector<double>>();
    f.poi_ids = j.at("poi_ids").get<std::vector<std::string>>();
    if ((!f.times.empty() && f.times.size() != f.cells.size()) ||
        (!f.poi_ids.empty() && f.poi_ids.size() != f.cells.size())) {
      throw SchemaError("side information for '" + f.trajectory_id + "' does not match its cell count");
    }
  }
}

void write_checkins(const std::filesystem::path& path, std::span<const CheckInRecord> records) {
  auto out = open_out(path);
  out << "user_id,location_id,timestamp,lat,lon\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << csv::quote(r.user_id) << ',' << csv::quote(r.location_id) << ',' << r.timestamp << ','
        << r.lat << ',' << r.lon << '\n';
  }
}

nlohmann::json to_json(const SparsityReport& report) {
  return {{"n_users", report.n_users},
          {"n_locations", report.n_locations},
          {"n_cells", report.n_cells},
          {"loc_matrix_sparsity", report.loc_matrix_sparsity},
          {"cell_matrix_sparsity", report.cell_matrix_sparsity}};
}

nlohmann::json to_json(const HexGridConfig& cfg) {
  return {{"origin_lat", cfg.origin_lat},
          {"origin_lon", cfg.origin_lon},
          {"edge_length_m", cfg.edge_length_m},
          {"resolution", std::string(resolution_name(cfg.resolution))}};
}

HexGridConfig grid_from_json(const nlohmann::json& j) {
  try {
    HexGridConfig cfg;
    cfg.origin_lat = j.at("origin_lat").get<double>();
    cfg.origin_lon = j.at("origin_lon").get<double>();
    cfg.resolution = parse_resolution(j.value("resolution", std::string("custom")));
    if (j.contains("edge_length_m")) {
      cfg.edge_length_m = j.at("edge_length_m").get<double>();
    } else {
      cfg.edge_length_m = resolution_edge_m(cfg.resolution);
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad grid config: ") + e.what());
  }
}

}  // namespace hexlink
