#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hexlink/mobility.hpp"

#include "json.hpp"

namespace hexlink {

// Flow file: one line per flow, `trajectory_id,user_id,key;key;...`, keys are
// CellId::key() in decimal. No header.
void write_flows(const std::filesystem::path& path, std::span<const MobilityFlow> flows);
std::vector<MobilityFlow> read_flows(const std::filesystem::path& path);

// Side-information companion of a flow file: JSON lines
// {"trajectory_id", "times": [...], "poi_ids": [...]}. Flows without side
// information are omitted.
void write_flow_side(const std::filesystem::path& path, std::span<const MobilityFlow> flows);
// Attaches side information to flows with a matching trajectory_id.
void read_flow_side(const std::filesystem::path& path, std::vector<MobilityFlow>& flows);

void write_checkins(const std::filesystem::path& path, std::span<const CheckInRecord> records);

nlohmann::json to_json(const SparsityReport& report);
nlohmann::json to_json(const HexGridConfig& cfg);
HexGridConfig grid_from_json(const nlohmann::json& j);

}  // namespace hexlink
