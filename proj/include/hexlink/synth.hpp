#pragma once

#include <cstdint>
#include <vector>

#include "hexlink/hexgrid.hpp"
#include "hexlink/mobility.hpp"

#include "json.hpp"

namespace hexlink {

struct SynthSpec {
  std::size_t n_users = 10;
  std::size_t trajectories_per_user = 30;
  std::size_t anchors_per_user = 4;
  // Probability that a walk step goes to a random neighbor instead of toward the next anchor.
  double noise = 0.1;
  std::uint64_t seed = 1;
  // Anchors are drawn from the hexagons within this distance of the origin cell.
  int region_radius = 8;
  double step_seconds = 60.0;
  // GPS jitter radius as a fraction of the edge length; at most 0.3.
  double jitter = 0.2;
  std::int64_t start_time = 1'700'000'000;
  // When non-empty, user u tours explicit_anchors[u] instead of drawn anchors.
  std::vector<std::vector<CellId>> explicit_anchors;

  // Throws SpecError.
  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j, const SynthSpec& base);
};

struct SynthCorpus {
  HexGridConfig grid;
  std::vector<std::vector<CellId>> anchors;  // per user
  // One record per visited cell; anchor visits carry a location id.
  std::vector<CheckInRecord> records;
  // Cell walks as generated, with per-cell times and POIs.
  std::vector<MobilityFlow> flows;
};

// User ids are "user_<index>" zero-padded so lexicographic order is index order.
// Throws SpecError when the region cannot hold n_users * anchors_per_user distinct anchors.
SynthCorpus generate_synthetic(const SynthSpec& spec, const HexGridConfig& grid);

}  // namespace hexlink
