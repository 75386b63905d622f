#include "hexlink/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "hexlink/errors.hpp"

namespace hexlink {

void SynthSpec::validate() const {
  if (n_users < 2) throw SpecError("at least two users are required");
  if (trajectories_per_user == 0) throw SpecError("trajectories_per_user must be positive");
  if (explicit_anchors.empty() && anchors_per_user < 2) throw SpecError("at least two anchors per user are required");
  if (!explicit_anchors.empty()) {
    if (explicit_anchors.size() != n_users) throw SpecError("explicit anchors must list every user");
    for (const auto& a : explicit_anchors) {
      if (a.size() < 2) throw SpecError("at least two anchors per user are required");
    }
  }
  if (!(noise >= 0.0 && noise <= 1.0)) throw SpecError("noise must lie in [0, 1]");
  if (region_radius < 1) throw SpecError("region_radius must be at least 1");
  if (!(step_seconds > 0.0)) throw SpecError("step_seconds must be positive");
  if (!(jitter >= 0.0 && jitter <= 0.3)) throw SpecError("jitter must lie in [0, 0.3]");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"n_users", n_users},
          {"trajectories_per_user", trajectories_per_user},
          {"anchors_per_user", anchors_per_user},
          {"noise", noise},
          {"seed", seed},
          {"region_radius", region_radius},
          {"step_seconds", step_seconds},
          {"jitter", jitter},
          {"start_time", start_time}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j, const SynthSpec& base) {
  SynthSpec s = base;
  try {
    s.n_users = j.value("n_users", s.n_users);
    s.trajectories_per_user = j.value("trajectories_per_user", s.trajectories_per_user);
    s.anchors_per_user = j.value("anchors_per_user", s.anchors_per_user);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    s.region_radius = j.value("region_radius", s.region_radius);
    s.step_seconds = j.value("step_seconds", s.step_seconds);
    s.jitter = j.value("jitter", s.jitter);
    s.start_time = j.value("start_time", s.start_time);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("bad synth config: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

std::string user_name(std::size_t u, std::size_t n_users) {
  const std::size_t width = std::to_string(n_users - 1).size();
  std::string digits = std::to_string(u);
  return "user_" + std::string(width - digits.size(), '0') + digits;
}

std::string location_name(const CellId& c) { return "loc_" + std::to_string(c.q) + "_" + std::to_string(c.r); }

// First neighbor (in direction order) that gets closer to `to`.
CellId step_toward(const CellId& from, const CellId& to) {
  const int d = hex_distance(from, to);
  for (const CellId& n : neighbors(from)) {
    if (hex_distance(n, to) < d) return n;
  }
  return from;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthSpec& spec, const HexGridConfig& grid) {
  spec.validate();
  grid.validate();
  std::mt19937_64 rng(spec.seed);
  SynthCorpus out;
  out.grid = grid;

  const CellId origin = point_to_cell({0.0, 0.0}, grid);
  if (spec.explicit_anchors.empty()) {
    std::vector<CellId> pool = cells_within(origin, spec.region_radius);
    const std::size_t need = spec.n_users * spec.anchors_per_user;
    if (need > pool.size()) {
      throw SpecError(std::to_string(spec.n_users) + " users need " + std::to_string(need) +
                      " distinct anchors but the region holds " + std::to_string(pool.size()) + " cells");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t u = 0; u < spec.n_users; ++u) {
      const auto first = pool.begin() + static_cast<long>(u * spec.anchors_per_user);
      out.anchors.emplace_back(first, first + static_cast<long>(spec.anchors_per_user));
    }
  } else {
    out.anchors = spec.explicit_anchors;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> direction(0, 5);
  const double jitter_m = spec.jitter * grid.edge_length_m;

  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::string user = user_name(u, spec.n_users);
    const auto& anchors = out.anchors[u];
    for (std::size_t k = 0; k < spec.trajectories_per_user; ++k) {
      MobilityFlow flow;
      flow.trajectory_id = user + "#" + std::to_string(k);
      flow.user_id = user;
      std::vector<bool> at_anchor;
      CellId cur = anchors.front();
      flow.cells.push_back(cur);
      at_anchor.push_back(true);
      for (std::size_t a = 1; a < anchors.size(); ++a) {
        const CellId target = anchors[a];
        // Bounded so that heavy noise cannot stall the walk.
        const int budget = 4 * hex_distance(cur, target) + 16;
        for (int s = 0; s < budget && cur != target; ++s) {
          CellId next = step_toward(cur, target);
          if (spec.noise > 0.0 && unit(rng) < spec.noise) next = neighbors(cur)[direction(rng)];
          cur = next;
          flow.cells.push_back(cur);
          at_anchor.push_back(false);
        }
        if (cur != target) {
          // Budget exhausted: finish greedily.
          while (cur != target) {
            cur = step_toward(cur, target);
            flow.cells.push_back(cur);
            at_anchor.push_back(false);
          }
        }
        at_anchor.back() = true;
      }

      const std::int64_t t0 = spec.start_time +
                              static_cast<std::int64_t>(u * spec.trajectories_per_user + k) * 86'400;
      for (std::size_t i = 0; i < flow.cells.size(); ++i) {
        const double t = spec.step_seconds * static_cast<double>(i);
        const std::string poi = at_anchor[i] ? location_name(flow.cells[i]) : std::string();
        flow.times.push_back(t);
        flow.poi_ids.push_back(poi);

        const LocalPoint c = cell_center(flow.cells[i], grid);
        const double radius = jitter_m * std::sqrt(unit(rng));
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const GeoPoint g = unproject({c.x + radius * std::cos(angle), c.y + radius * std::sin(angle)}, grid);
        out.records.push_back({user, poi, t0 + static_cast<std::int64_t>(std::llround(t)), g.lat, g.lon});
      }
      for (std::size_t i = 0; i + 1 < flow.cells.size(); ++i) {
        if (!are_adjacent(flow.cells[i], flow.cells[i + 1])) flow.gaps.push_back(i);
      }
      out.flows.push_back(std::move(flow));
    }
  }
  return out;
}

}  // namespace hexlink
