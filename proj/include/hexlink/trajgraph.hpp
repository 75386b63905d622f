#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hexlink/hexgrid.hpp"
#include "hexlink/mobility.hpp"
#include "hexlink/num/sparse.hpp"

#include "json.hpp"

namespace hexlink {

struct NeighborSets {
  // Distinct corpus cells, ascending by CellId::key(); index = node id.
  std::vector<CellId> nodes;
  // Observed successors with transition counts, per node.
  std::vector<std::map<std::size_t, std::size_t>> n_obs;
  // Hex neighbors that are themselves nodes, ascending node id.
  std::vector<std::vector<std::size_t>> n_geo;
};

// Cells and transitions of a flow corpus. Throws EmptyCorpusError on no flows.
NeighborSets build_neighbor_sets(std::span<const MobilityFlow> flows);

// Count(i, j) for observed successors, 1 for geometric-only neighbors, no diagonal.
num::SparseMatrix raw_weights(const NeighborSets& sets);
// Rows with positive sum scaled to sum 1; empty rows stay empty.
num::SparseMatrix row_normalize(const num::SparseMatrix& raw);
// D^-1/2 B D^-1/2 with B = ((A + I) + (A + I)^T) / 2 and D the row sums of B.
num::SparseMatrix symmetric_normalize(const num::SparseMatrix& a);

class TrajGraph {
 public:
  static TrajGraph build(std::span<const MobilityFlow> flows);

  const std::vector<CellId>& nodes() const { return sets_.nodes; }
  const NeighborSets& neighbor_sets() const { return sets_; }
  std::size_t size() const { return sets_.nodes.size(); }
  std::optional<std::size_t> node_of(const CellId& c) const;

  const num::SparseMatrix& raw() const { return raw_; }
  const num::SparseMatrix& a() const { return a_; }
  const num::SparseMatrix& a_sym() const { return a_sym_; }

  // {"nodes": [keys], "edges": [{i, j, raw, a, a_sym}]} over the union of nonzeros.
  nlohmann::json to_json() const;

 private:
  NeighborSets sets_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  num::SparseMatrix raw_;
  num::SparseMatrix a_;
  num::SparseMatrix a_sym_;
};

}  // namespace hexlink
