#include "hexlink/trajgraph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hexlink/errors.hpp"

namespace hexlink {

using num::SparseMatrix;
using num::Triplet;

NeighborSets build_neighbor_sets(std::span<const MobilityFlow> flows) {
  if (flows.empty()) throw EmptyCorpusError("graph construction needs at least one flow");

  std::vector<std::uint64_t> keys;
  for (const auto& f : flows) {
    for (const auto& c : f.cells) keys.push_back(c.key());
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.empty()) throw EmptyCorpusError("flows contain no cells");

  std::unordered_map<std::uint64_t, std::size_t> index;
  NeighborSets sets;
  sets.nodes.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    sets.nodes.push_back(CellId::from_key(keys[i]));
    index[keys[i]] = i;
  }

  sets.n_obs.resize(keys.size());
  for (const auto& f : flows) {
    for (std::size_t k = 0; k + 1 < f.cells.size(); ++k) {
      const std::size_t i = index.at(f.cells[k].key());
      const std::size_t j = index.at(f.cells[k + 1].key());
      if (i != j) ++sets.n_obs[i][j];
    }
  }

  sets.n_geo.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (const CellId& n : neighbors(sets.nodes[i])) {
      auto it = index.find(n.key());
      if (it != index.end()) sets.n_geo[i].push_back(it->second);
    }
    std::sort(sets.n_geo[i].begin(), sets.n_geo[i].end());
  }
  return sets;
}

SparseMatrix raw_weights(const NeighborSets& sets) {
  const std::size_t n = sets.nodes.size();
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, count] : sets.n_obs[i]) t.push_back({i, j, static_cast<double>(count)});
    for (std::size_t j : sets.n_geo[i]) {
      if (sets.n_obs[i].count(j) == 0) t.push_back({i, j, 1.0});
    }
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

SparseMatrix row_normalize(const SparseMatrix& raw) {
  std::vector<Triplet> t;
  t.reserve(raw.nnz());
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const double sum = raw.row_sum(r);
    if (!(sum > 0.0)) continue;
    for (std::size_t k = raw.row_begin(r); k < raw.row_end(r); ++k) {
      t.push_back({r, raw.col_index(k), raw.value(k) / sum});
    }
  }
  return SparseMatrix::from_triplets(raw.rows(), raw.cols(), std::move(t));
}

SparseMatrix symmetric_normalize(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("symmetric normalization needs a square matrix");
  const std::size_t n = a.rows();
  std::vector<Triplet> t;
  t.reserve(2 * a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  for (const auto& e : a.triplets()) {
    t.push_back({e.row, e.col, 0.5 * e.value});
    t.push_back({e.col, e.row, 0.5 * e.value});
  }
  const SparseMatrix b = SparseMatrix::from_triplets(n, n, std::move(t));

  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(b.row_sum(i));
  std::vector<Triplet> out;
  out.reserve(b.nnz());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = b.row_begin(r); k < b.row_end(r); ++k) {
      const std::size_t c = b.col_index(k);
      // inv_sqrt[r] * inv_sqrt[c] commutes exactly, so the result is bit-symmetric.
      out.push_back({r, c, b.value(k) * (inv_sqrt[r] * inv_sqrt[c])});
    }
  }
  return SparseMatrix::from_triplets(n, n, std::move(out));
}

TrajGraph TrajGraph::build(std::span<const MobilityFlow> flows) {
  TrajGraph g;
  g.sets_ = build_neighbor_sets(flows);
  for (std::size_t i = 0; i < g.sets_.nodes.size(); ++i) g.index_[g.sets_.nodes[i].key()] = i;
  g.raw_ = raw_weights(g.sets_);
  g.a_ = row_normalize(g.raw_);
  g.a_sym_ = symmetric_normalize(g.a_);
  return g;
}

std::optional<std::size_t> TrajGraph::node_of(const CellId& c) const {
  auto it = index_.find(c.key());
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json TrajGraph::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& c : sets_.nodes) nodes.push_back(c.key());
  std::set<std::pair<std::size_t, std::size_t>> support;
  for (const auto* m : {&raw_, &a_, &a_sym_}) {
    for (const auto& e : m->triplets()) support.emplace(e.row, e.col);
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [i, j] : support) {
    edges.push_back({{"i", i}, {"j", j}, {"raw", raw_.at(i, j)}, {"a", a_.at(i, j)}, {"a_sym", a_sym_.at(i, j)}});
  }
  return {{"nodes", nodes}, {"edges", edges}};
}

}  // namespace hexlink
