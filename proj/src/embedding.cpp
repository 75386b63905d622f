#include "hexlink/embedding.hpp"

#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink {

using num::Param;
using num::ParamStore;
using num::Tensor2;
using num::Var;

Vocab::Vocab(std::vector<CellId> cells) : cells_(std::move(cells)) {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (!token_.emplace(cells_[i].key(), static_cast<long>(i) + kFirstCellToken).second) {
      throw VocabError("duplicate cell in vocabulary");
    }
  }
}

long Vocab::token_of(const CellId& c) const {
  auto it = token_.find(c.key());
  if (it == token_.end()) {
    throw VocabError("cell (" + std::to_string(c.q) + ", " + std::to_string(c.r) + ") is not in the vocabulary");
  }
  return it->second;
}

CellId Vocab::cell_of(long token) const {
  if (is_special(token) || token >= static_cast<long>(size())) {
    throw VocabError("token " + std::to_string(token) + " is not a cell token");
  }
  return cells_[static_cast<std::size_t>(token - kFirstCellToken)];
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json keys = nlohmann::json::array();
  for (const auto& c : cells_) keys.push_back(c.key());
  return {{"cells", keys}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  std::vector<CellId> cells;
  for (const auto& k : j.at("cells")) cells.push_back(CellId::from_key(k.get<std::uint64_t>()));
  return Vocab(std::move(cells));
}

PoiVocab PoiVocab::from_flows(std::span<const MobilityFlow> flows) {
  PoiVocab v;
  for (const auto& f : flows) {
    for (const auto& id : f.poi_ids) {
      if (!id.empty()) v.index_.emplace(id, 0);
    }
  }
  for (auto& [id, idx] : v.index_) {
    v.ids_.push_back(id);
    idx = static_cast<long>(v.ids_.size());
  }
  return v;
}

long PoiVocab::index_of(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? 0 : it->second;
}

nlohmann::json PoiVocab::to_json() const { return {{"ids", ids_}}; }

PoiVocab PoiVocab::from_json(const nlohmann::json& j) {
  PoiVocab v;
  v.ids_ = j.at("ids").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < v.ids_.size(); ++i) v.index_[v.ids_[i]] = static_cast<long>(i) + 1;
  return v;
}

EncodedSequence encode_flow(const MobilityFlow& flow, const Vocab& vocab, const PoiVocab* pois, bool use_time,
                            std::size_t max_cells) {
  if (flow.cells.empty()) throw EmptyTrajectoryError("flow '" + flow.trajectory_id + "' has no cells");
  const std::size_t n = std::min(flow.cells.size(), max_cells);
  EncodedSequence seq;
  seq.tokens.reserve(n + 1);
  seq.tokens.push_back(kClsToken);
  for (std::size_t i = 0; i < n; ++i) seq.tokens.push_back(vocab.token_of(flow.cells[i]));
  if (pois != nullptr && !pois->empty()) {
    seq.poi.assign(n + 1, 0);
    if (!flow.poi_ids.empty()) {
      for (std::size_t i = 0; i < n; ++i) seq.poi[i + 1] = pois->index_of(flow.poi_ids[i]);
    }
  }
  if (use_time) {
    // Flows without timestamps fall back to the cell index as a time axis.
    seq.times.assign(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      seq.times[i + 1] = flow.times.empty() ? static_cast<double>(i) : flow.times[i];
    }
  }
  return seq;
}

std::vector<double> initial_time_frequencies(std::size_t d_model) {
  std::vector<double> w(d_model / 2);
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d_model));
  }
  return w;
}

std::vector<double> temporal_encode(double t, std::span<const double> freqs) {
  std::vector<double> z(2 * freqs.size());
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    z[2 * k] = std::sin(freqs[k] * t);
    z[2 * k + 1] = std::cos(freqs[k] * t);
  }
  return z;
}

namespace {

void check_dims(const EmbeddingDims& d) {
  if (d.d_model == 0 || d.d_model % 2 != 0) throw ConfigError("embedding size must be positive and even");
  if (d.d_gcn == 0) throw ConfigError("GCN embedding size must be positive");
  if (d.gcn_layers < 1) throw ConfigError("at least one GCN layer is required");
  if (d.vocab_size <= static_cast<std::size_t>(kFirstCellToken) || d.n_nodes == 0) {
    throw ConfigError("vocabulary has no cells");
  }
}

std::string gcn_weight_name(std::size_t l) { return "emb.gcn_w" + std::to_string(l); }

}  // namespace

EmbeddingTables EmbeddingTables::create(ParamStore& store, const EmbeddingDims& dims, std::mt19937_64& rng) {
  check_dims(dims);
  const double d_scale = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
  EmbeddingTables t;
  t.cell_table = &store.add("emb.cell", num::init_normal(dims.vocab_size, dims.d_model, d_scale, rng));
  if (dims.n_pois > 0) {
    t.poi_table = &store.add("emb.poi", num::init_normal(dims.n_pois, dims.d_model, d_scale, rng));
  }
  t.gcn_node_emb = &store.add("emb.gcn_h0", num::init_normal(dims.n_nodes, dims.d_gcn,
                                                             1.0 / std::sqrt(static_cast<double>(dims.d_gcn)), rng));
  for (std::size_t l = 0; l < dims.gcn_layers; ++l) {
    t.gcn_weights.push_back(&store.add(gcn_weight_name(l), num::init_glorot(dims.d_gcn, dims.d_gcn, rng)));
  }
  t.gcn_out_proj = &store.add("emb.gcn_proj", num::init_glorot(dims.d_gcn, dims.d_model, rng));
  if (dims.use_time) {
    const auto w = initial_time_frequencies(dims.d_model);
    t.time_freqs = &store.add("emb.time_freq", Tensor2(1, w.size(), w));
  }
  return t;
}

EmbeddingTables EmbeddingTables::attach(ParamStore& store, const EmbeddingDims& dims) {
  check_dims(dims);
  auto get = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Param& p = store.get(name);
    if (p.value().rows() != rows || p.value().cols() != cols) {
      throw ShapeError("parameter " + name + " has shape " + p.value().shape_str() + ", expected " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
    return &p;
  };
  EmbeddingTables t;
  t.cell_table = get("emb.cell", dims.vocab_size, dims.d_model);
  if (dims.n_pois > 0) t.poi_table = get("emb.poi", dims.n_pois, dims.d_model);
  t.gcn_node_emb = get("emb.gcn_h0", dims.n_nodes, dims.d_gcn);
  for (std::size_t l = 0; l < dims.gcn_layers; ++l) t.gcn_weights.push_back(get(gcn_weight_name(l), dims.d_gcn, dims.d_gcn));
  t.gcn_out_proj = get("emb.gcn_proj", dims.d_gcn, dims.d_model);
  if (dims.use_time) t.time_freqs = get("emb.time_freq", 1, dims.d_model / 2);
  return t;
}

EmbeddingVars EmbeddingVars::bind(num::Tape& tape, const EmbeddingTables& tables) {
  EmbeddingVars v;
  v.cell_table = tape.param(*tables.cell_table);
  if (tables.poi_table) v.poi_table = tape.param(*tables.poi_table);
  v.gcn_node_emb = tape.param(*tables.gcn_node_emb);
  for (Param* w : tables.gcn_weights) v.gcn_weights.push_back(tape.param(*w));
  v.gcn_out_proj = tape.param(*tables.gcn_out_proj);
  if (tables.time_freqs) v.time_freqs = tape.param(*tables.time_freqs);
  return v;
}

Var gcn_forward(const num::SparseMatrix& a_sym, const EmbeddingVars& vars) {
  if (a_sym.rows() != vars.gcn_node_emb.rows()) {
    throw ShapeError("graph has " + std::to_string(a_sym.rows()) + " nodes but the GCN table has " +
                     std::to_string(vars.gcn_node_emb.rows()));
  }
  Var h = vars.gcn_node_emb;
  for (const Var& w : vars.gcn_weights) h = num::relu(num::spmm(a_sym, num::matmul(h, w)));
  return num::matmul(h, vars.gcn_out_proj);
}

Var gcn_forward(const TrajGraph& graph, const EmbeddingVars& vars) { return gcn_forward(graph.a_sym(), vars); }

TokenEmbeddings embed_sequence(const EncodedSequence& seq, const EmbeddingVars& vars, Var node_spatial) {
  const long vocab = static_cast<long>(vars.cell_table.rows());
  std::vector<long> nodes(seq.tokens.size());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const long tok = seq.tokens[i];
    if (tok < 0 || tok >= vocab) throw VocabError("token " + std::to_string(tok) + " outside vocabulary");
    nodes[i] = Vocab::node_of(tok);
  }
  TokenEmbeddings out;
  out.r_id = num::gather_rows(vars.cell_table, seq.tokens);
  out.r_spatial = num::gather_rows(node_spatial, nodes);
  if (vars.poi_table && !seq.poi.empty()) {
    if (seq.poi.size() != seq.tokens.size()) throw ShapeError("POI channel length mismatch");
    out.r_poi = num::gather_rows(*vars.poi_table, seq.poi);
  }
  if (vars.time_freqs && !seq.times.empty()) {
    if (seq.times.size() != seq.tokens.size()) throw ShapeError("time channel length mismatch");
    out.r_time = num::temporal_encoding(*vars.time_freqs, seq.times);
  }
  return out;
}

}  // namespace hexlink
