#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hexlink/hexgrid.hpp"
#include "hexlink/mobility.hpp"
#include "hexlink/num/ops.hpp"
#include "hexlink/num/params.hpp"
#include "hexlink/trajgraph.hpp"

#include "json.hpp"

namespace hexlink {

inline constexpr long kPadToken = 0;
inline constexpr long kMaskToken = 1;
inline constexpr long kClsToken = 2;
inline constexpr long kFirstCellToken = 3;

// Cell tokens follow the graph node order: token = kFirstCellToken + node id.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<CellId> cells);

  std::size_t size() const { return cells_.size() + kFirstCellToken; }
  std::size_t cell_count() const { return cells_.size(); }
  // Throws VocabError for cells outside the vocabulary.
  long token_of(const CellId& c) const;
  CellId cell_of(long token) const;
  static bool is_special(long token) { return token < kFirstCellToken; }
  // Graph node id of a cell token, -1 for specials.
  static long node_of(long token) { return is_special(token) ? -1 : token - kFirstCellToken; }
  const std::vector<CellId>& cells() const { return cells_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::vector<CellId> cells_;
  std::unordered_map<std::uint64_t, long> token_;
};

// POI ids; index 0 stands for "no POI" (inferred cells, specials, masked tokens).
class PoiVocab {
 public:
  PoiVocab() = default;
  static PoiVocab from_flows(std::span<const MobilityFlow> flows);

  std::size_t size() const { return ids_.size() + 1; }
  bool empty() const { return ids_.empty(); }
  // 0 for empty or unknown ids.
  long index_of(const std::string& id) const;

  nlohmann::json to_json() const;
  static PoiVocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> ids_;
  std::map<std::string, long> index_;
};

// One tokenized flow. Position 0 is CLS.
struct EncodedSequence {
  std::vector<long> tokens;
  std::vector<long> poi;       // empty when the corpus has no POIs
  std::vector<double> times;   // empty when the corpus has no timestamps
  std::size_t length() const { return tokens.size(); }
};

// Prepends CLS and keeps at most max_cells cells. POI/time channels are
// filled only when the flow carries them and the flag is set.
EncodedSequence encode_flow(const MobilityFlow& flow, const Vocab& vocab, const PoiVocab* pois, bool use_time,
                            std::size_t max_cells);

struct EmbeddingDims {
  std::size_t vocab_size = 0;
  std::size_t n_nodes = 0;
  std::size_t n_pois = 0;  // 0: no POI table
  std::size_t d_model = 512;
  std::size_t d_gcn = 256;
  std::size_t gcn_layers = 1;
  bool use_time = true;
};

// Learnable tables of the spatial-temporal embedding layer, owned by a ParamStore.
struct EmbeddingTables {
  num::Param* cell_table = nullptr;      // vocab_size x d_model
  num::Param* poi_table = nullptr;       // n_pois x d_model, optional
  num::Param* gcn_node_emb = nullptr;    // n_nodes x d_gcn
  std::vector<num::Param*> gcn_weights;  // d_gcn x d_gcn each
  num::Param* gcn_out_proj = nullptr;    // d_gcn x d_model
  num::Param* time_freqs = nullptr;      // 1 x d_model/2, optional

  static EmbeddingTables create(num::ParamStore& store, const EmbeddingDims& dims, std::mt19937_64& rng);
  static EmbeddingTables attach(num::ParamStore& store, const EmbeddingDims& dims);
};

// Paired frequencies 1 / 10000^(2k / d_model), k = 0 .. d_model/2 - 1.
std::vector<double> initial_time_frequencies(std::size_t d_model);

// [sin(w_0 t), cos(w_0 t), sin(w_1 t), cos(w_1 t), ...]
std::vector<double> temporal_encode(double t, std::span<const double> freqs);

// Tables bound to one tape.
struct EmbeddingVars {
  num::Var cell_table;
  std::optional<num::Var> poi_table;
  num::Var gcn_node_emb;
  std::vector<num::Var> gcn_weights;
  num::Var gcn_out_proj;
  std::optional<num::Var> time_freqs;

  static EmbeddingVars bind(num::Tape& tape, const EmbeddingTables& tables);
};

// H <- ReLU(A_sym H W_l) for each layer, then H * out_proj: n_nodes x d_model.
num::Var gcn_forward(const TrajGraph& graph, const EmbeddingVars& vars);
num::Var gcn_forward(const num::SparseMatrix& a_sym, const EmbeddingVars& vars);

struct TokenEmbeddings {
  num::Var r_id;
  num::Var r_spatial;
  std::optional<num::Var> r_poi;
  std::optional<num::Var> r_time;
  std::size_t length() const { return r_id.rows(); }
};

// Lookups for one sequence. Specials get a zero spatial row; masked positions
// should already carry POI index 0.
TokenEmbeddings embed_sequence(const EncodedSequence& seq, const EmbeddingVars& vars, num::Var node_spatial);

}  // namespace hexlink
