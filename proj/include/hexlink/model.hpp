#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hexlink/embedding.hpp"
#include "hexlink/encoder.hpp"
#include "hexlink/num/params.hpp"
#include "hexlink/num/sparse.hpp"

#include "json.hpp"

namespace hexlink {

struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t d_gcn = 256;
  std::size_t heads = 8;
  std::size_t d_head = 64;
  std::size_t gcn_layers = 1;
  std::size_t encoder_layers = 1;
  std::size_t max_cells = 128;
  bool use_poi = true;
  bool use_time = true;
  // Feeds the mean GCN embedding of the flow to the classifier next to CLS.
  bool use_skip = true;

  // 12 heads of 42 with a 504 -> 512 output projection.
  static ModelConfig full();
  static ModelConfig desk();
  // Small enough for single-core tests.
  static ModelConfig tiny();

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep the defaults of `base`.
  static ModelConfig from_json(const nlohmann::json& j, const ModelConfig& base);
  static ModelConfig from_json(const nlohmann::json& j);
};

struct EncodedOutput {
  num::Var hidden;     // m x d_model
  num::Var r_spatial;  // m x d_model
};

class ForwardPass;

// Parameters and fixed inputs (vocabularies, propagation matrix) of one model.
class Model {
 public:
  // `a_sym` must have one row per vocabulary cell.
  static Model create(const ModelConfig& cfg, Vocab vocab, PoiVocab pois, num::SparseMatrix a_sym,
                      std::uint64_t seed);

  // Move-only: the parameter handles point into the owned store.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  // Only the use_skip switch may change after creation.
  void set_use_skip(bool on) { cfg_.use_skip = on; }
  const Vocab& vocab() const { return vocab_; }
  const PoiVocab& pois() const { return pois_; }
  const num::SparseMatrix& a_sym() const { return a_sym_; }
  num::ParamStore& store() { return store_; }
  const num::ParamStore& store() const { return store_; }

  // POI table is used only when configured and the corpus has POIs.
  bool has_poi() const { return cfg_.use_poi && !pois_.empty(); }
  std::size_t side_channels() const { return 1 + (has_poi() ? 1 : 0) + (cfg_.use_time ? 1 : 0); }

  EncodedSequence encode(const MobilityFlow& flow) const;

  // Adds (or re-initializes when the label set changes) the user head.
  void ensure_classifier(const std::vector<std::string>& labels, std::uint64_t seed);
  bool has_classifier() const { return cls_w_ != nullptr; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t n_users() const { return labels_.size(); }

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  // Free-form snapshot stored alongside the weights (training configuration).
  nlohmann::json extra;

 private:
  friend class ForwardPass;
  Model() = default;
  void attach();

  ModelConfig cfg_;
  Vocab vocab_;
  PoiVocab pois_;
  num::SparseMatrix a_sym_;
  num::ParamStore store_;
  EmbeddingTables emb_;
  std::vector<EncoderParams> blocks_;
  num::Param* mlm_w_ = nullptr;
  num::Param* mlm_b_ = nullptr;
  num::Param* cls_w_ = nullptr;
  num::Param* cls_b_ = nullptr;
  std::vector<std::string> labels_;
};

// Binds a model to a tape: parameters become leaves and the GCN runs once.
// The model must outlive the pass.
class ForwardPass {
 public:
  ForwardPass(Model& model, num::Tape& tape);

  num::Tape& tape() { return *tape_; }
  num::Var node_spatial() const { return node_spatial_; }

  // Positions holding PAD are excluded from attention.
  EncodedOutput encode(const EncodedSequence& seq, AttentionTrace* trace = nullptr);
  // Vocabulary logits for the given rows of `hidden`.
  num::Var mlm_logits(num::Var hidden, std::span<const long> rows);
  // 1 x n_users.
  num::Var classify(const EncodedSequence& seq);
  num::Var classify(const EncodedSequence& seq, const EncodedOutput& out);

 private:
  Model* model_;
  num::Tape* tape_;
  EmbeddingVars emb_;
  std::vector<EncoderVars> blocks_;
  num::Var node_spatial_;
  num::Var mlm_w_, mlm_b_;
  std::optional<num::Var> cls_w_, cls_b_;
};

}  // namespace hexlink
