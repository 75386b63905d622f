#include "hexlink/model.hpp"

#include <cmath>
#include <fstream>

#include "hexlink/errors.hpp"

namespace hexlink {

using num::Tensor2;
using num::Var;

namespace {

constexpr const char* kModelFormat = "hexlink-model";
constexpr int kModelVersion = 1;

std::string block_prefix(std::size_t l) { return "enc" + std::to_string(l); }

}  // namespace

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.heads = 12;
  c.d_head = 42;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.d_model = 32;
  c.d_gcn = 16;
  c.heads = 2;
  c.d_head = 16;
  return c;
}

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0) throw ConfigError("d_model must be positive and even");
  if (d_gcn == 0) throw ConfigError("d_gcn must be positive");
  if (heads == 0 || d_head == 0) throw ConfigError("heads and d_head must be positive");
  if (gcn_layers == 0) throw ConfigError("at least one GCN layer is required");
  if (encoder_layers == 0) throw ConfigError("at least one encoder layer is required");
  if (max_cells == 0) throw ConfigError("max_cells must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},       {"d_gcn", d_gcn},       {"heads", heads},
          {"d_head", d_head},         {"gcn_layers", gcn_layers}, {"encoder_layers", encoder_layers},
          {"max_cells", max_cells},   {"use_poi", use_poi},   {"use_time", use_time},
          {"use_skip", use_skip}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const ModelConfig& base) {
  ModelConfig c = base;
  try {
    if (j.contains("preset")) {
      const auto p = j.at("preset").get<std::string>();
      if (p == "full") c = full();
      else if (p == "desk") c = desk();
      else if (p == "tiny") c = tiny();
      else throw ConfigError("unknown model preset '" + p + "'");
    }
    c.d_model = j.value("d_model", c.d_model);
    c.d_gcn = j.value("d_gcn", c.d_gcn);
    c.heads = j.value("heads", c.heads);
    c.d_head = j.value("d_head", c.d_head);
    c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.max_cells = j.value("max_cells", c.max_cells);
    c.use_poi = j.value("use_poi", c.use_poi);
    c.use_time = j.value("use_time", c.use_time);
    c.use_skip = j.value("use_skip", c.use_skip);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

Model Model::create(const ModelConfig& cfg, Vocab vocab, PoiVocab pois, num::SparseMatrix a_sym,
                    std::uint64_t seed) {
  cfg.validate();
  if (a_sym.rows() != vocab.cell_count() || a_sym.cols() != vocab.cell_count()) {
    throw ShapeError("propagation matrix is " + std::to_string(a_sym.rows()) + "x" + std::to_string(a_sym.cols()) +
                     " for " + std::to_string(vocab.cell_count()) + " cells");
  }
  Model m;
  m.cfg_ = cfg;
  m.vocab_ = std::move(vocab);
  m.pois_ = std::move(pois);
  m.a_sym_ = std::move(a_sym);

  std::mt19937_64 rng(seed);
  EmbeddingDims dims{m.vocab_.size(), m.vocab_.cell_count(), m.has_poi() ? m.pois_.size() : 0,
                     cfg.d_model,     cfg.d_gcn,             cfg.gcn_layers,
                     cfg.use_time};
  EmbeddingTables::create(m.store_, dims, rng);
  const EncoderDims ed{cfg.d_model, cfg.heads, cfg.d_head, m.side_channels()};
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) EncoderParams::create(m.store_, block_prefix(l), ed, rng);
  m.store_.add("mlm.w", num::init_glorot(cfg.d_model, m.vocab_.size(), rng));
  m.store_.add("mlm.b", Tensor2(1, m.vocab_.size()));
  m.attach();
  return m;
}

void Model::attach() {
  EmbeddingDims dims{vocab_.size(), vocab_.cell_count(), has_poi() ? pois_.size() : 0,
                     cfg_.d_model,  cfg_.d_gcn,          cfg_.gcn_layers,
                     cfg_.use_time};
  emb_ = EmbeddingTables::attach(store_, dims);
  blocks_.clear();
  const EncoderDims ed{cfg_.d_model, cfg_.heads, cfg_.d_head, side_channels()};
  for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
    blocks_.push_back(EncoderParams::attach(store_, block_prefix(l), ed));
  }
  mlm_w_ = &store_.get("mlm.w");
  mlm_b_ = &store_.get("mlm.b");
  if (store_.contains("cls.w")) {
    cls_w_ = &store_.get("cls.w");
    cls_b_ = &store_.get("cls.b");
    if (cls_w_->value().cols() != labels_.size()) throw ShapeError("classifier width does not match the label set");
  }
}

EncodedSequence Model::encode(const MobilityFlow& flow) const {
  return encode_flow(flow, vocab_, has_poi() ? &pois_ : nullptr, cfg_.use_time, cfg_.max_cells);
}

void Model::ensure_classifier(const std::vector<std::string>& labels, std::uint64_t seed) {
  if (labels.empty()) throw LabelError("classifier needs at least one user");
  if (cls_w_ != nullptr && labels == labels_) return;
  std::mt19937_64 rng(seed);
  Tensor2 w = num::init_glorot(2 * cfg_.d_model, labels.size(), rng);
  Tensor2 b(1, labels.size());
  if (cls_w_ != nullptr) {
    cls_w_->reset(std::move(w));
    cls_b_->reset(std::move(b));
  } else {
    cls_w_ = &store_.add("cls.w", std::move(w));
    cls_b_ = &store_.add("cls.b", std::move(b));
  }
  labels_ = labels;
}

nlohmann::json Model::to_json() const {
  nlohmann::json graph = nlohmann::json::array();
  for (const auto& t : a_sym_.triplets()) graph.push_back({t.row, t.col, t.value});
  return {{"format", kModelFormat},
          {"version", kModelVersion},
          {"config", cfg_.to_json()},
          {"vocab", vocab_.to_json()},
          {"pois", pois_.to_json()},
          {"a_sym", graph},
          {"labels", labels_},
          {"extra", extra},
          {"params", store_.to_json()}};
}

Model Model::from_json(const nlohmann::json& j) {
  Model m;
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw SchemaError("not a model checkpoint");
    if (j.at("version").get<int>() != kModelVersion) throw SchemaError("unsupported model checkpoint version");
    m.cfg_ = ModelConfig::from_json(j.at("config"));
    m.vocab_ = Vocab::from_json(j.at("vocab"));
    m.pois_ = PoiVocab::from_json(j.at("pois"));
    std::vector<num::Triplet> t;
    for (const auto& e : j.at("a_sym")) {
      t.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
    }
    const std::size_t n = m.vocab_.cell_count();
    for (const auto& e : t) {
      if (e.row >= n || e.col >= n) throw ShapeError("propagation matrix entry outside the vocabulary");
    }
    m.a_sym_ = num::SparseMatrix::from_triplets(n, n, std::move(t));
    m.labels_ = j.at("labels").get<std::vector<std::string>>();
    m.extra = j.value("extra", nlohmann::json::object());
    m.store_.load_json(j.at("params"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model checkpoint: ") + e.what());
  }
  m.attach();
  return m;
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

ForwardPass::ForwardPass(Model& model, num::Tape& tape) : model_(&model), tape_(&tape) {
  emb_ = EmbeddingVars::bind(tape, model.emb_);
  for (const auto& b : model.blocks_) blocks_.push_back(EncoderVars::bind(tape, b));
  node_spatial_ = gcn_forward(model.a_sym_, emb_);
  mlm_w_ = tape.param(*model.mlm_w_);
  mlm_b_ = tape.param(*model.mlm_b_);
  if (model.cls_w_ != nullptr) {
    cls_w_ = tape.param(*model.cls_w_);
    cls_b_ = tape.param(*model.cls_b_);
  }
}

EncodedOutput ForwardPass::encode(const EncodedSequence& seq, AttentionTrace* trace) {
  TokenEmbeddings e = embed_sequence(seq, emb_, node_spatial_);
  AttentionMask mask;
  mask.attendable.resize(seq.length());
  for (std::size_t i = 0; i < seq.length(); ++i) mask.attendable[i] = seq.tokens[i] != kPadToken;
  SideChannels side;
  side.spatial = e.r_spatial;
  if (model_->has_poi()) {
    if (!e.r_poi) throw ChannelError("model expects a POI channel");
    side.poi = e.r_poi;
  }
  if (model_->cfg_.use_time) {
    if (!e.r_time) throw ChannelError("model expects a time channel");
    side.time = e.r_time;
  }
  Var h = e.r_id;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    h = encoder_block(h, side, blocks_[l], mask, l + 1 == blocks_.size() ? trace : nullptr);
  }
  return {h, e.r_spatial};
}

Var ForwardPass::mlm_logits(Var hidden, std::span<const long> rows) {
  return num::add_bias(num::matmul(num::gather_rows(hidden, rows), mlm_w_), mlm_b_);
}

Var ForwardPass::classify(const EncodedSequence& seq) { return classify(seq, encode(seq)); }

Var ForwardPass::classify(const EncodedSequence& seq, const EncodedOutput& out) {
  if (!cls_w_) throw ConfigError("model has no classifier head");
  const long zero = 0;
  Var pooled = num::gather_rows(out.hidden, std::span<const long>(&zero, 1));
  Var skip;
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (!Vocab::is_special(seq.tokens[i])) cells.push_back(i);
  }
  if (model_->cfg_.use_skip && !cells.empty()) {
    skip = num::mean_rows(out.r_spatial, cells);
  } else {
    skip = tape_->constant(Tensor2(1, model_->cfg_.d_model));
  }
  return num::add_bias(num::matmul(num::concat_cols({pooled, skip}), *cls_w_), *cls_b_);
}

}  // namespace hexlink
