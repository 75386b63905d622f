#pragma once

#include <map>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hexlink/model.hpp"

#include "json.hpp"

namespace hexlink {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  std::size_t batch_size = 24;
  double lr = 0.005;
  // Multiplies lr when the epoch loss fails to improve on the best by plateau_tol.
  double lr_decay = 0.5;
  double plateau_tol = 1e-4;
  std::size_t epochs = 10;
  double mask_ratio = 0.40;
  // 80/10/10 replacement instead of always writing MASK.
  bool bert_mix = false;
  double beta_balance = 0.99;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
};

struct MaskedBatch {
  std::vector<EncodedSequence> inputs;
  // Per sequence: masked positions (ascending) and the tokens they held.
  std::vector<std::vector<long>> positions;
  std::vector<std::vector<long>> originals;
  // Sequences without cell tokens; they carry no positions.
  std::size_t skipped = 0;

  std::size_t masked_count() const;
};

// Number of cell tokens to mask in a sequence with `cells` cell tokens.
std::size_t mask_count(std::size_t cells, double ratio);

// Picks a uniform subset of cell positions per sequence and writes MASK there
// (with bert_mix: 80% MASK, 10% random cell token, 10% unchanged). Masked
// positions lose their POI index.
MaskedBatch mask_batch(std::span<const EncodedSequence> seqs, std::size_t vocab_size, double ratio,
                       std::mt19937_64& rng, bool bert_mix = false);

// Mean -log softmax over all masked positions of the batch.
num::Var mlm_loss(ForwardPass& pass, const MaskedBatch& batch);

// (1 - beta) / (1 - beta^n); 1 when beta == 0.
double class_balance_weight(std::size_t n, double beta);

struct ClassWeights {
  std::vector<double> weights;

  static ClassWeights from_counts(std::span<const std::size_t> counts, double beta);
  static ClassWeights uniform(std::size_t n_users) { return {std::vector<double>(n_users, 1.0)}; }
  double operator[](std::size_t u) const { return weights.at(u); }
  std::size_t size() const { return weights.size(); }
};

// (1/B) sum_b w[truth_b] * -log softmax(logits_b)[truth_b]. Throws LabelError
// for a truth outside the logits or the weight table.
num::Var balanced_ce_loss(num::Var logits, std::span<const std::size_t> truths, const ClassWeights& weights);

class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  // Applies the accumulated gradients of all non-frozen params.
  void step(num::ParamStore& store, double lr);

 private:
  struct Slot {
    num::Tensor2 m, v;
  };
  TrainConfig cfg_;
  std::map<std::string, Slot> state_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double final_lr = 0.0;
};

// Both loops log one JSON line per epoch to `log` when given. On
// NumericGuardError the parameters are rolled back to the start of the
// failing epoch and the error is rethrown.
TrainHistory pretrain(Model& model, std::span<const EncodedSequence> seqs, const TrainConfig& cfg,
                      std::ostream* log = nullptr);
TrainHistory finetune(Model& model, std::span<const EncodedSequence> seqs, std::span<const std::size_t> labels,
                      const ClassWeights& weights, const TrainConfig& cfg, std::ostream* log = nullptr);

// Fraction of masked cell tokens whose argmax prediction is the original token.
double mlm_recovery(Model& model, std::span<const EncodedSequence> seqs, double ratio, std::uint64_t seed);

// Per-sequence user logits, no gradients kept.
std::vector<std::vector<double>> predict_logits(Model& model, std::span<const EncodedSequence> seqs);

}  // namespace hexlink
