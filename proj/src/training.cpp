#include "hexlink/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "hexlink/errors.hpp"

namespace hexlink {

using num::Tensor2;
using num::Var;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (!(beta_balance >= 0.0 && beta_balance < 1.0)) throw ConfigError("beta_balance must lie in [0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(plateau_tol >= 0.0)) throw ConfigError("plateau_tol must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"plateau_tol", plateau_tol},
          {"epochs", epochs},
          {"mask_ratio", mask_ratio},
          {"bert_mix", bert_mix},
          {"beta_balance", beta_balance},
          {"optimizer", optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
          {"momentum", momentum},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.plateau_tol = j.value("plateau_tol", c.plateau_tol);
    c.epochs = j.value("epochs", c.epochs);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.bert_mix = j.value("bert_mix", c.bert_mix);
    c.beta_balance = j.value("beta_balance", c.beta_balance);
    if (j.contains("optimizer")) {
      const auto o = j.at("optimizer").get<std::string>();
      if (o == "sgd") c.optimizer = OptimizerKind::Sgd;
      else if (o == "adam") c.optimizer = OptimizerKind::Adam;
      else throw ConfigError("unknown optimizer '" + o + "'");
    }
    c.momentum = j.value("momentum", c.momentum);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t MaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

std::size_t mask_count(std::size_t cells, double ratio) {
  if (cells == 0) return 0;
  const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(cells)));
  return std::clamp<std::size_t>(k, 1, cells);
}

MaskedBatch mask_batch(std::span<const EncodedSequence> seqs, std::size_t vocab_size, double ratio,
                       std::mt19937_64& rng, bool bert_mix) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  MaskedBatch b;
  b.inputs.assign(seqs.begin(), seqs.end());
  b.positions.resize(seqs.size());
  b.originals.resize(seqs.size());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    EncodedSequence& seq = b.inputs[s];
    std::vector<long> cells;
    for (std::size_t i = 0; i < seq.length(); ++i) {
      if (!Vocab::is_special(seq.tokens[i])) cells.push_back(static_cast<long>(i));
    }
    if (cells.empty()) {
      ++b.skipped;
      continue;
    }
    const std::size_t k = mask_count(cells.size(), ratio);
    // Partial Fisher-Yates: the first k entries become a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
      std::swap(cells[i], cells[pick(rng)]);
    }
    std::vector<long> chosen(cells.begin(), cells.begin() + static_cast<long>(k));
    std::sort(chosen.begin(), chosen.end());
    for (long pos : chosen) {
      const auto p = static_cast<std::size_t>(pos);
      b.originals[s].push_back(seq.tokens[p]);
      long replacement = kMaskToken;
      if (bert_mix) {
        const double u = coin(rng);
        if (u >= 0.9) {
          replacement = seq.tokens[p];
        } else if (u >= 0.8 && vocab_size > static_cast<std::size_t>(kFirstCellToken)) {
          std::uniform_int_distribution<long> tok(kFirstCellToken, static_cast<long>(vocab_size) - 1);
          replacement = tok(rng);
        }
      }
      seq.tokens[p] = replacement;
      if (!seq.poi.empty()) seq.poi[p] = 0;
    }
    b.positions[s] = std::move(chosen);
  }
  return b;
}

Var mlm_loss(ForwardPass& pass, const MaskedBatch& batch) {
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    if (batch.positions[s].empty()) continue;
    const EncodedOutput out = pass.encode(batch.inputs[s]);
    logits.push_back(pass.mlm_logits(out.hidden, batch.positions[s]));
    for (long t : batch.originals[s]) targets.push_back(static_cast<std::size_t>(t));
  }
  if (logits.empty()) throw EmptyCorpusError("batch has no masked tokens");
  Var all = logits.size() == 1 ? logits[0] : num::concat_rows(logits);
  const std::vector<double> ones(targets.size(), 1.0);
  return num::softmax_cross_entropy(all, targets, ones);
}

double class_balance_weight(std::size_t n, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("class-balance beta must lie in [0, 1)");
  if (n == 0) throw LabelError("class-balance weight needs a positive count");
  if (beta == 0.0 || n == 1) return 1.0;
  return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n)));
}

ClassWeights ClassWeights::from_counts(std::span<const std::size_t> counts, double beta) {
  ClassWeights w;
  w.weights.reserve(counts.size());
  // Users absent from the training split never appear as targets; their
  // weight is irrelevant and set to 1.
  for (std::size_t n : counts) w.weights.push_back(n == 0 ? 1.0 : class_balance_weight(n, beta));
  return w;
}

Var balanced_ce_loss(Var logits, std::span<const std::size_t> truths, const ClassWeights& weights) {
  if (truths.size() != logits.rows()) throw ShapeError("one truth per logit row is required");
  std::vector<double> w(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= logits.cols() || truths[i] >= weights.size()) {
      throw LabelError("user index " + std::to_string(truths[i]) + " outside " + std::to_string(logits.cols()) +
                       " classes");
    }
    w[i] = weights[truths[i]];
  }
  return num::softmax_cross_entropy(logits, truths, w);
}

void Optimizer::step(num::ParamStore& store, double lr) {
  ++t_;
  for (num::Param* p : store.all()) {
    if (p->frozen) continue;
    auto& value = p->value();
    const auto& grad = p->grad();
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      if (cfg_.momentum == 0.0) {
        for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * grad[i];
        continue;
      }
      Slot& s = state_[p->name()];
      if (!s.m.same_shape(value)) s.m = Tensor2(value.rows(), value.cols());
      for (std::size_t i = 0; i < value.size(); ++i) {
        s.m[i] = cfg_.momentum * s.m[i] + grad[i];
        value[i] -= lr * s.m[i];
      }
    } else {
      Slot& s = state_[p->name()];
      if (!s.m.same_shape(value)) {
        s.m = Tensor2(value.rows(), value.cols());
        s.v = Tensor2(value.rows(), value.cols());
      }
      const double b1 = cfg_.adam_beta1;
      const double b2 = cfg_.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t i = 0; i < value.size(); ++i) {
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * grad[i];
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * grad[i] * grad[i];
        value[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.adam_eps);
      }
    }
  }
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Tensor2> snapshot(const num::ParamStore& store) {
  std::vector<Tensor2> out;
  for (const num::Param* p : store.all()) out.push_back(p->value());
  return out;
}

void restore(num::ParamStore& store, const std::vector<Tensor2>& values) {
  auto params = store.all();
  for (std::size_t i = 0; i < params.size() && i < values.size(); ++i) params[i]->value() = values[i];
}

// Shared epoch loop; `batch_loss` builds the loss of one batch of sequence indices.
template <typename BatchLoss>
TrainHistory run_epochs(Model& model, std::size_t n, const TrainConfig& cfg, const char* split,
                        std::ostream* log, std::mt19937_64& rng, BatchLoss&& batch_loss) {
  cfg.validate();
  if (n == 0) throw EmptyCorpusError("no training sequences");
  TrainHistory hist;
  Optimizer opt(cfg);
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto start = Clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto last_good = snapshot(model.store());
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t b = 0; b < n; b += cfg.batch_size) {
        const std::span<const std::size_t> idx(order.data() + b, std::min(cfg.batch_size, n - b));
        model.store().zero_grad();
        num::Tape tape;
        ForwardPass pass(model, tape);
        Var loss = batch_loss(pass, idx);
        const double v = loss.value()(0, 0);
        if (!std::isfinite(v)) throw NumericGuardError("non-finite loss");
        tape.backward(loss);
        for (const num::Param* p : model.store().all()) {
          if (!p->grad().all_finite()) throw NumericGuardError("non-finite gradient in " + p->name());
        }
        opt.step(model.store(), lr);
        total += v;
        ++batches;
      }
    } catch (const NumericGuardError&) {
      restore(model.store(), last_good);
      throw;
    }
    const double epoch_loss = total / static_cast<double>(batches);
    hist.epochs.push_back({epoch, epoch_loss, lr});
    if (log) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
      *log << nlohmann::json{{"epoch", epoch}, {"split", split}, {"loss", epoch_loss}, {"lr", lr}, {"wall_ms", ms}}
                  .dump()
           << '\n';
    }
    if (epoch_loss < best - cfg.plateau_tol) {
      best = epoch_loss;
    } else {
      best = std::min(best, epoch_loss);
      lr *= cfg.lr_decay;
    }
  }
  hist.final_lr = lr;
  return hist;
}

}  // namespace

TrainHistory pretrain(Model& model, std::span<const EncodedSequence> seqs, const TrainConfig& cfg,
                      std::ostream* log) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<EncodedSequence> picked;
  return run_epochs(model, seqs.size(), cfg, "pretrain", log, rng,
                    [&](ForwardPass& pass, std::span<const std::size_t> idx) {
                      picked.clear();
                      for (std::size_t i : idx) picked.push_back(seqs[i]);
                      const MaskedBatch batch =
                          mask_batch(picked, model.vocab().size(), cfg.mask_ratio, rng, cfg.bert_mix);
                      return mlm_loss(pass, batch);
                    });
}

TrainHistory finetune(Model& model, std::span<const EncodedSequence> seqs, std::span<const std::size_t> labels,
                      const ClassWeights& weights, const TrainConfig& cfg, std::ostream* log) {
  if (labels.size() != seqs.size()) throw LabelError("one label per sequence is required");
  if (!model.has_classifier()) throw ConfigError("model has no classifier head");
  for (std::size_t l : labels) {
    if (l >= model.n_users()) throw LabelError("label " + std::to_string(l) + " outside the user set");
  }
  std::mt19937_64 rng(cfg.seed);
  return run_epochs(model, seqs.size(), cfg, "finetune", log, rng,
                    [&](ForwardPass& pass, std::span<const std::size_t> idx) {
                      std::vector<Var> rows;
                      std::vector<std::size_t> truths;
                      for (std::size_t i : idx) {
                        rows.push_back(pass.classify(seqs[i]));
                        truths.push_back(labels[i]);
                      }
                      Var logits = rows.size() == 1 ? rows[0] : num::concat_rows(rows);
                      return balanced_ce_loss(logits, truths, weights);
                    });
}

namespace {

constexpr std::size_t kEvalChunk = 64;

}  // namespace

double mlm_recovery(Model& model, std::span<const EncodedSequence> seqs, double ratio, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t hit = 0;
  std::size_t total = 0;
  for (std::size_t start = 0; start < seqs.size(); start += kEvalChunk) {
    const auto chunk = seqs.subspan(start, std::min(kEvalChunk, seqs.size() - start));
    const MaskedBatch batch = mask_batch(chunk, model.vocab().size(), ratio, rng);
    num::Tape tape;
    ForwardPass pass(model, tape);
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
      if (batch.positions[s].empty()) continue;
      const Var logits = pass.mlm_logits(pass.encode(batch.inputs[s]).hidden, batch.positions[s]);
      const Tensor2& v = logits.value();
      for (std::size_t r = 0; r < v.rows(); ++r) {
        const auto row = v.row(r);
        const auto best = static_cast<long>(std::max_element(row.begin(), row.end()) - row.begin());
        hit += best == batch.originals[s][r] ? 1 : 0;
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<std::vector<double>> predict_logits(Model& model, std::span<const EncodedSequence> seqs) {
  std::vector<std::vector<double>> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += kEvalChunk) {
    num::Tape tape;
    ForwardPass pass(model, tape);
    const std::size_t end = std::min(seqs.size(), start + kEvalChunk);
    for (std::size_t i = start; i < end; ++i) {
      const auto row = pass.classify(seqs[i]).value().row(0);
      out.emplace_back(row.begin(), row.end());
    }
  }
  return out;
}

}  // namespace hexlink
