#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "hexlink/errors.hpp"
#include "hexlink/num/grad_check.hpp"
#include "hexlink/training.hpp"
#include "model_fixture.hpp"
#include "support.hpp"

using namespace hexlink;
using namespace hexlink::num;

namespace {

std::vector<EncodedSequence> encode_flows(const Model& m, std::span<const MobilityFlow> flows) {
  std::vector<EncodedSequence> out;
  for (const auto& f : flows) out.push_back(m.encode(f));
  return out;
}

std::vector<std::size_t> toy_labels(std::span<const MobilityFlow> flows) {
  std::vector<std::size_t> out;
  for (const auto& f : flows) out.push_back(f.user_id == "alice" ? 0 : f.user_id == "bob" ? 1 : 2);
  return out;
}

const std::vector<std::string> kUsers{"alice", "bob", "carol"};

double nll(std::span<const double> logits, std::size_t truth) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return -(logits[truth] - mx - std::log(z));
}

double finetune_loss(Model& m, std::span<const EncodedSequence> seqs, std::span<const std::size_t> labels) {
  Tape t;
  ForwardPass pass(m, t);
  std::vector<Var> rows;
  for (const auto& s : seqs) rows.push_back(pass.classify(s));
  return balanced_ce_loss(concat_rows(rows), labels, ClassWeights::uniform(m.n_users())).value()(0, 0);
}

}  // namespace

TEST_CASE("mask counts") {
  CHECK(mask_count(10, 0.4) == 4);
  CHECK(mask_count(5, 0.4) == 2);
  CHECK(mask_count(1, 0.4) == 1);
  CHECK(mask_count(2, 0.1) == 1);
  CHECK(mask_count(4, 0.99) == 4);
  CHECK(mask_count(0, 0.4) == 0);
}

TEST_CASE("mask_batch picks cell positions and records originals") {
  const auto flows = testing::toy_flows();
  Model m = testing::toy_model(flows, testing::micro_config());
  const auto seqs = encode_flows(m, flows);
  std::mt19937_64 rng(1);
  const MaskedBatch b = mask_batch(seqs, m.vocab().size(), 0.4, rng);
  REQUIRE(b.inputs.size() == seqs.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& pos = b.positions[s];
    CHECK(pos.size() == mask_count(seqs[s].length() - 1, 0.4));
    total += pos.size();
    for (std::size_t k = 0; k < pos.size(); ++k) {
      CHECK(pos[k] >= 1);
      if (k > 0) CHECK(pos[k] > pos[k - 1]);
      const auto p = static_cast<std::size_t>(pos[k]);
      CHECK(b.inputs[s].tokens[p] == kMaskToken);
      CHECK(b.originals[s][k] == seqs[s].tokens[p]);
      CHECK(b.inputs[s].poi[p] == 0);
      CHECK(b.inputs[s].times[p] == seqs[s].times[p]);
    }
    CHECK(b.inputs[s].tokens[0] == kClsToken);
  }
  CHECK(b.masked_count() == total);

  std::mt19937_64 r1(5);
  std::mt19937_64 r2(5);
  const MaskedBatch x = mask_batch(seqs, m.vocab().size(), 0.4, r1);
  const MaskedBatch y = mask_batch(seqs, m.vocab().size(), 0.4, r2);
  CHECK(x.positions == y.positions);

  // Every cell position is eventually chosen.
  std::set<long> seen;
  for (int i = 0; i < 200; ++i) {
    const MaskedBatch z = mask_batch(std::span(seqs).first(1), m.vocab().size(), 0.4, rng);
    for (long p : z.positions[0]) seen.insert(p);
  }
  CHECK(seen.size() == seqs[0].length() - 1);
}

TEST_CASE("mixed replacement keeps the 80/10/10 proportions") {
  const auto flows = testing::toy_flows(40);
  Model m = testing::toy_model(flows, testing::micro_config());
  const auto seqs = encode_flows(m, flows);
  std::mt19937_64 rng(2);
  std::size_t mask = 0;
  std::size_t same = 0;
  std::size_t total = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const MaskedBatch b = mask_batch(seqs, m.vocab().size(), 0.5, rng, true);
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      for (std::size_t k = 0; k < b.positions[s].size(); ++k) {
        const long tok = b.inputs[s].tokens[static_cast<std::size_t>(b.positions[s][k])];
        mask += tok == kMaskToken ? 1 : 0;
        same += tok == b.originals[s][k] ? 1 : 0;
        CHECK((tok == kMaskToken || !Vocab::is_special(tok)));
        ++total;
      }
    }
  }
  const double n = static_cast<double>(total);
  CHECK(std::abs(mask / n - 0.8) < 0.02);
  // Unchanged tokens include random draws that hit the original.
  CHECK(same / n > 0.09);
  CHECK(same / n < 0.15);
}

TEST_CASE("cross-entropy values") {
  Tape t;
  const std::vector<std::size_t> truth{2};
  const std::vector<double> one{1.0};
  const Var confident = softmax_cross_entropy(t.constant(Tensor2{{0.0, 0.0, 30.0, 0.0}}), truth, one);
  CHECK(confident.value()(0, 0) < 4.0 * std::exp(-30.0));
  CHECK(confident.value()(0, 0) > 0.0);
  const Var uniform = softmax_cross_entropy(t.constant(Tensor2(1, 7, 0.3)), truth, one);
  CHECK(std::abs(uniform.value()(0, 0) - std::log(7.0)) < 1e-14);
  const Var hand = softmax_cross_entropy(t.constant(Tensor2{{1.0, 2.0, 3.0}}), truth, one);
  const double e = std::exp(1.0);
  CHECK(std::abs(hand.value()(0, 0) + std::log(e * e * e / (e + e * e + e * e * e))) < 1e-14);
}

TEST_CASE("MLM loss is the mean over all masked positions") {
  const auto flows = testing::toy_flows();
  Model m = testing::toy_model(flows, testing::micro_config());
  const auto seqs = encode_flows(m, flows);
  std::mt19937_64 rng(3);
  const MaskedBatch b = mask_batch(seqs, m.vocab().size(), 0.4, rng);
  Tape t;
  ForwardPass pass(m, t);
  const double got = mlm_loss(pass, b).value()(0, 0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < b.inputs.size(); ++s) {
    const Tensor2 logits = pass.mlm_logits(pass.encode(b.inputs[s]).hidden, b.positions[s]).value();
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      sum += nll(logits.row(r), static_cast<std::size_t>(b.originals[s][r]));
      ++count;
    }
  }
  CHECK(count == b.masked_count());
  CHECK(std::abs(got - sum / static_cast<double>(count)) < 1e-12);
}

TEST_CASE("class-balanced weights") {
  CHECK(std::abs(class_balance_weight(2, 0.99) - 0.01 / 0.0199) < 1e-15);
  CHECK(std::abs(class_balance_weight(2, 0.99) - 0.502512) < 1e-6);
  CHECK(class_balance_weight(1, 0.99) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t n = 1; n < 200; ++n) {
    CHECK(class_balance_weight(n + 1, 0.99) < class_balance_weight(n, 0.99));
    CHECK(class_balance_weight(n, 0.0) == 1.0);
  }
  const std::vector<std::size_t> counts{1, 10, 0};
  const ClassWeights w = ClassWeights::from_counts(counts, 0.9);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(0.1 / (1.0 - std::pow(0.9, 10))));
  CHECK(w[2] == 1.0);
}

TEST_CASE("balanced cross-entropy by hand") {
  Tape t;
  const Tensor2 logits{{1.0, 0.0, -1.0}, {0.5, 0.5, 2.0}};
  const std::vector<std::size_t> truths{0, 2};
  const ClassWeights w{{2.0, 1.0, 0.5}};
  const double got = balanced_ce_loss(t.constant(logits), truths, w).value()(0, 0);
  const double want = (2.0 * nll(logits.row(0), 0) + 0.5 * nll(logits.row(1), 2)) / 2.0;
  CHECK(std::abs(got - want) < 1e-14);
  const std::vector<std::size_t> bad{0, 3};
  CHECK_THROWS_AS(balanced_ce_loss(t.constant(logits), bad, w), LabelError);
  CHECK_THROWS_AS(balanced_ce_loss(t.constant(logits), truths, ClassWeights::uniform(2)), LabelError);
}

TEST_CASE("classifier head reads CLS and the spatial skip") {
  const auto flows = testing::toy_flows();
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 9);
  const EncodedSequence seq = m.encode(flows[1]);
  const Tensor2& w = m.store().get("cls.w").value();
  const Tensor2& bias = m.store().get("cls.b").value();
  REQUIRE(w.rows() == 16);
  REQUIRE(w.cols() == 3);

  auto expect = [&](bool skip) {
    Tape t;
    ForwardPass pass(m, t);
    const EncodedOutput out = pass.encode(seq);
    const Tensor2 logits = pass.classify(seq, out).value();
    const Tensor2& h = out.hidden.value();
    const Tensor2& sp = out.r_spatial.value();
    for (std::size_t u = 0; u < 3; ++u) {
      double want = bias(0, u);
      for (std::size_t j = 0; j < 8; ++j) {
        want += h(0, j) * w(j, u);
        if (skip) {
          double mean = 0.0;
          for (std::size_t i = 1; i < seq.length(); ++i) mean += sp(i, j);
          want += mean / static_cast<double>(seq.length() - 1) * w(8 + j, u);
        }
      }
      CHECK(std::abs(logits(0, u) - want) < 1e-12);
    }
  };
  expect(true);
  m.set_use_skip(false);
  expect(false);
}

TEST_CASE("permuting the head permutes the logits") {
  const auto flows = testing::toy_flows();
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 9);
  const auto seqs = encode_flows(m, std::span(flows).first(3));
  const auto before = predict_logits(m, seqs);
  const std::size_t perm[3] = {2, 0, 1};
  Tensor2 w = m.store().get("cls.w").value();
  Tensor2 b = m.store().get("cls.b").value();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t u = 0; u < 3; ++u) m.store().get("cls.w").value()(r, perm[u]) = w(r, u);
  }
  for (std::size_t u = 0; u < 3; ++u) m.store().get("cls.b").value()(0, perm[u]) = b(0, u);
  const auto after = predict_logits(m, seqs);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (std::size_t u = 0; u < 3; ++u) CHECK(after[s][perm[u]] == before[s][u]);
  }
}

TEST_CASE("model gradients against finite differences") {
  const auto flows = testing::toy_flows(1);
  Model m = testing::toy_model(flows, testing::micro_config(), 4);
  m.ensure_classifier(kUsers, 5);
  const auto seqs = encode_flows(m, flows);
  const auto labels = toy_labels(flows);
  std::mt19937_64 rng(6);
  const MaskedBatch batch = mask_batch(seqs, m.vocab().size(), 0.4, rng);
  auto loss = [&](Tape& t) {
    ForwardPass pass(m, t);
    std::vector<Var> rows;
    for (const auto& s : seqs) rows.push_back(pass.classify(s));
    const Var ce = balanced_ce_loss(concat_rows(rows), labels, ClassWeights::from_counts(std::vector<std::size_t>{1, 1, 1}, 0.5));
    return add(ce, mlm_loss(pass, batch));
  };
  GradCheckOptions o;
  o.tol = 1e-4;
  const auto report = grad_check(loss, m.store().all(), o);
  for (const auto& p : report.params) {
    INFO(p.name);
    CHECK(p.max_rel_error < 1e-4);
  }
}

TEST_CASE("a small SGD step lowers the loss") {
  const auto flows = testing::toy_flows(2);
  const auto labels = toy_labels(flows);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Model m = testing::toy_model(flows, testing::micro_config(), seed);
    m.ensure_classifier(kUsers, seed + 100);
    const auto seqs = encode_flows(m, flows);
    const double before = finetune_loss(m, seqs, labels);
    m.store().zero_grad();
    {
      Tape t;
      ForwardPass pass(m, t);
      std::vector<Var> rows;
      for (const auto& s : seqs) rows.push_back(pass.classify(s));
      t.backward(balanced_ce_loss(concat_rows(rows), labels, ClassWeights::uniform(3)));
    }
    TrainConfig cfg;
    Optimizer opt(cfg);
    opt.step(m.store(), 1e-3);
    CHECK(finetune_loss(m, seqs, labels) < before);
  }
}

TEST_CASE("zero learning rate keeps the loss fixed and decays on plateau") {
  const auto flows = testing::toy_flows(2);
  const auto labels = toy_labels(flows);
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 1);
  const auto seqs = encode_flows(m, flows);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 4;
  cfg.batch_size = 24;
  std::ostringstream log;
  const auto h = finetune(m, seqs, labels, ClassWeights::uniform(3), cfg, &log);
  REQUIRE(h.epochs.size() == 4);
  for (const auto& e : h.epochs) CHECK(std::abs(e.loss - h.epochs[0].loss) < 1e-12);

  cfg.lr = 1e-12;
  const auto d = finetune(m, seqs, labels, ClassWeights::uniform(3), cfg);
  CHECK(d.epochs[1].lr == 1e-12);
  CHECK(d.epochs[2].lr == 0.5e-12);
  CHECK(d.final_lr == 1e-12 * 0.125);

  std::istringstream lines(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<std::size_t>() == ++n);
    CHECK(j.at("split") == "finetune");
    CHECK(j.contains("loss"));
    CHECK(j.contains("lr"));
    CHECK(j.contains("wall_ms"));
  }
  CHECK(n == 4);
}

TEST_CASE("training is deterministic and learns") {
  const auto flows = testing::toy_flows(3);
  const auto labels = toy_labels(flows);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.lr = 0.01;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.seed = 3;
  auto run = [&] {
    Model m = testing::toy_model(flows, testing::micro_config());
    const auto seqs = encode_flows(m, flows);
    auto pre = pretrain(m, seqs, cfg);
    m.ensure_classifier(kUsers, 2);
    auto fine = finetune(m, seqs, labels, ClassWeights::uniform(3), cfg);
    return std::make_pair(pre, fine);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.first.epochs.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(a.first.epochs[e].loss == b.first.epochs[e].loss);
    CHECK(a.second.epochs[e].loss == b.second.epochs[e].loss);
  }
  CHECK(a.second.epochs.back().loss < a.second.epochs.front().loss);

  TrainConfig sgd = cfg;
  sgd.optimizer = OptimizerKind::Sgd;
  sgd.momentum = 0.9;
  sgd.lr = 0.05;
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 2);
  const auto seqs = encode_flows(m, flows);
  const auto h = finetune(m, seqs, labels, ClassWeights::uniform(3), sgd);
  CHECK(h.epochs.back().loss < h.epochs.front().loss);
}

TEST_CASE("checkpoints round-trip exactly") {
  const auto flows = testing::toy_flows(2);
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 3);
  m.extra["note"] = "x";
  const auto seqs = encode_flows(m, flows);
  testing::TempDir dir("ckpt");
  m.save(dir.path() / "m.json");
  Model back = Model::load(dir.path() / "m.json");
  CHECK(back.to_json().dump() == m.to_json().dump());
  CHECK(back.labels() == kUsers);
  CHECK(back.extra.at("note") == "x");
  CHECK(predict_logits(back, seqs) == predict_logits(m, seqs));

  auto j = m.to_json();
  j["format"] = "other";
  CHECK_THROWS_AS(Model::from_json(j), SchemaError);
  CHECK_THROWS_AS(Model::load(dir.path() / "missing.json"), IoError);
}

TEST_CASE("numeric failure rolls back the epoch") {
  const auto flows = testing::toy_flows(4);
  const auto labels = toy_labels(flows);
  Model m = testing::toy_model(flows, testing::micro_config());
  m.ensure_classifier(kUsers, 3);
  const auto seqs = encode_flows(m, flows);
  const std::string start = m.store().to_json().dump();
  TrainConfig cfg;
  cfg.lr = 1e300;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  CHECK_THROWS_AS(finetune(m, seqs, labels, ClassWeights::uniform(3), cfg), NumericGuardError);
  CHECK(m.store().to_json().dump() == start);
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.optimizer = OptimizerKind::Adam;
  c.epochs = 17;
  const TrainConfig back = TrainConfig::from_json(c.to_json(), TrainConfig{});
  CHECK(back.optimizer == OptimizerKind::Adam);
  CHECK(back.epochs == 17);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"lr", -1.0}}, TrainConfig{}), ConfigError);
}
