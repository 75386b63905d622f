// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <sys/wait.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "hexlink/embedding.hpp"
#include "hexlink/encoder.hpp"
#include "hexlink/eval.hpp"
#include "hexlink/num/grad_check.hpp"
#include "hexlink/pipeline.hpp"
#include "hexlink/trajgraph.hpp"
#include "hexlink/training.hpp"
#include "support.hpp"

using namespace hexlink;
using namespace hexlink::num;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1
Outcome sparsity_toy() {
  const auto grid = HexGridConfig::at_resolution(Resolution::Hex8, 40.7, -74.0);
  const LocalPoint hub = cell_center(CellId{0, 0}, grid);
  auto rec = [&](const std::string& u, const std::string& loc, const LocalPoint& p) {
    const GeoPoint g = unproject(p, grid);
    return CheckInRecord{u, loc, 0, g.lat, g.lon};
  };
  // POIs A and B share a cell; C lies elsewhere.
  const std::vector<Trajectory> trs{{"a", "u1", {rec("u1", "A", {hub.x + 30.0, hub.y})}},
                                    {"b", "u2", {rec("u2", "B", {hub.x - 30.0, hub.y})}},
                                    {"c", "u3", {rec("u3", "C", cell_center(CellId{5, 0}, grid))}}};
  const SparsityReport r = sparsity_report(trs, grid);
  const bool pass = r.loc_matrix_sparsity == 2.0 / 3.0 && r.cell_matrix_sparsity == 0.5 && r.n_cells == 2;
  return {pass, "location " + fmt(r.loc_matrix_sparsity, 17) + ", cell " + fmt(r.cell_matrix_sparsity, 17)};
}

// ---------------------------------------------------------------- 2
Outcome table_geometry() {
  const std::pair<Resolution, double> rows[] = {{Resolution::Hex6, 36.129},
                                                {Resolution::Hex7, 5.161},
                                                {Resolution::Hex8, 0.737},
                                                {Resolution::Hex9, 0.105},
                                                {Resolution::Hex10, 0.015}};
  double worst = 0.0;
  for (const auto& [res, km2] : rows) {
    const double a = cell_area_km2(HexGridConfig::at_resolution(res, 0.0, 0.0));
    worst = std::max(worst, std::abs(a - km2) / km2);
  }
  return {worst < 0.01, "max relative area error " + fmt(worst)};
}

// ---------------------------------------------------------------- 3
MobilityFlow flow_of(std::vector<CellId> cells) {
  MobilityFlow f;
  f.trajectory_id = "t";
  f.user_id = "u";
  f.cells = std::move(cells);
  return f;
}

Outcome adjacency() {
  const CellId v1{0, 0};
  const auto ring = neighbors(v1);
  std::vector<MobilityFlow> fig;
  for (int i = 0; i < 5; ++i) fig.push_back(flow_of({v1, ring[0]}));
  for (int k = 1; k < 6; ++k) fig.push_back(flow_of({ring[k]}));
  const TrajGraph g = TrajGraph::build(fig);
  const std::size_t i1 = *g.node_of(v1);
  bool fig_ok = std::abs(g.a().at(i1, *g.node_of(ring[0])) - 0.5) <= 1e-12;
  for (int k = 1; k < 6; ++k) fig_ok = fig_ok && std::abs(g.a().at(i1, *g.node_of(ring[k])) - 0.1) <= 1e-12;

  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> coord(-4, 4);
  std::uniform_int_distribution<int> len(1, 10);
  std::uniform_int_distribution<int> step(0, 7);
  std::uniform_int_distribution<int> n_flows(1, 8);
  double row_err = 0.0;
  double sym_err = 0.0;
  double radius = 0.0;
  std::size_t max_nodes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<MobilityFlow> flows;
    const int nf = n_flows(rng);
    for (int f = 0; f < nf; ++f) {
      std::vector<CellId> cells{CellId{coord(rng), coord(rng)}};
      const int l = len(rng);
      while (static_cast<int>(cells.size()) < l) {
        const int s = step(rng);
        const CellId next = s < 6 ? neighbors(cells.back())[s] : CellId{coord(rng), coord(rng)};
        if (next != cells.back()) cells.push_back(next);
      }
      flows.push_back(flow_of(std::move(cells)));
    }
    const TrajGraph tg = TrajGraph::build(flows);
    const std::size_t n = tg.size();
    max_nodes = std::max(max_nodes, n);
    for (std::size_t i = 0; i < n; ++i) {
      if (tg.a().row_begin(i) != tg.a().row_end(i)) row_err = std::max(row_err, std::abs(tg.a().row_sum(i) - 1.0));
    }
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        sym_err = std::max(sym_err, std::abs(tg.a_sym().at(i, j) - tg.a_sym().at(j, i)));
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = tg.a_sym().at(i, j);
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    radius = std::max(radius, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  const bool pass = fig_ok && row_err <= 1e-9 && sym_err <= 1e-9 && radius <= 1.0 + 1e-6 && max_nodes <= 50;
  return {pass, std::string("figure case ") + (fig_ok ? "ok" : "wrong") + ", row error " + fmt(row_err) +
                    ", asymmetry " + fmt(sym_err) + ", spectral radius " + fmt(radius, 12) + ", max nodes " +
                    std::to_string(max_nodes)};
}

// ---------------------------------------------------------------- 4
Outcome temporal() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> t(0.0, 86400.0);
  std::uniform_real_distribution<double> shift(-1e4, 1e4);
  std::uniform_real_distribution<double> learned(0.0, 2.0);
  double err = 0.0;
  double shift_err = 0.0;
  for (int set = 0; set < 2; ++set) {
    std::vector<double> w = initial_time_frequencies(64);
    // Also with arbitrary (trained-looking) frequencies.
    if (set == 1) {
      for (double& x : w) x = learned(rng);
    }
    for (int i = 0; i < 1000; ++i) {
      const double t1 = t(rng);
      const double t2 = t(rng);
      const double d = shift(rng);
      const auto z1 = temporal_encode(t1, w);
      const auto z2 = temporal_encode(t2, w);
      const auto s1 = temporal_encode(t1 + d, w);
      const auto s2 = temporal_encode(t2 + d, w);
      double dot = 0.0;
      double dot_shift = 0.0;
      double want = 0.0;
      for (std::size_t k = 0; k < z1.size(); ++k) {
        dot += z1[k] * z2[k];
        dot_shift += s1[k] * s2[k];
      }
      for (double wk : w) want += std::cos(wk * (t2 - t1));
      err = std::max(err, std::abs(dot - want));
      shift_err = std::max(shift_err, std::abs(dot - dot_shift));
    }
  }
  return {err <= 1e-9 && shift_err <= 1e-9, "max error " + fmt(err) + ", shift error " + fmt(shift_err)};
}

// ---------------------------------------------------------------- 5
Outcome gradients() {
  MobilityFlow a;
  a.trajectory_id = "a#0";
  a.user_id = "a";
  a.cells = {CellId{0, 0}, CellId{1, 0}, CellId{2, 0}, CellId{2, 1}, CellId{3, 1}};
  a.times = {0, 60, 150, 200, 320};
  a.poi_ids = {"p1", "", "p2", "", "p3"};
  MobilityFlow b;
  b.trajectory_id = "b#0";
  b.user_id = "b";
  b.cells = {CellId{1, 0}, CellId{1, 1}, CellId{0, 1}, CellId{0, 0}};
  b.times = {0, 90, 240, 300};
  b.poi_ids = {"p2", "", "", "p1"};
  const std::vector<MobilityFlow> flows{a, b};

  ModelConfig cfg = ModelConfig::tiny();
  cfg.d_model = 8;
  cfg.d_gcn = 6;
  cfg.heads = 2;
  cfg.d_head = 4;
  cfg.gcn_layers = 2;
  cfg.encoder_layers = 2;
  const TrajGraph g = TrajGraph::build(flows);
  Model model = Model::create(cfg, Vocab(g.nodes()), PoiVocab::from_flows(flows), g.a_sym(), 11);
  model.ensure_classifier({"a", "b"}, 12);
  std::vector<EncodedSequence> seqs{model.encode(a), model.encode(b)};
  std::mt19937_64 rng(13);
  const MaskedBatch batch = mask_batch(seqs, model.vocab().size(), 0.4, rng);
  const std::vector<std::size_t> truths{0, 1};
  const ClassWeights weights = ClassWeights::from_counts(std::vector<std::size_t>{1, 1}, 0.99);

  auto loss = [&](Tape& t) {
    ForwardPass pass(model, t);
    const Var mlm = mlm_loss(pass, batch);
    const Var logits = concat_rows({pass.classify(seqs[0]), pass.classify(seqs[1])});
    return add(mlm, balanced_ce_loss(logits, truths, weights));
  };
  GradCheckOptions o;
  o.tol = 1e-4;
  const GradCheckReport r = grad_check(loss, model.store().all(), o);
  std::string worst;
  double worst_err = -1.0;
  for (const auto& p : r.params) {
    if (p.max_rel_error > worst_err) {
      worst_err = p.max_rel_error;
      worst = p.name;
    }
  }
  return {r.passed && r.max_rel_error < 1e-4,
          std::to_string(r.params.size()) + " tensors, max relative error " + fmt(r.max_rel_error) + " (" + worst + ")"};
}

// ---------------------------------------------------------------- 6
Outcome st_nova_reduction() {
  const std::size_t d = 16;
  EncoderDims dims;
  dims.d_model = d;
  dims.heads = 4;
  dims.d_head = 4;
  dims.side_channels = 3;
  ParamStore store;
  std::mt19937_64 rng(61);
  EncoderParams p = EncoderParams::create(store, "enc", dims, rng);
  p.b_o->value() = testing::random_tensor(1, d, rng);
  Tensor2 w1(4 * d, d);
  for (std::size_t i = 0; i < d; ++i) w1(i, i) = 1.0;
  const double lift = 20.0;
  p.fuse_w1->value() = w1;
  p.fuse_b1->value() = Tensor2(1, d, lift);
  p.fuse_w2->value() = Tensor2::identity(d);
  p.fuse_b2->value() = Tensor2(1, d, -lift);

  double diff = 0.0;
  bool values_fixed = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 9);
    Tape t;
    const EncoderVars v = EncoderVars::bind(t, p);
    const Var r = t.constant(testing::random_tensor(m, d, rng, -2.0, 2.0));
    auto side = [&] {
      return SideChannels{t.constant(testing::random_tensor(m, d, rng, -5.0, 5.0)),
                          t.constant(testing::random_tensor(m, d, rng, -5.0, 5.0)),
                          t.constant(testing::random_tensor(m, d, rng, -5.0, 5.0))};
    };
    const auto mask = AttentionMask::all(m);
    const Var nova = st_nova(r, side(), v, mask, std::sqrt(static_cast<double>(dims.d_head)));
    diff = std::max(diff, max_abs_diff(nova.value(), standard_attention(r, v, mask).value()));

    // Values invariance under random fusion weights.
    ParamStore other;
    std::mt19937_64 r2(1000 + trial);
    EncoderParams q = EncoderParams::create(other, "enc", dims, r2);
    Tape t2;
    const EncoderVars vq = EncoderVars::bind(t2, q);
    const Tensor2 rid = testing::random_tensor(m, d, rng);
    AttentionTrace a1;
    AttentionTrace a2;
    auto side2 = [&] {
      return SideChannels{t2.constant(testing::random_tensor(m, d, rng)), t2.constant(testing::random_tensor(m, d, rng)),
                          t2.constant(testing::random_tensor(m, d, rng))};
    };
    st_nova(t2.constant(rid), side2(), vq, mask, std::nullopt, &a1);
    st_nova(t2.constant(rid), side2(), vq, mask, std::nullopt, &a2);
    values_fixed = values_fixed && a1.values.value() == a2.values.value();
  }
  return {diff <= 1e-9 && values_fixed, "max difference " + fmt(diff) + ", values " +
                                            (values_fixed ? "identical" : "changed")};
}

// ---------------------------------------------------------------- 7
Outcome mlm_overfit() {
  PipelineConfig cfg;
  cfg.seed = 7;
  cfg.resolution = Resolution::Hex9;
  cfg.synth.n_users = 4;
  cfg.synth.trajectories_per_user = 5;
  cfg.synth.anchors_per_user = 3;
  cfg.synth.region_radius = 5;
  cfg.synth.noise = 0.1;
  const SynthCorpus synth = synthesize(cfg);
  const Corpus corpus = prepare_corpus(synth.records, synth.grid, cfg);

  cfg.model = ModelConfig::tiny();
  cfg.model.d_model = 128;
  cfg.model.d_gcn = 32;
  cfg.model.heads = 4;
  cfg.model.d_head = 32;
  cfg.model.encoder_layers = 2;
  Model model = build_model(corpus.flows, cfg);
  std::vector<std::size_t> all(corpus.flows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto seqs = encode_all(model, corpus.flows, all);

  TrainConfig tc;
  tc.optimizer = OptimizerKind::Adam;
  tc.lr = 0.0003;
  tc.lr_decay = 1.0;
  tc.batch_size = 4;
  tc.epochs = 200;
  tc.mask_ratio = 0.4;
  tc.seed = cfg.pretrain_seed();
  const TrainHistory h = pretrain(model, seqs, tc);
  const double loss = h.epochs.back().loss;
  double recovery = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) recovery += mlm_recovery(model, seqs, 0.4, 100 + s) / 5.0;
  return {corpus.flows.size() == 20 && loss < 0.1 && recovery >= 0.95,
          std::to_string(corpus.flows.size()) + " trajectories, " + std::to_string(model.vocab().cell_count()) +
              " cells, final loss " + fmt(loss) + ", recovery " + fmt(recovery)};
}

// ---------------------------------------------------------------- 8
PipelineConfig tul_config(std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.resolution = Resolution::Hex9;
  cfg.synth.n_users = 10;
  cfg.synth.trajectories_per_user = 30;
  cfg.synth.anchors_per_user = 4;
  cfg.synth.region_radius = 8;
  cfg.synth.noise = 0.1;
  cfg.model = ModelConfig::tiny();
  cfg.pretrain.optimizer = OptimizerKind::Adam;
  cfg.pretrain.lr = 0.005;
  cfg.pretrain.epochs = 5;
  cfg.pretrain.batch_size = 16;
  cfg.finetune.optimizer = OptimizerKind::Adam;
  cfg.finetune.lr = 0.005;
  cfg.finetune.epochs = 20;
  cfg.finetune.batch_size = 16;
  return cfg;
}

Outcome tul_end_to_end() {
  std::ostringstream detail;
  bool primary_ok = false;
  int not_raised = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PipelineConfig cfg = tul_config(seed);
    const SynthCorpus synth = synthesize(cfg);
    const Corpus corpus = prepare_corpus(synth.records, synth.grid, cfg);
    Model model = build_model(corpus.flows, cfg);
    pretrain_stage(model, corpus.flows, cfg, nullptr);
    finetune_stage(model, corpus.flows, cfg, nullptr);
    const EvalReport train = evaluate_stage(model, corpus.flows, cfg, EvalSplit::Train);
    const EvalReport test = evaluate_stage(model, corpus.flows, cfg, EvalSplit::Test);
    model.set_use_skip(false);
    const EvalReport ablated = evaluate_stage(model, corpus.flows, cfg, EvalSplit::Test);
    if (ablated.acc_at_1 <= test.acc_at_1) ++not_raised;
    if (seed == 1) {
      primary_ok = train.acc_at_1 >= 0.95 && test.acc_at_1 >= 3.0 * test.random_acc_at_1;
    }
    detail << (seed == 1 ? "" : "; ") << "seed " << seed << " train " << fmt(train.acc_at_1, 3) << " test "
           << fmt(test.acc_at_1, 3) << " ablated " << fmt(ablated.acc_at_1, 3);
  }
  detail << "; skip ablation did not help on " << not_raised << "/5 seeds";
  return {primary_ok && not_raised >= 3, detail.str()};
}

// ---------------------------------------------------------------- 9
Outcome class_weights() {
  bool ok = class_balance_weight(1, 0.99) == 1.0 && class_balance_weight(7, 0.0) == 1.0 &&
            class_balance_weight(1, 0.5) == 1.0;
  const double w2 = class_balance_weight(2, 0.99);
  ok = ok && std::abs(w2 - 0.01 / 0.0199) <= 1e-9 && std::abs(w2 - 0.502512) < 1e-6;
  for (std::size_t n = 1; n < 1000; ++n) ok = ok && class_balance_weight(n + 1, 0.99) < class_balance_weight(n, 0.99);
  return {ok, "w(2, 0.99) = " + fmt(w2, 12)};
}

// ---------------------------------------------------------------- 10
Outcome metric_oracles() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  double err = 0.0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t users = 2 + static_cast<std::size_t>(set % 12);
    const std::size_t n = 1 + static_cast<std::size_t>(set % 37);
    std::uniform_int_distribution<std::size_t> who(0, users - 1);
    std::vector<std::vector<std::size_t>> rankings;
    std::vector<std::size_t> truths;
    std::vector<std::size_t> preds;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(users);
      // Coarse scores so ties occur.
      for (double& v : s) v = std::round(score(rng) * 4.0);
      rankings.push_back(rank_users(s));
      preds.push_back(rankings.back().front());
      truths.push_back(who(rng));
    }
    for (std::size_t k : {1u, 3u, 5u}) {
      // Brute force: truth is within the top k when fewer than k users outrank it.
      std::size_t hit = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t pos = 0;
        while (rankings[i][pos] != truths[i]) ++pos;
        hit += pos < k ? 1 : 0;
      }
      err = std::max(err, std::abs(acc_at_k(rankings, truths, k) - static_cast<double>(hit) / static_cast<double>(n)));
    }
    std::vector<std::vector<double>> c(users, std::vector<double>(users, 0.0));
    for (std::size_t i = 0; i < n; ++i) c[truths[i]][preds[i]] += 1.0;
    double p = 0.0;
    double r = 0.0;
    double f = 0.0;
    for (std::size_t u = 0; u < users; ++u) {
      double col = 0.0;
      double row = 0.0;
      for (std::size_t v = 0; v < users; ++v) {
        col += c[v][u];
        row += c[u][v];
      }
      const double pu = col > 0.0 ? c[u][u] / col : 0.0;
      const double ru = row > 0.0 ? c[u][u] / row : 0.0;
      p += pu;
      r += ru;
      f += pu + ru > 0.0 ? 2.0 * pu * ru / (pu + ru) : 0.0;
    }
    const Prf got = macro_prf(preds, truths, users);
    const double nu = static_cast<double>(users);
    err = std::max({err, std::abs(got.precision - p / nu), std::abs(got.recall - r / nu), std::abs(got.f1 - f / nu)});
  }

  std::uniform_int_distribution<std::size_t> who(0, 19);
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> truths;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> s(20);
    for (double& v : s) v = score(rng);
    rankings.push_back(rank_users(s));
    truths.push_back(who(rng));
  }
  const double chance = acc_at_k(rankings, truths, 1);
  return {err <= 1e-12 && std::abs(chance - 0.05) <= 0.01,
          "max oracle error " + fmt(err) + ", random acc@1 " + fmt(chance)};
}

// ---------------------------------------------------------------- 11
int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  testing::TempDir dir("determinism");
  const auto config = dir.path() / "config.json";
  std::ofstream(config) << R"({
  "seed": 5,
  "grid": {"resolution": "hex9"},
  "synth": {"n_users": 5, "trajectories_per_user": 10, "noise": 0.1, "region_radius": 6},
  "model": {"preset": "tiny"},
  "train": {"optimizer": "adam", "lr": 0.005, "batch_size": 8},
  "pretrain": {"epochs": 3},
  "finetune": {"epochs": 6}
})";
  const char* steps[] = {"synth", "tessellate", "flow", "graph", "pretrain", "finetune", "evaluate"};
  std::string reports[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = dir.path() / ("run" + std::to_string(k));
    for (const char* step : steps) {
      const std::string cmd =
          std::string(HEXLINK_CLI) + " --config " + config.string() + " --out " + out.string() + " " + step;
      if (const int code = run(cmd); code != 0) {
        return {false, std::string("step ") + step + " exited with " + std::to_string(code)};
      }
    }
    reports[k] = slurp(out / "report.json");
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, std::to_string(reports[0].size()) + " report bytes, " + (same ? "identical" : "different")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "sparsity arithmetic", 1.0, sparsity_toy},
      {2, "cell geometry table", 1.0, table_geometry},
      {3, "adjacency construction", 10.0, adjacency},
      {4, "temporal encoding", 5.0, temporal},
      {5, "gradient certification", 60.0, gradients},
      {6, "ST-NOVA reduction", 5.0, st_nova_reduction},
      {7, "MLM overfit", 300.0, mlm_overfit},
      {8, "TUL end-to-end", 600.0, tul_end_to_end},
      {9, "class-balance weights", 1.0, class_weights},
      {10, "metric oracles", 10.0, metric_oracles},
      {11, "pipeline determinism", 900.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s  %2d  %-24s %8.2f s (limit %g s%s)  %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.limit_s,
                in_time ? "" : ", exceeded", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of 11 criteria passed\n", 11 - failed);
  return failed == 0 ? 0 : 1;
}
