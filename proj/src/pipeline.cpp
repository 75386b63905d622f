#include "hexlink/pipeline.hpp"

#include <fstream>

#include "hexlink/errors.hpp"
#include "hexlink/trajgraph.hpp"

namespace hexlink {

namespace {

nlohmann::json section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nlohmann::json::object();
  const auto& s = j.at(key);
  if (!s.is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return s;
}

FlowMode parse_mode(const std::string& s) {
  if (s == "checkin") return FlowMode::Checkin;
  if (s == "continuous") return FlowMode::Continuous;
  throw ConfigError("unknown flow mode '" + s + "'");
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);

    const auto grid = section(j, "grid");
    if (grid.contains("resolution")) c.resolution = parse_resolution(grid.at("resolution").get<std::string>());
    c.custom_edge_m = grid.value("edge_length_m", c.custom_edge_m);
    if (c.custom_edge_m > 0.0) c.resolution = Resolution::Custom;

    const auto flow = section(j, "flow");
    if (flow.contains("mode")) c.flow_mode = parse_mode(flow.at("mode").get<std::string>());
    c.min_length = flow.value("min_length", c.min_length);
    c.gap_seconds = flow.value("gap_seconds", c.gap_seconds);

    const auto synth = section(j, "synth");
    c.synth = SynthSpec::from_json(synth, c.synth);
    c.synth_origin_lat = synth.value("origin_lat", c.synth_origin_lat);
    c.synth_origin_lon = synth.value("origin_lon", c.synth_origin_lon);

    c.model = ModelConfig::from_json(section(j, "model"), c.model);
    const TrainConfig shared = TrainConfig::from_json(section(j, "train"), TrainConfig{});
    c.pretrain = TrainConfig::from_json(section(j, "pretrain"), shared);
    c.finetune = TrainConfig::from_json(section(j, "finetune"), shared);
    c.skip_pretrain = section(j, "pretrain").value("skip", c.skip_pretrain);

    const auto eval = section(j, "eval");
    c.split_ratio = eval.value("split_ratio", c.split_ratio);
    if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");

    const auto sweep = section(j, "sweep");
    if (sweep.contains("resolutions")) {
      c.sweep_resolutions.clear();
      for (const auto& r : sweep.at("resolutions")) c.sweep_resolutions.push_back(parse_resolution(r.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  if (c.resolution != Resolution::Custom) c.custom_edge_m = 0.0;
  return c;
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json res = nlohmann::json::array();
  for (Resolution r : sweep_resolutions) res.push_back(std::string(resolution_name(r)));
  nlohmann::json grid = {{"resolution", std::string(resolution_name(resolution))}};
  if (resolution == Resolution::Custom) grid["edge_length_m"] = custom_edge_m;
  nlohmann::json synth_j = synth.to_json();
  synth_j["origin_lat"] = synth_origin_lat;
  synth_j["origin_lon"] = synth_origin_lon;
  nlohmann::json pre = pretrain.to_json();
  pre["skip"] = skip_pretrain;
  return {{"seed", seed},
          {"grid", grid},
          {"flow",
           {{"mode", flow_mode == FlowMode::Checkin ? "checkin" : "continuous"},
            {"min_length", min_length},
            {"gap_seconds", gap_seconds}}},
          {"synth", synth_j},
          {"model", model.to_json()},
          {"pretrain", pre},
          {"finetune", finetune.to_json()},
          {"eval", {{"split_ratio", split_ratio}}},
          {"sweep", {{"resolutions", res}}}};
}

double PipelineConfig::effective_gap() const {
  if (gap_seconds > 0.0) return gap_seconds;
  return flow_mode == FlowMode::Checkin ? kCheckinGapSeconds : kContinuousGapSeconds;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return PipelineConfig::from_json(j);
}

HexGridConfig synth_grid(const PipelineConfig& cfg) {
  if (cfg.resolution == Resolution::Custom) {
    return HexGridConfig::custom(cfg.custom_edge_m, cfg.synth_origin_lat, cfg.synth_origin_lon);
  }
  return HexGridConfig::at_resolution(cfg.resolution, cfg.synth_origin_lat, cfg.synth_origin_lon);
}

SynthCorpus synthesize(const PipelineConfig& cfg) {
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  return generate_synthetic(spec, synth_grid(cfg));
}

Corpus prepare_corpus(std::span<const CheckInRecord> records, const PipelineConfig& cfg) {
  if (records.empty()) throw EmptyCorpusError("no check-in records");
  return prepare_corpus(records, grid_for_records(records, cfg.resolution, cfg.custom_edge_m), cfg);
}

Corpus prepare_corpus(std::span<const CheckInRecord> records, const HexGridConfig& grid, const PipelineConfig& cfg) {
  Corpus c;
  c.grid = grid;
  c.trajectories = build_trajectories(records, cfg.effective_gap(), cfg.min_length);
  if (c.trajectories.empty()) throw EmptyCorpusError("no trajectory survived the length filter");
  c.flows.reserve(c.trajectories.size());
  for (const auto& t : c.trajectories) c.flows.push_back(to_flow(t, grid, cfg.flow_mode));
  return c;
}

Model build_model(std::span<const MobilityFlow> flows, const PipelineConfig& cfg) {
  const TrajGraph graph = TrajGraph::build(flows);
  return Model::create(cfg.model, Vocab(graph.nodes()), PoiVocab::from_flows(flows), graph.a_sym(),
                       cfg.model_seed());
}

std::vector<EncodedSequence> encode_all(const Model& model, std::span<const MobilityFlow> flows,
                                        std::span<const std::size_t> indices) {
  std::vector<EncodedSequence> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(model.encode(flows[i]));
  return out;
}

TrainHistory pretrain_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                            std::ostream* log) {
  const Split split = split_dataset(flows, cfg.split_ratio, cfg.split_seed());
  const auto seqs = encode_all(model, flows, split.train);
  TrainConfig tc = cfg.pretrain;
  tc.seed = cfg.pretrain_seed();
  TrainHistory h = pretrain(model, seqs, tc, log);
  model.extra["pretrain"] = tc.to_json();
  return h;
}

TrainHistory finetune_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                            std::ostream* log) {
  const LabelSet labels = label_flows(flows);
  const Split split = split_dataset(flows, cfg.split_ratio, cfg.split_seed());
  model.ensure_classifier(labels.users, cfg.finetune_seed());
  std::vector<std::size_t> counts(labels.users.size(), 0);
  std::vector<std::size_t> train_labels;
  for (std::size_t i : split.train) {
    ++counts[labels.labels[i]];
    train_labels.push_back(labels.labels[i]);
  }
  const auto seqs = encode_all(model, flows, split.train);
  TrainConfig tc = cfg.finetune;
  tc.seed = cfg.finetune_seed();
  TrainHistory h = finetune(model, seqs, train_labels, ClassWeights::from_counts(counts, tc.beta_balance), tc, log);
  model.extra["finetune"] = tc.to_json();
  return h;
}

EvalReport evaluate_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                          EvalSplit which) {
  const LabelSet labels = label_flows(flows);
  if (labels.users != model.labels()) throw LabelError("flows and checkpoint disagree on the user set");
  const Split split = split_dataset(flows, cfg.split_ratio, cfg.split_seed());
  std::vector<std::size_t> counts(labels.users.size(), 0);
  for (std::size_t i : split.train) ++counts[labels.labels[i]];
  const auto& idx = which == EvalSplit::Test ? split.test : split.train;
  std::vector<std::size_t> truths;
  for (std::size_t i : idx) truths.push_back(labels.labels[i]);
  const auto seqs = encode_all(model, flows, idx);
  const auto logits = predict_logits(model, seqs);
  return make_report(logits, truths, counts);
}

ExperimentResult run_experiment(std::span<const MobilityFlow> flows, const PipelineConfig& cfg, std::ostream* log) {
  Model model = build_model(flows, cfg);
  ExperimentResult r;
  r.n_cells = model.vocab().cell_count();
  if (!cfg.skip_pretrain) r.pretrain = pretrain_stage(model, flows, cfg, log);
  r.finetune = finetune_stage(model, flows, cfg, log);
  r.test = evaluate_stage(model, flows, cfg, EvalSplit::Test);
  r.train = evaluate_stage(model, flows, cfg, EvalSplit::Train);
  return r;
}

std::vector<SweepRow> resolution_sweep(std::span<const CheckInRecord> records,
                                       std::span<const Resolution> resolutions, const PipelineConfig& cfg,
                                       std::ostream* log) {
  std::vector<SweepRow> rows;
  for (Resolution res : resolutions) {
    if (res == Resolution::Custom) throw ConfigError("sweeps run over named resolutions only");
    PipelineConfig c = cfg;
    c.resolution = res;
    c.custom_edge_m = 0.0;
    const Corpus corpus = prepare_corpus(records, c);
    ExperimentResult r = run_experiment(corpus.flows, c, log);
    rows.push_back({res, r.n_cells, r.test});
  }
  return rows;
}

nlohmann::json sweep_table(std::span<const SweepRow> rows) {
  nlohmann::json out = {{"columns", {"resolution", "cells", "acc_at_1", "acc_at_5", "precision", "recall", "f1"}},
                        {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({std::string(resolution_name(r.resolution)), r.n_cells, r.report.acc_at_1,
                           r.report.acc_at_5, r.report.macro_precision, r.report.macro_recall, r.report.macro_f1});
  }
  return out;
}

}  // namespace hexlink
