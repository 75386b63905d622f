// hexlink command line: synthetic data, tessellation, flows, graph, training
// and evaluation. Every subcommand reads and writes inside the --out directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "hexlink/errors.hpp"
#include "hexlink/flow_io.hpp"
#include "hexlink/pipeline.hpp"
#include "hexlink/trajgraph.hpp"

namespace fs = std::filesystem;
using namespace hexlink;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string input;  // check-in CSV, defaults to <out>/checkins.csv
  bool cold = false;
};

struct Paths {
  fs::path dir;
  fs::path checkins() const { return dir / "checkins.csv"; }
  fs::path grid() const { return dir / "grid.json"; }
  fs::path cells() const { return dir / "cells.csv"; }
  fs::path flows() const { return dir / "flows.csv"; }
  fs::path flow_side() const { return dir / "flows_side.jsonl"; }
  fs::path stats() const { return dir / "stats.json"; }
  fs::path graph() const { return dir / "graph.json"; }
  fs::path pretrain_model() const { return dir / "pretrain_model.json"; }
  fs::path pretrain_log() const { return dir / "pretrain_log.jsonl"; }
  fs::path finetune_model() const { return dir / "finetune_model.json"; }
  fs::path finetune_log() const { return dir / "finetune_log.jsonl"; }
  fs::path report() const { return dir / "report.json"; }
  fs::path sweep() const { return dir / "sweep.json"; }
};

PipelineConfig load_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

Paths workspace(const Globals& g) {
  Paths p{g.out};
  fs::create_directories(p.dir);
  return p;
}

fs::path checkin_input(const Globals& g, const Paths& p) { return g.input.empty() ? p.checkins() : fs::path(g.input); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::ofstream open_log(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<CheckInRecord> read_records(const fs::path& path) {
  LoadResult r = load_checkins(path);
  if (r.malformed > 0) std::cerr << "skipped " << r.malformed << " malformed rows of " << r.rows_read << "\n";
  return std::move(r.records);
}

HexGridConfig grid_for(const Paths& p, std::span<const CheckInRecord> records, const PipelineConfig& cfg) {
  if (fs::exists(p.grid())) return grid_from_json(read_json(p.grid()));
  return grid_for_records(records, cfg.resolution, cfg.custom_edge_m);
}

std::vector<MobilityFlow> read_corpus_flows(const Paths& p) {
  std::vector<MobilityFlow> flows = read_flows(p.flows());
  if (fs::exists(p.flow_side())) read_flow_side(p.flow_side(), flows);
  return flows;
}

int cmd_synth(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const SynthCorpus corpus = synthesize(cfg);
  write_checkins(p.checkins(), corpus.records);
  std::cout << nlohmann::json{{"records", corpus.records.size()},
                              {"trajectories", corpus.flows.size()},
                              {"users", cfg.synth.n_users},
                              {"checkins", p.checkins().string()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_tessellate(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto records = read_records(checkin_input(g, p));
  if (records.empty()) throw EmptyCorpusError("no check-in records");
  const HexGridConfig grid = grid_for_records(records, cfg.resolution, cfg.custom_edge_m);
  write_json(p.grid(), to_json(grid));

  std::map<CellId, std::size_t> counts;
  for (const auto& r : records) ++counts[point_to_cell(project(r.lat, r.lon, grid), grid)];
  std::ofstream out(p.cells());
  if (!out) throw IoError("cannot write " + p.cells().string());
  out.precision(17);
  out << "key,q,r,lat,lon,records\n";
  for (const auto& [cell, n] : counts) {
    const GeoPoint c = unproject(cell_center(cell, grid), grid);
    out << cell.key() << ',' << cell.q << ',' << cell.r << ',' << c.lat << ',' << c.lon << ',' << n << '\n';
  }
  std::cout << nlohmann::json{{"cells", counts.size()}, {"area_km2", cell_area_km2(grid)}, {"grid", to_json(grid)}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_flow(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto records = read_records(checkin_input(g, p));
  if (records.empty()) throw EmptyCorpusError("no check-in records");
  const Corpus corpus = prepare_corpus(records, grid_for(p, records, cfg), cfg);
  write_flows(p.flows(), corpus.flows);
  write_flow_side(p.flow_side(), corpus.flows);
  std::size_t gaps = 0;
  for (const auto& f : corpus.flows) gaps += f.gaps.size();
  std::cout << nlohmann::json{{"flows", corpus.flows.size()}, {"gaps", gaps}}.dump(2) << "\n";
  return 0;
}

int cmd_stats(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto records = read_records(checkin_input(g, p));
  if (records.empty()) throw EmptyCorpusError("no check-in records");
  const HexGridConfig grid = grid_for(p, records, cfg);
  const auto trajectories = build_trajectories(records, cfg.effective_gap(), cfg.min_length);
  const nlohmann::json report = to_json(sparsity_report(trajectories, grid));
  write_json(p.stats(), report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_graph(const Globals& g) {
  const Paths p = workspace(g);
  const auto flows = read_corpus_flows(p);
  const TrajGraph graph = TrajGraph::build(flows);
  write_json(p.graph(), graph.to_json());
  std::cout << nlohmann::json{{"nodes", graph.size()}, {"edges", graph.raw().nnz()}}.dump(2) << "\n";
  return 0;
}

// Saves the rolled-back parameters before reporting a numeric failure.
template <typename Stage>
TrainHistory guarded(Model& model, const fs::path& ckpt, Stage&& stage) {
  try {
    return stage();
  } catch (const NumericGuardError&) {
    model.save(ckpt);
    std::cerr << "last good parameters written to " << ckpt.string() << "\n";
    throw;
  }
}

nlohmann::json history_json(const TrainHistory& h) {
  return {{"epochs", h.epochs.size()},
          {"final_loss", h.epochs.empty() ? 0.0 : h.epochs.back().loss},
          {"final_lr", h.final_lr}};
}

int cmd_pretrain(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto flows = read_corpus_flows(p);
  Model model = build_model(flows, cfg);
  std::ofstream log = open_log(p.pretrain_log());
  const TrainHistory h = guarded(model, p.pretrain_model(), [&] { return pretrain_stage(model, flows, cfg, &log); });
  model.save(p.pretrain_model());
  std::cout << history_json(h).dump(2) << "\n";
  return 0;
}

int cmd_finetune(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto flows = read_corpus_flows(p);
  const bool cold = g.cold || cfg.skip_pretrain;
  Model model = cold ? build_model(flows, cfg) : Model::load(p.pretrain_model());
  std::ofstream log = open_log(p.finetune_log());
  const TrainHistory h = guarded(model, p.finetune_model(), [&] { return finetune_stage(model, flows, cfg, &log); });
  model.save(p.finetune_model());
  std::cout << history_json(h).dump(2) << "\n";
  return 0;
}

int cmd_evaluate(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto flows = read_corpus_flows(p);
  Model model = Model::load(p.finetune_model());
  const EvalReport report = evaluate_stage(model, flows, cfg);
  write_json(p.report(), report.to_json());
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_sweep(const Globals& g) {
  const PipelineConfig cfg = load_config(g);
  const Paths p = workspace(g);
  const auto records = read_records(checkin_input(g, p));
  const auto rows = resolution_sweep(records, cfg.sweep_resolutions, cfg);
  const nlohmann::json table = sweep_table(rows);
  write_json(p.sweep(), table);
  std::cout << table.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-user linking on hexagonal mobility flows"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random stage");
  app.add_option("--out", g.out, "Working directory for inputs and outputs");

  std::map<std::string, int (*)(const Globals&)> handlers{
      {"synth", cmd_synth},   {"tessellate", cmd_tessellate}, {"flow", cmd_flow},
      {"stats", cmd_stats},   {"graph", cmd_graph},           {"pretrain", cmd_pretrain},
      {"finetune", cmd_finetune}, {"evaluate", cmd_evaluate}, {"sweep", cmd_sweep}};
  const std::map<std::string, std::string> help{
      {"synth", "Generate a synthetic check-in corpus"},
      {"tessellate", "Fit a hex grid to the check-ins and list occupied cells"},
      {"flow", "Convert check-ins to hex mobility flows"},
      {"stats", "User-location and user-cell sparsity"},
      {"graph", "Build the trajectory graph of the flows"},
      {"pretrain", "Masked-cell pretraining"},
      {"finetune", "Train the user classifier"},
      {"evaluate", "Score the classifier on the held-out split"},
      {"sweep", "Retrain and evaluate at several hex resolutions"}};
  for (const auto& [name, text] : help) {
    CLI::App* sub = app.add_subcommand(name, text);
    sub->fallthrough();
    if (name == "tessellate" || name == "flow" || name == "stats" || name == "sweep") {
      sub->add_option("--input", g.input, "Check-in CSV (default <out>/checkins.csv)");
    }
    if (name == "finetune") sub->add_flag("--cold", g.cold, "Start from fresh parameters instead of pretraining");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return handlers.at(name)(g);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericGuardError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
}
