#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "hexlink/eval.hpp"
#include "hexlink/hexgrid.hpp"
#include "hexlink/mobility.hpp"
#include "hexlink/model.hpp"
#include "hexlink/synth.hpp"
#include "hexlink/training.hpp"

#include "json.hpp"

namespace hexlink {

// Everything a full run needs. JSON sections: grid, flow, synth, model,
// train (shared by both stages), pretrain, finetune, eval, sweep.
struct PipelineConfig {
  std::uint64_t seed = 1;

  Resolution resolution = Resolution::Hex8;
  double custom_edge_m = 0.0;

  FlowMode flow_mode = FlowMode::Checkin;
  std::size_t min_length = kDefaultMinTrajectoryLength;
  // 0 picks the mode's default gap.
  double gap_seconds = 0.0;

  SynthSpec synth;
  double synth_origin_lat = 40.7128;
  double synth_origin_lon = -74.0060;

  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain;
  TrainConfig finetune;
  bool skip_pretrain = false;

  double split_ratio = 0.8;
  std::vector<Resolution> sweep_resolutions{Resolution::Hex6, Resolution::Hex7, Resolution::Hex8, Resolution::Hex9,
                                            Resolution::Hex10};

  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Seeds of the stages are derived from `seed`.
  std::uint64_t model_seed() const { return seed * 4 + 1; }
  std::uint64_t pretrain_seed() const { return seed * 4 + 2; }
  std::uint64_t finetune_seed() const { return seed * 4 + 3; }
  std::uint64_t split_seed() const { return seed * 4 + 4; }
  double effective_gap() const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

HexGridConfig synth_grid(const PipelineConfig& cfg);
// Generator seeded from cfg.seed.
SynthCorpus synthesize(const PipelineConfig& cfg);

struct Corpus {
  HexGridConfig grid;
  std::vector<Trajectory> trajectories;
  std::vector<MobilityFlow> flows;
};

// Tessellates around the records' centroid and converts trajectories to flows.
Corpus prepare_corpus(std::span<const CheckInRecord> records, const PipelineConfig& cfg);
// Re-uses a known grid.
Corpus prepare_corpus(std::span<const CheckInRecord> records, const HexGridConfig& grid, const PipelineConfig& cfg);

// Graph and vocabularies over all flows, fresh parameters.
Model build_model(std::span<const MobilityFlow> flows, const PipelineConfig& cfg);

std::vector<EncodedSequence> encode_all(const Model& model, std::span<const MobilityFlow> flows,
                                        std::span<const std::size_t> indices);

// MLM on the training split.
TrainHistory pretrain_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                            std::ostream* log);
// Adds the user head and trains it with class-balanced loss on the training split.
TrainHistory finetune_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                            std::ostream* log);

enum class EvalSplit { Train, Test };
EvalReport evaluate_stage(Model& model, std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                          EvalSplit which = EvalSplit::Test);

struct ExperimentResult {
  EvalReport test;
  EvalReport train;
  TrainHistory pretrain;
  TrainHistory finetune;
  std::size_t n_cells = 0;
};

// build_model -> pretrain_stage -> finetune_stage -> evaluate_stage.
ExperimentResult run_experiment(std::span<const MobilityFlow> flows, const PipelineConfig& cfg,
                                std::ostream* log = nullptr);

struct SweepRow {
  Resolution resolution;
  std::size_t n_cells = 0;
  EvalReport report;
};

std::vector<SweepRow> resolution_sweep(std::span<const CheckInRecord> records,
                                       std::span<const Resolution> resolutions, const PipelineConfig& cfg,
                                       std::ostream* log = nullptr);
// {"columns": [...], "rows": [[resolution, cells, Acc@1, Acc@5, P, R, F1], ...]}
nlohmann::json sweep_table(std::span<const SweepRow> rows);

}  // namespace hexlink
