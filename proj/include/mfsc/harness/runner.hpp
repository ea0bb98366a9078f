#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mfsc/harness/config.hpp"
#include "mfsc/harness/evaluation.hpp"

namespace mfsc::harness {

struct RunOptions {
  bool resume = true;  // continue from trainer_state.json when present
  std::size_t stop_after_iterations = 0;  // 0 = run to total_steps; for interrupt tests
  std::function<void(const json&)> on_record;  // every metrics line, as written
};

/// Version of the metrics.jsonl record layout, written to every manifest.
inline constexpr int kMetricsSchema = 1;

struct SeedResult {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  std::string status;  // "complete", "stopped" or "aborted"
  std::uint64_t env_steps = 0;
  std::size_t iterations = 0;
  double oracle_return = 0.0;
  std::map<std::string, agent::EvalResult> final_eval;  // by mode name
  RepresentationReport representation;
  std::vector<double> episode_returns;  // raw, in completion order
};

/// Trains one seed into `dir`: metrics.jsonl, checkpoint.bin, trainer_state.json.
SeedResult train_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                      const RunOptions& opts = {});

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<SeedResult> seeds;
};

/// Every seed of `cfg` under resolve_output(cfg.output_dir), plus manifest.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Rebuilds an agent from a seed directory's checkpoint.
agent::Agent load_agent(const ExperimentConfig& cfg, const std::filesystem::path& seed_dir);

/// Final evaluation of a trained agent: every mode plus representation quality.
json evaluation_record(const ExperimentConfig& cfg, const agent::Agent& agent, std::uint64_t seed,
                       std::uint64_t step, SeedResult* into = nullptr);

}  // namespace mfsc::harness
