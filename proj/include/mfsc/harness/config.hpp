#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfsc/agent/agent.hpp"
#include "mfsc/envs/gridworld.hpp"

namespace mfsc::harness {

using nlohmann::json;

/// Invalid or unknown configuration field. The message names the field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalMode {
  enum class Kind { full, missing_view, noisy_view };
  Kind kind = Kind::full;
  std::size_t view = 0;

  std::string name() const;  // "full", "missing_view(1)", "noisy_view(1)"
  static EvalMode parse(const std::string& text);
  bool operator==(const EvalMode&) const = default;
};

struct ExperimentConfig {
  envs::EnvConfig env;
  agent::AgentConfig agent;  // model view shape and view count follow env
  std::vector<std::uint64_t> seeds{0};
  std::size_t total_steps = 20000;
  std::size_t eval_every = 5000;  // env steps; 0 disables periodic evaluation
  std::size_t eval_episodes = 0;  // 0 = one episode from every start state
  std::vector<EvalMode> eval_modes{EvalMode{}};
  std::size_t metric_pairs = 500;
  std::string output_dir = "runs/default";

  /// Copies env-derived shapes into the model config.
  void sync_model_shape();
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Strict parse: unknown keys and wrong types are ConfigErrors.
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
json to_json(const ExperimentConfig& cfg);
/// FNV-1a 64 over the canonical dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Directory under which relative output paths resolve: $MFSC_OUTPUT_ROOT
/// when set, otherwise the working directory.
std::filesystem::path output_root();
std::filesystem::path resolve_output(const std::string& dir);

}  // namespace mfsc::harness
