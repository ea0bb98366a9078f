#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsc/mdp/tabular.hpp"

namespace mfsc::envs {

class EnvError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ViewKind { full_map, agent_crop, goal_crop, noise };
enum class ViewStatus : std::uint8_t { present, missing, noise };

std::string to_string(ViewKind kind);
ViewKind view_kind_from_string(const std::string& name);

/// K views of one time step. Pixels are HWC floats in [0, 1]; with frame
/// stacking the last `frame_stack` frames are concatenated on the channel axis.
struct MultiViewObservation {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::vector<float>> views;
  std::vector<ViewStatus> status;

  std::size_t num_views() const { return views.size(); }
  std::size_t view_size() const { return height * width * channels; }
  std::size_t count(ViewStatus s) const;
};

struct EnvConfig {
  std::size_t grid_size = 7;
  double wall_density = 0.15;
  std::vector<ViewKind> views{ViewKind::full_map, ViewKind::agent_crop, ViewKind::goal_crop};
  bool distractor_view = false;        // appends one pure-noise view after `views`
  std::vector<double> missing_view_prob;  // per view (including the distractor); empty = all 0
  std::size_t frame_stack = 1;
  std::size_t horizon = 50;
  std::size_t view_height = 48, view_width = 48;
  std::size_t crop_radius = 2;  // crops cover (2r + 1) x (2r + 1) cells
  double discount = 0.99;
  std::uint64_t seed = 0;

  std::size_t num_views() const { return views.size() + (distractor_view ? 1 : 0); }
  void validate() const;
};

struct Transition {
  MultiViewObservation obs;
  std::size_t action = 0;
  double reward = 0.0;
  MultiViewObservation next_obs;
  bool done = false;       // reached the goal
  bool truncated = false;  // hit the horizon
  std::size_t ground_truth_state = 0;
  std::size_t next_ground_truth_state = 0;
};

inline constexpr double kStepReward = -0.01;
inline constexpr double kGoalReward = 1.0;
inline constexpr std::size_t kNumActions = 4;  // up, right, down, left

/// Everything that evolves within and across episodes (the layout does not).
struct EpisodeSnapshot {
  std::string rng;  // textual mt19937_64 state
  std::size_t state = 0, t = 0;
  bool started = false, over = false;
  std::vector<std::vector<float>> history;
};

/// Fixed-layout navigation task. The goal is absorbing in the tabular model.
class GridWorld {
 public:
  explicit GridWorld(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  std::size_t num_states() const { return cells_.size(); }
  std::size_t num_actions() const { return kNumActions; }
  std::size_t goal_state() const { return goal_; }
  /// Number of times the layout was redrawn because a cell could not reach the goal.
  std::size_t regenerations() const { return regenerations_; }
  std::uint64_t layout_seed() const { return layout_seed_; }
  bool is_wall(std::size_t row, std::size_t col) const { return walls_[row * config_.grid_size + col] != 0; }
  std::pair<std::size_t, std::size_t> cell(std::size_t state) const { return cells_.at(state); }
  /// States a fresh episode may start from (every non-goal cell).
  std::vector<std::size_t> start_states() const;

  /// Reseeds start-state, noise and missing-view draws; the layout is kept.
  void seed_episodes(std::uint64_t seed) { rng_.seed(seed); }

  const mdp::TabularMDP& tabular() const { return mdp_; }
  /// Successor under the deterministic dynamics.
  std::size_t successor(std::size_t state, std::size_t action) const;
  double reward(std::size_t state, std::size_t action) const;

  /// Starts an episode at `start` or at a uniformly drawn non-goal state.
  MultiViewObservation reset(std::optional<std::size_t> start = std::nullopt);
  Transition step(std::size_t action);
  bool episode_over() const { return over_; }
  std::size_t elapsed() const { return t_; }
  std::size_t current_state() const { return state_; }
  EpisodeSnapshot snapshot() const;
  void restore(const EpisodeSnapshot& snap);

  /// One clean frame of every non-noise view for a state (no stacking,
  /// no missing views). Noise views come back as zeros.
  MultiViewObservation render_state(std::size_t state) const;

 private:
  void build_layout();
  void build_mdp();
  void render_view(ViewKind kind, std::size_t state, float* out) const;
  MultiViewObservation observe();

  EnvConfig config_;
  std::uint64_t layout_seed_ = 0;
  std::size_t regenerations_ = 0;
  std::vector<std::uint8_t> walls_;
  std::vector<std::pair<std::size_t, std::size_t>> cells_;  // state -> (row, col)
  std::vector<std::size_t> state_of_;                       // row * N + col -> state or npos
  std::size_t goal_ = 0;
  mdp::TabularMDP mdp_;

  std::mt19937_64 rng_;
  std::size_t state_ = 0, t_ = 0;
  bool started_ = false, over_ = false;
  std::vector<std::vector<float>> history_;  // per view, frame_stack frames of one channel block each
};

/// Exhaustive checks over all states of the layout.
bool joint_views_injective(const GridWorld& env);
/// True when view `index` alone separates every pair of states.
bool view_determines_state(const GridWorld& env, std::size_t index);

struct Corruption {
  enum class Kind { drop_view, noise_view } kind = Kind::drop_view;
  std::size_t view = 0;
  std::uint64_t seed = 0;
};

/// Evaluation-time corruption of one view. Noise is a function of
/// (seed, view), so applying the same corruption twice changes nothing.
MultiViewObservation corrupt(const MultiViewObservation& obs, const Corruption& c);

}  // namespace mfsc::envs
