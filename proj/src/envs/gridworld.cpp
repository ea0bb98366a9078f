#include "mfsc/envs/gridworld.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "mfsc/util/random.hpp"

namespace mfsc::envs {

namespace {

constexpr std::size_t kNpos = std::numeric_limits<std::size_t>::max();
constexpr std::size_t kFrameChannels = 3;  // walls, agent, goal
constexpr int kDr[4] = {-1, 0, 1, 0};
constexpr int kDc[4] = {0, 1, 0, -1};

}  // namespace

std::string to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::full_map: return "full_map";
    case ViewKind::agent_crop: return "agent_crop";
    case ViewKind::goal_crop: return "goal_crop";
    case ViewKind::noise: return "noise";
  }
  return "?";
}

ViewKind view_kind_from_string(const std::string& name) {
  if (name == "full_map") return ViewKind::full_map;
  if (name == "agent_crop") return ViewKind::agent_crop;
  if (name == "goal_crop") return ViewKind::goal_crop;
  if (name == "noise") return ViewKind::noise;
  throw EnvError("unknown view kind '" + name + "'");
}

std::size_t MultiViewObservation::count(ViewStatus s) const {
  return std::size_t(std::count(status.begin(), status.end(), s));
}

void EnvConfig::validate() const {
  if (grid_size < 2) throw EnvError("grid_size must be at least 2");
  if (!(wall_density >= 0.0 && wall_density < 1.0)) throw EnvError("wall_density must lie in [0, 1)");
  if (num_views() < 2) throw EnvError("at least two views are required");
  if (horizon < 1) throw EnvError("horizon must be at least 1");
  if (frame_stack < 1) throw EnvError("frame_stack must be at least 1");
  if (view_height < 1 || view_width < 1) throw EnvError("view size must be positive");
  if (!(discount >= 0.0 && discount < 1.0)) throw EnvError("discount must lie in [0, 1)");
  if (!missing_view_prob.empty() && missing_view_prob.size() != num_views()) {
    throw EnvError("missing_view_prob needs one entry per view (" + std::to_string(num_views()) + ")");
  }
  for (double p : missing_view_prob) {
    if (!(p >= 0.0 && p <= 1.0)) throw EnvError("missing_view_prob entries must lie in [0, 1]");
  }
}

GridWorld::GridWorld(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  build_layout();
  build_mdp();
  rng_.seed(util::derive_seed(config_.seed, 1));
  history_.resize(config_.num_views());
}

void GridWorld::build_layout() {
  const auto N = config_.grid_size;
  layout_seed_ = config_.seed;
  for (std::size_t attempt = 0; attempt < 1000; ++attempt, ++layout_seed_) {
    std::mt19937_64 rng(util::derive_seed(layout_seed_, 0));
    walls_.assign(N * N, 0);
    for (auto& w : walls_) w = util::uniform01(rng) < config_.wall_density ? 1 : 0;
    std::vector<std::size_t> free;
    for (std::size_t k = 0; k < N * N; ++k) {
      if (!walls_[k]) free.push_back(k);
    }
    if (free.size() < 2) continue;
    const auto goal_cell = free[util::uniform_index(rng, free.size())];

    // Every free cell must reach the goal.
    std::vector<char> seen(N * N, 0);
    std::deque<std::size_t> queue{goal_cell};
    seen[goal_cell] = 1;
    std::size_t reached = 1;
    while (!queue.empty()) {
      const auto k = queue.front();
      queue.pop_front();
      const int r = int(k / N), c = int(k % N);
      for (int a = 0; a < 4; ++a) {
        const int nr = r + kDr[a], nc = c + kDc[a];
        if (nr < 0 || nc < 0 || nr >= int(N) || nc >= int(N)) continue;
        const auto nk = std::size_t(nr) * N + std::size_t(nc);
        if (walls_[nk] || seen[nk]) continue;
        seen[nk] = 1;
        ++reached;
        queue.push_back(nk);
      }
    }
    if (reached != free.size()) {
      ++regenerations_;
      std::clog << "gridworld: layout seed " << layout_seed_ << " has cells cut off from the goal, trying "
                << layout_seed_ + 1 << "\n";
      continue;
    }
    cells_.clear();
    state_of_.assign(N * N, kNpos);
    for (auto k : free) {
      state_of_[k] = cells_.size();
      cells_.emplace_back(k / N, k % N);
    }
    goal_ = state_of_[goal_cell];
    return;
  }
  throw EnvError("gridworld: no connected layout found");
}

std::size_t GridWorld::successor(std::size_t state, std::size_t action) const {
  if (action >= kNumActions) throw EnvError("action id " + std::to_string(action) + " out of range");
  if (state == goal_) return goal_;
  const auto N = config_.grid_size;
  const auto [r, c] = cells_.at(state);
  const int nr = int(r) + kDr[action], nc = int(c) + kDc[action];
  if (nr < 0 || nc < 0 || nr >= int(N) || nc >= int(N)) return state;
  const auto k = std::size_t(nr) * N + std::size_t(nc);
  return walls_[k] ? state : state_of_[k];
}

double GridWorld::reward(std::size_t state, std::size_t action) const {
  if (state == goal_) return 0.0;
  return successor(state, action) == goal_ ? kGoalReward : kStepReward;
}

void GridWorld::build_mdp() {
  const auto S = cells_.size();
  mdp_ = mdp::TabularMDP(S, kNumActions, config_.discount);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < kNumActions; ++a) {
      mdp_.P(s, a, successor(s, a)) = 1.0;
      mdp_.R(s, a) = reward(s, a);
    }
  }
  mdp_.initial.assign(S, 0.0);
  for (auto s : start_states()) mdp_.initial[s] = 1.0 / double(S - 1);
  mdp_.validate();
}

std::vector<std::size_t> GridWorld::start_states() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < cells_.size(); ++s) {
    if (s != goal_) out.push_back(s);
  }
  return out;
}

void GridWorld::render_view(ViewKind kind, std::size_t state, float* out) const {
  const auto H = config_.view_height, W = config_.view_width;
  const auto N = config_.grid_size;
  std::fill(out, out + H * W * kFrameChannels, 0.0f);
  if (kind == ViewKind::noise) return;
  const auto agent = cells_[state];
  const auto goal = cells_[goal_];
  // Window of cells shown by this view: [r0, r0 + span) x [c0, c0 + span).
  long r0 = 0, c0 = 0, span = long(N);
  if (kind != ViewKind::full_map) {
    const auto center = kind == ViewKind::agent_crop ? agent : goal;
    span = long(2 * config_.crop_radius + 1);
    r0 = long(center.first) - long(config_.crop_radius);
    c0 = long(center.second) - long(config_.crop_radius);
  }
  for (std::size_t y = 0; y < H; ++y) {
    const long r = r0 + long(y) * span / long(H);
    for (std::size_t x = 0; x < W; ++x) {
      const long c = c0 + long(x) * span / long(W);
      float* px = out + (y * W + x) * kFrameChannels;
      if (r < 0 || c < 0 || r >= long(N) || c >= long(N)) {
        px[0] = 1.0f;  // outside the grid reads as wall
        continue;
      }
      const auto ur = std::size_t(r), uc = std::size_t(c);
      px[0] = is_wall(ur, uc) ? 1.0f : 0.0f;
      px[1] = (ur == agent.first && uc == agent.second) ? 1.0f : 0.0f;
      px[2] = (ur == goal.first && uc == goal.second) ? 1.0f : 0.0f;
    }
  }
}

MultiViewObservation GridWorld::render_state(std::size_t state) const {
  if (state >= cells_.size()) throw EnvError("state id out of range");
  MultiViewObservation obs;
  obs.height = config_.view_height;
  obs.width = config_.view_width;
  obs.channels = kFrameChannels;
  const auto K = config_.num_views();
  obs.views.assign(K, std::vector<float>(obs.view_size()));
  obs.status.assign(K, ViewStatus::present);
  for (std::size_t v = 0; v < K; ++v) {
    const auto kind = v < config_.views.size() ? config_.views[v] : ViewKind::noise;
    render_view(kind, state, obs.views[v].data());
  }
  return obs;
}

MultiViewObservation GridWorld::observe() {
  const auto frame = config_.view_height * config_.view_width * kFrameChannels;
  const auto F = config_.frame_stack;
  const auto K = config_.num_views();
  const bool fresh = t_ == 0;
  for (std::size_t v = 0; v < K; ++v) {
    const auto kind = v < config_.views.size() ? config_.views[v] : ViewKind::noise;
    std::vector<float> current(frame);
    if (kind == ViewKind::noise) {
      for (auto& p : current) p = util::uniform01f(rng_);
    } else {
      render_view(kind, state_, current.data());
    }
    auto& hist = history_[v];
    if (fresh) {
      hist.clear();
      for (std::size_t f = 0; f < F; ++f) hist.insert(hist.end(), current.begin(), current.end());
    } else {
      hist.erase(hist.begin(), hist.begin() + long(frame));
      hist.insert(hist.end(), current.begin(), current.end());
    }
  }

  MultiViewObservation obs;
  obs.height = config_.view_height;
  obs.width = config_.view_width;
  obs.channels = kFrameChannels * F;
  obs.views.resize(K);
  obs.status.assign(K, ViewStatus::present);
  const auto pixels = config_.view_height * config_.view_width;
  for (std::size_t v = 0; v < K; ++v) {
    const double p = config_.missing_view_prob.empty() ? 0.0 : config_.missing_view_prob[v];
    // Draw for every view so the stream does not depend on which are missing.
    const bool missing = util::uniform01(rng_) < p;
    auto& out = obs.views[v];
    out.assign(obs.view_size(), 0.0f);
    if (missing) {
      obs.status[v] = ViewStatus::missing;
      continue;
    }
    // history is [frame][pixel][channel]; output is [pixel][frame * 3 + channel].
    const auto& hist = history_[v];
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t px = 0; px < pixels; ++px) {
        for (std::size_t ch = 0; ch < kFrameChannels; ++ch) {
          out[px * obs.channels + f * kFrameChannels + ch] = hist[f * frame + px * kFrameChannels + ch];
        }
      }
    }
  }
  return obs;
}

MultiViewObservation GridWorld::reset(std::optional<std::size_t> start) {
  if (start) {
    if (*start >= cells_.size() || *start == goal_) throw EnvError("reset: invalid start state");
    state_ = *start;
  } else {
    const auto starts = start_states();
    state_ = starts[util::uniform_index(rng_, starts.size())];
  }
  t_ = 0;
  started_ = true;
  over_ = false;
  return observe();
}

EpisodeSnapshot GridWorld::snapshot() const {
  std::ostringstream os;
  os << rng_;
  return {os.str(), state_, t_, started_, over_, history_};
}

void GridWorld::restore(const EpisodeSnapshot& snap) {
  if (snap.state >= cells_.size()) throw EnvError("restore: state out of range");
  if (snap.history.size() != history_.size()) throw EnvError("restore: view count mismatch");
  std::istringstream is(snap.rng);
  is >> rng_;
  if (!is) throw EnvError("restore: malformed rng state");
  state_ = snap.state;
  t_ = snap.t;
  started_ = snap.started;
  over_ = snap.over;
  history_ = snap.history;
}

Transition GridWorld::step(std::size_t action) {
  if (!started_) throw EnvError("step before reset");
  if (over_) throw EnvError("step after the episode ended; call reset");
  if (action >= kNumActions) throw EnvError("action id " + std::to_string(action) + " out of range");
  Transition tr;
  tr.action = action;
  tr.ground_truth_state = state_;
  tr.reward = reward(state_, action);
  state_ = successor(state_, action);
  ++t_;
  tr.next_ground_truth_state = state_;
  tr.done = state_ == goal_;
  tr.truncated = !tr.done && t_ >= config_.horizon;
  over_ = tr.done || tr.truncated;
  tr.next_obs = observe();
  return tr;
}

bool joint_views_injective(const GridWorld& env) {
  std::map<std::vector<float>, std::size_t> seen;
  for (std::size_t s = 0; s < env.num_states(); ++s) {
    const auto obs = env.render_state(s);
    std::vector<float> key;
    for (const auto& v : obs.views) key.insert(key.end(), v.begin(), v.end());
    if (!seen.emplace(std::move(key), s).second) return false;
  }
  return true;
}

bool view_determines_state(const GridWorld& env, std::size_t index) {
  std::map<std::vector<float>, std::size_t> seen;
  for (std::size_t s = 0; s < env.num_states(); ++s) {
    auto obs = env.render_state(s);
    if (index >= obs.num_views()) throw EnvError("view index out of range");
    if (!seen.emplace(std::move(obs.views[index]), s).second) return false;
  }
  return true;
}

MultiViewObservation corrupt(const MultiViewObservation& obs, const Corruption& c) {
  if (c.view >= obs.num_views()) throw EnvError("corrupt: view index out of range");
  MultiViewObservation out = obs;
  auto& pixels = out.views[c.view];
  if (c.kind == Corruption::Kind::drop_view) {
    std::fill(pixels.begin(), pixels.end(), 0.0f);
    out.status[c.view] = ViewStatus::missing;
  } else {
    std::mt19937_64 rng(util::derive_seed(c.seed, c.view));
    for (auto& p : pixels) p = util::uniform01f(rng);
    out.status[c.view] = ViewStatus::noise;
  }
  return out;
}

}  // namespace mfsc::envs
