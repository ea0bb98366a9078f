#include "mfsc/harness/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/mdp/value_iteration.hpp"
#include "mfsc/util/random.hpp"

namespace mfsc::harness {

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("spearman: constant input");
  return sxy / std::sqrt(sxx * syy);
}

envs::EnvConfig eval_env_config(const envs::EnvConfig& train) {
  auto cfg = train;
  cfg.missing_view_prob.clear();
  return cfg;
}

std::vector<std::size_t> redundant_views(const envs::GridWorld& env) {
  const auto& views = env.config().views;
  std::vector<std::size_t> out;
  for (std::size_t drop = 0; drop < views.size(); ++drop) {
    if (views[drop] == envs::ViewKind::noise) continue;
    std::map<std::vector<float>, std::size_t> seen;
    bool injective = true;
    for (std::size_t s = 0; s < env.num_states() && injective; ++s) {
      const auto obs = env.render_state(s);
      std::vector<float> key;
      for (std::size_t v = 0; v < views.size(); ++v) {
        if (v == drop || views[v] == envs::ViewKind::noise) continue;
        key.insert(key.end(), obs.views[v].begin(), obs.views[v].end());
      }
      injective = seen.emplace(std::move(key), s).second;
    }
    if (injective) out.push_back(drop);
  }
  return out;
}

double oracle_return(const envs::GridWorld& env, const std::vector<std::size_t>& starts) {
  if (starts.empty()) throw std::invalid_argument("oracle_return: no start states");
  const auto vi = mdp::value_iteration(env.tabular(), 1e-12);
  double total = 0;
  for (auto s0 : starts) {
    std::size_t s = s0;
    double ret = 0;
    for (std::size_t t = 0; t < env.config().horizon && s != env.goal_state(); ++t) {
      const auto a = vi.greedy_actions[s];
      ret += env.reward(s, a);
      s = env.successor(s, a);
    }
    total += ret;
  }
  return total / double(starts.size());
}

ObsTransform mode_transform(const EvalMode& mode, std::uint64_t seed) {
  if (mode.kind == EvalMode::Kind::full) return {};
  envs::Corruption c;
  c.view = mode.view;
  c.kind = mode.kind == EvalMode::Kind::missing_view ? envs::Corruption::Kind::drop_view
                                                     : envs::Corruption::Kind::noise_view;
  auto counter = std::make_shared<std::uint64_t>(0);
  return [c, counter, seed](const envs::MultiViewObservation& obs) mutable {
    c.seed = util::derive_seed(seed, (*counter)++);
    return envs::corrupt(obs, c);
  };
}

agent::EvalResult evaluate_mode(const agent::Agent& agent, const envs::EnvConfig& train_env, const EvalMode& mode,
                                std::size_t episodes, std::uint64_t seed) {
  const auto cfg = eval_env_config(train_env);
  std::vector<std::size_t> starts;
  if (episodes == 0) starts = envs::GridWorld(cfg).start_states();
  return agent::evaluate(agent, cfg, episodes, seed, mode_transform(mode, util::derive_seed(seed, 7)), true, starts);
}

envs::MultiViewObservation canonical_observation(const envs::GridWorld& env, std::size_t state) {
  const auto& cfg = env.config();
  auto frame = env.render_state(state);
  std::mt19937_64 noise_rng(util::derive_seed(cfg.seed, 900));
  for (std::size_t v = 0; v < frame.num_views(); ++v) {
    if (v < cfg.views.size() && cfg.views[v] != envs::ViewKind::noise) continue;
    for (auto& p : frame.views[v]) p = util::uniform01f(noise_rng);
  }
  if (cfg.frame_stack == 1) return frame;
  auto out = frame;
  out.channels = frame.channels * cfg.frame_stack;
  const auto pixels = frame.height * frame.width;
  for (std::size_t v = 0; v < frame.num_views(); ++v) {
    out.views[v].assign(out.view_size(), 0.0f);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t f = 0; f < cfg.frame_stack; ++f) {
        std::copy_n(frame.views[v].data() + p * frame.channels, frame.channels,
                    out.views[v].data() + p * out.channels + f * frame.channels);
      }
    }
  }
  return out;
}

mdp::Policy extract_policy(const agent::Agent& agent, const envs::GridWorld& env) {
  const auto S = env.num_states(), A = env.num_actions();
  std::vector<envs::MultiViewObservation> obs;
  for (std::size_t s = 0; s < S; ++s) obs.push_back(canonical_observation(env, s));
  agent::ObservationRefs refs;
  for (const auto& o : obs) refs.push_back(&o);
  const auto probs = agent.action_probs(refs);
  mdp::Policy pi(S, A);
  for (std::size_t s = 0; s < S; ++s) {
    double total = 0;
    for (std::size_t a = 0; a < A; ++a) total += probs[s * A + a];
    for (std::size_t a = 0; a < A; ++a) pi(s, a) = probs[s * A + a] / total;
  }
  return pi;
}

RepresentationReport representation_quality(const agent::Agent& agent, const envs::GridWorld& env, std::size_t pairs,
                                            double c, std::uint64_t seed) {
  const auto S = env.num_states();
  const auto goal = env.goal_state();
  RepresentationReport rep;
  rep.states = S - 1;
  const auto pi = extract_policy(agent, env);
  const mdp::MetricOperator op(env.tabular(), pi, c, mdp::CouplingKind::independent);
  const auto fp = mdp::solve_fixed_point(op, mdp::MetricMatrix(S), 1e-10, 200000);
  rep.metric_iterations = fp.iterations;

  std::vector<envs::MultiViewObservation> obs;
  for (std::size_t s = 0; s < S; ++s) obs.push_back(canonical_observation(env, s));
  agent::ObservationRefs refs;
  for (const auto& o : obs) refs.push_back(&o);
  const auto z = agent.embed(refs);
  const auto d = z.dim(1);
  auto learned = [&](std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double a = z.at(i * d + k), b = z.at(j * d + k);
      dot += a * b;
      ni += a * a;
      nj += b * b;
    }
    return 1.0 - dot / std::sqrt(ni * nj);
  };

  std::vector<std::pair<std::size_t, std::size_t>> all;
  std::vector<double> la, ea;
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = i + 1; j < S; ++j) {
      la.push_back(learned(i, j));
      ea.push_back(fp.metric(i, j));
      if (i != goal && j != goal) all.emplace_back(i, j);
    }
  }
  rep.spearman_all_states = spearman(la, ea);
  if (all.size() > pairs) {
    std::mt19937_64 rng(util::derive_seed(seed, 800));
    for (std::size_t k = 0; k < pairs; ++k) std::swap(all[k], all[k + util::uniform_index(rng, all.size() - k)]);
    all.resize(pairs);
  }
  std::vector<double> l, e;
  for (auto [i, j] : all) {
    l.push_back(learned(i, j));
    e.push_back(fp.metric(i, j));
  }
  rep.pairs = all.size();
  rep.spearman = spearman(l, e);
  return rep;
}

}  // namespace mfsc::harness
