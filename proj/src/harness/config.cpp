#include "mfsc/harness/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>

namespace mfsc::harness {

std::string EvalMode::name() const {
  switch (kind) {
    case Kind::full:
      return "full";
    case Kind::missing_view:
      return "missing_view(" + std::to_string(view) + ")";
    case Kind::noisy_view:
      return "noisy_view(" + std::to_string(view) + ")";
  }
  return "full";
}

EvalMode EvalMode::parse(const std::string& text) {
  if (text == "full") return {};
  static const std::regex pattern(R"((missing_view|noisy_view)\((\d+)\))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw ConfigError("eval mode '" + text + "': expected full, missing_view(i) or noisy_view(i)");
  }
  EvalMode mode;
  mode.kind = m[1] == "missing_view" ? Kind::missing_view : Kind::noisy_view;
  mode.view = std::stoul(m[2]);
  return mode;
}

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const auto& v = j_.at(key);
    try {
      read(v, out);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), field(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown key '" + field(item.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  static void read(const json& v, double& out) {
    if (!v.is_number()) throw ConfigError("expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, bool& out) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out) {
    if (!v.is_string()) throw ConfigError("expected a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, std::uint64_t& out) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError("expected a nonnegative integer");
    }
    out = v.get<std::uint64_t>();
  }
  template <typename T>
  static void read(const json& v, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError("expected an array");
    out.clear();
    for (const auto& e : v) {
      T x{};
      read(e, x);
      out.push_back(x);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Fn>
void checked(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

model::MissingViewMode missing_mode_from(const std::string& s) {
  if (s == "mask_token") return model::MissingViewMode::mask_token;
  if (s == "pixel_zero") return model::MissingViewMode::pixel_zero;
  throw ConfigError("model.missing_view: expected mask_token or pixel_zero, got '" + s + "'");
}

std::string to_string(model::MissingViewMode m) {
  return m == model::MissingViewMode::mask_token ? "mask_token" : "pixel_zero";
}

}  // namespace

void ExperimentConfig::sync_model_shape() {
  agent.model.num_views = env.num_views();
  agent.model.view_height = env.view_height;
  agent.model.view_width = env.view_width;
  agent.model.channels = 3 * env.frame_stack;
  agent.channels_per_frame = 3;
}

void ExperimentConfig::validate() const {
  checked("env", [&] { env.validate(); });
  if (agent.model.num_views != env.num_views() || agent.model.view_height != env.view_height ||
      agent.model.view_width != env.view_width || agent.model.channels != 3 * env.frame_stack) {
    throw ConfigError("model: view shape does not match env (call sync_model_shape)");
  }
  checked("agent", [&] { agent.validate(); });
  if (agent.ppo.minibatch_size > agent.ppo.rollout_length * agent.ppo.workers) {
    throw ConfigError("ppo.minibatch_size must not exceed rollout_length * workers");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicate seed");
  }
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (metric_pairs == 0) throw ConfigError("metric_pairs must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (const auto& m : eval_modes) {
    if (m.kind != EvalMode::Kind::full && m.view >= env.num_views()) {
      throw ConfigError("eval_modes: " + m.name() + " names a view the env does not have (" +
                        std::to_string(env.num_views()) + " views)");
    }
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  auto size_of = [](Section& s, const char* key, std::size_t& out) {
    if (!s.has(key)) return;
    std::uint64_t u = out;
    s.get(key, u);
    out = std::size_t(u);
  };
  Section root(j, "");
  if (root.has("env")) {
    auto s = root.child("env");
    auto size = [&](const char* key, std::size_t& out) { size_of(s, key, out); };
    size("grid_size", cfg.env.grid_size);
    s.get("wall_density", cfg.env.wall_density);
    if (s.has("views")) {
      std::vector<std::string> names;
      s.get("views", names);
      cfg.env.views.clear();
      for (const auto& n : names) {
        try {
          cfg.env.views.push_back(envs::view_kind_from_string(n));
        } catch (const std::exception& e) {
          throw ConfigError("env.views: " + std::string(e.what()));
        }
      }
    }
    s.get("distractor_view", cfg.env.distractor_view);
    s.get("missing_view_prob", cfg.env.missing_view_prob);
    size("frame_stack", cfg.env.frame_stack);
    size("horizon", cfg.env.horizon);
    size("view_height", cfg.env.view_height);
    size("view_width", cfg.env.view_width);
    size("crop_radius", cfg.env.crop_radius);
    s.get("discount", cfg.env.discount);
    s.get("seed", cfg.env.seed);
    s.finish();
  }
  auto& a = cfg.agent;
  if (root.has("model")) {
    auto s = root.child("model");
    size_of(s, "embed_dim", a.model.embed_dim);
    size_of(s, "depth", a.model.depth);
    size_of(s, "heads", a.model.heads);
    size_of(s, "mlp_ratio", a.model.mlp_ratio);
    if (s.has("encoder")) {
      const auto& list = s.raw("encoder");
      if (!list.is_array()) throw ConfigError("model.encoder: expected an array");
      a.model.encoder.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        Section layer(list[i], "model.encoder[" + std::to_string(i) + "]");
        model::ConvSpec spec;
        size_of(layer, "filters", spec.filters);
        size_of(layer, "kernel", spec.kernel);
        size_of(layer, "stride", spec.stride);
        layer.finish();
        a.model.encoder.push_back(spec);
      }
    }
    if (s.has("missing_view")) {
      std::string m;
      s.get("missing_view", m);
      a.model.missing_view = missing_mode_from(m);
    }
    s.finish();
  }
  if (root.has("mask")) {
    auto s = root.child("mask");
    s.get("mask_ratio", a.mask.mask_ratio);
    size_of(s, "cube_height", a.mask.cube_height);
    size_of(s, "cube_width", a.mask.cube_width);
    size_of(s, "cube_depth", a.mask.cube_depth);
    s.finish();
  }
  if (root.has("dynamics")) {
    auto s = root.child("dynamics");
    size_of(s, "members", a.dynamics.members);
    size_of(s, "hidden", a.dynamics.hidden);
    s.finish();
  }
  if (root.has("weights")) {
    auto s = root.child("weights");
    s.get("lambda", a.weights.lambda);
    if (s.has("gamma")) {
      s.get("gamma", a.weights.gamma);
      a.weights.c_r = 1.0 - a.weights.gamma;
      a.weights.c_t = a.weights.gamma;
    }
    s.get("c_r", a.weights.c_r);
    s.get("c_t", a.weights.c_t);
    if (s.has("robust")) {
      std::string r;
      s.get("robust", r);
      if (r == "huber") {
        a.weights.robust = losses::Robust::huber;
      } else if (r == "squared") {
        a.weights.robust = losses::Robust::squared;
      } else {
        throw ConfigError("weights.robust: expected huber or squared, got '" + r + "'");
      }
    }
    s.get("huber_delta", a.weights.huber_delta);
    s.finish();
  }
  if (root.has("switches")) {
    auto s = root.child("switches");
    s.get("fusion", a.switches.fusion);
    s.get("reconstruction", a.switches.reconstruction);
    s.get("dynamics", a.switches.dynamics);
    s.get("dynamics_encoder_gradients", a.switches.dynamics_encoder_gradients);
    s.finish();
  }
  if (root.has("ppo")) {
    auto s = root.child("ppo");
    auto& p = a.ppo;
    s.get("discount", p.discount);
    s.get("gae_lambda", p.gae_lambda);
    s.get("clip", p.clip);
    size_of(s, "epochs", p.epochs);
    s.get("entropy_coef", p.entropy_coef);
    s.get("value_coef", p.value_coef);
    s.get("grad_clip", p.grad_clip);
    s.get("target_kl", p.target_kl);
    s.get("learning_rate", p.learning_rate);
    s.get("repr_learning_rate", p.repr_learning_rate);
    size_of(s, "rollout_length", p.rollout_length);
    size_of(s, "minibatch_size", p.minibatch_size);
    size_of(s, "workers", p.workers);
    size_of(s, "hidden", p.hidden);
    s.get("joint_policy_gradient", p.joint_policy_gradient);
    std::string schedule = p.lr_schedule == agent::LrSchedule::linear ? "linear" : "constant";
    s.get("lr_schedule", schedule);
    if (schedule == "constant") {
      p.lr_schedule = agent::LrSchedule::constant;
    } else if (schedule == "linear") {
      p.lr_schedule = agent::LrSchedule::linear;
    } else {
      throw ConfigError("ppo.lr_schedule: expected constant or linear, got '" + schedule + "'");
    }
    s.finish();
  }
  root.get("momentum_target", a.momentum_target);
  root.get("momentum_rate", a.momentum_rate);
  root.get("reward_alpha", a.reward_alpha);
  root.get("seeds", cfg.seeds);
  size_of(root, "total_steps", cfg.total_steps);
  size_of(root, "eval_every", cfg.eval_every);
  size_of(root, "eval_episodes", cfg.eval_episodes);
  if (root.has("eval_modes")) {
    std::vector<std::string> modes;
    root.get("eval_modes", modes);
    cfg.eval_modes.clear();
    for (const auto& m : modes) cfg.eval_modes.push_back(EvalMode::parse(m));
  }
  size_of(root, "metric_pairs", cfg.metric_pairs);
  root.get("output_dir", cfg.output_dir);
  root.finish();
  cfg.sync_model_shape();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& cfg) {
  const auto& e = cfg.env;
  const auto& a = cfg.agent;
  json views = json::array();
  for (auto v : e.views) views.push_back(envs::to_string(v));
  json encoder = json::array();
  for (const auto& c : a.model.encoder) encoder.push_back({{"filters", c.filters}, {"kernel", c.kernel}, {"stride", c.stride}});
  json modes = json::array();
  for (const auto& m : cfg.eval_modes) modes.push_back(m.name());
  return {
      {"env",
       {{"grid_size", e.grid_size},
        {"wall_density", e.wall_density},
        {"views", views},
        {"distractor_view", e.distractor_view},
        {"missing_view_prob", e.missing_view_prob},
        {"frame_stack", e.frame_stack},
        {"horizon", e.horizon},
        {"view_height", e.view_height},
        {"view_width", e.view_width},
        {"crop_radius", e.crop_radius},
        {"discount", e.discount},
        {"seed", e.seed}}},
      {"model",
       {{"embed_dim", a.model.embed_dim},
        {"depth", a.model.depth},
        {"heads", a.model.heads},
        {"mlp_ratio", a.model.mlp_ratio},
        {"encoder", encoder},
        {"missing_view", to_string(a.model.missing_view)}}},
      {"mask",
       {{"mask_ratio", a.mask.mask_ratio},
        {"cube_height", a.mask.cube_height},
        {"cube_width", a.mask.cube_width},
        {"cube_depth", a.mask.cube_depth}}},
      {"dynamics", {{"members", a.dynamics.members}, {"hidden", a.dynamics.hidden}}},
      {"weights",
       {{"lambda", a.weights.lambda},
        {"gamma", a.weights.gamma},
        {"c_r", a.weights.c_r},
        {"c_t", a.weights.c_t},
        {"robust", a.weights.robust == losses::Robust::huber ? "huber" : "squared"},
        {"huber_delta", a.weights.huber_delta}}},
      {"switches",
       {{"fusion", a.switches.fusion},
        {"reconstruction", a.switches.reconstruction},
        {"dynamics", a.switches.dynamics},
        {"dynamics_encoder_gradients", a.switches.dynamics_encoder_gradients}}},
      {"ppo",
       {{"discount", a.ppo.discount},
        {"gae_lambda", a.ppo.gae_lambda},
        {"clip", a.ppo.clip},
        {"epochs", a.ppo.epochs},
        {"entropy_coef", a.ppo.entropy_coef},
        {"value_coef", a.ppo.value_coef},
        {"grad_clip", a.ppo.grad_clip},
        {"target_kl", a.ppo.target_kl},
        {"learning_rate", a.ppo.learning_rate},
        {"repr_learning_rate", a.ppo.repr_learning_rate},
        {"rollout_length", a.ppo.rollout_length},
        {"minibatch_size", a.ppo.minibatch_size},
        {"workers", a.ppo.workers},
        {"hidden", a.ppo.hidden},
        {"joint_policy_gradient", a.ppo.joint_policy_gradient},
        {"lr_schedule", a.ppo.lr_schedule == agent::LrSchedule::linear ? "linear" : "constant"}}},
      {"momentum_target", a.momentum_target},
      {"momentum_rate", a.momentum_rate},
      {"reward_alpha", a.reward_alpha},
      {"seeds", cfg.seeds},
      {"total_steps", cfg.total_steps},
      {"eval_every", cfg.eval_every},
      {"eval_episodes", cfg.eval_episodes},
      {"eval_modes", modes},
      {"metric_pairs", cfg.metric_pairs},
      {"output_dir", cfg.output_dir},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  const auto text = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path output_root() {
  if (const char* root = std::getenv("MFSC_OUTPUT_ROOT"); root && *root) return root;
  return std::filesystem::current_path();
}

std::filesystem::path resolve_output(const std::string& dir) {
  const std::filesystem::path p(dir);
  return p.is_absolute() ? p : output_root() / p;
}

}  // namespace mfsc::harness
