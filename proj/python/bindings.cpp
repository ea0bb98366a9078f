#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "mfsc/envs/gridworld.hpp"
#include "mfsc/harness/config.hpp"
#include "mfsc/harness/evaluation.hpp"
#include "mfsc/harness/theory.hpp"
#include "mfsc/losses/losses.hpp"
#include "mfsc/mdp/aggregation.hpp"
#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/mdp/transport.hpp"
#include "mfsc/mdp/value_iteration.hpp"

namespace py = pybind11;
using namespace mfsc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

mdp::TabularMDP make_mdp(const Array& P, const Array& R, double discount) {
  if (P.ndim() != 3 || R.ndim() != 2) throw std::invalid_argument("P must be [S, A, S] and R [S, A]");
  const auto S = std::size_t(P.shape(0)), A = std::size_t(P.shape(1));
  if (std::size_t(P.shape(2)) != S || std::size_t(R.shape(0)) != S || std::size_t(R.shape(1)) != A) {
    throw std::invalid_argument("P and R shapes disagree");
  }
  mdp::TabularMDP m(S, A, discount);
  m.transitions = to_vector(P);
  m.rewards = to_vector(R);
  m.initial.assign(S, 1.0 / double(S));
  m.validate();
  return m;
}

mdp::Policy make_policy(const Array& pi) {
  if (pi.ndim() != 2) throw std::invalid_argument("policy must be [S, A]");
  mdp::Policy p(std::size_t(pi.shape(0)), std::size_t(pi.shape(1)));
  for (std::size_t s = 0; s < p.num_states(); ++s) {
    for (std::size_t a = 0; a < p.num_actions(); ++a) p(s, a) = pi.at(s, a);
  }
  p.validate();
  return p;
}

mdp::CouplingKind coupling(const std::string& name) {
  if (name == "wasserstein") return mdp::CouplingKind::wasserstein;
  if (name == "independent") return mdp::CouplingKind::independent;
  throw std::invalid_argument("coupling must be 'wasserstein' or 'independent'");
}

Array metric_array(const mdp::MetricMatrix& m) {
  const auto n = py::ssize_t(m.size());
  return to_array({m.values().begin(), m.values().end()}, {n, n});
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

}  // namespace

PYBIND11_MODULE(_mfsc, m) {
  m.doc() = "Core numerics of the mfsc library";
  m.attr("__version__") = MFSC_VERSION;

  m.def(
      "random_mdp",
      [](std::uint64_t seed, std::size_t states, std::size_t actions, double discount) {
        std::mt19937_64 rng(seed);
        const auto mdp = mdp::random_mdp(rng, states, actions, discount);
        const auto S = py::ssize_t(states), A = py::ssize_t(actions);
        return py::make_tuple(to_array(mdp.transitions, {S, A, S}), to_array(mdp.rewards, {S, A}));
      },
      py::arg("seed"), py::arg("states"), py::arg("actions"), py::arg("discount") = 0.9,
      "Random MDP as (P [S, A, S], R [S, A]).");

  m.def(
      "wasserstein",
      [](const Array& p, const Array& q, const Array& cost) {
        const auto n = std::size_t(p.size());
        if (std::size_t(q.size()) != n || std::size_t(cost.size()) != n * n) {
          throw std::invalid_argument("wasserstein: p, q must have n entries and cost n x n");
        }
        return mdp::wasserstein(to_vector(p), to_vector(q), to_vector(cost), n);
      },
      py::arg("p"), py::arg("q"), py::arg("cost"), "Exact 1-Wasserstein distance under a ground cost.");

  m.def(
      "value_iteration",
      [](const Array& P, const Array& R, double discount, double tol) {
        const auto r = mdp::value_iteration(make_mdp(P, R, discount), tol);
        return py::make_tuple(to_array(r.values, {py::ssize_t(r.values.size())}), r.greedy_actions);
      },
      py::arg("P"), py::arg("R"), py::arg("discount"), py::arg("tol") = 1e-12, "Optimal values and greedy actions.");

  m.def(
      "bisim_operator",
      [](const Array& P, const Array& R, const Array& policy, const Array& g, double c, const std::string& kind) {
        const auto mdp = make_mdp(P, R, 0.9);
        const auto pi = make_policy(policy);
        mdp::MetricMatrix gm(mdp.num_states);
        for (std::size_t i = 0; i < mdp.num_states; ++i) {
          for (std::size_t j = i + 1; j < mdp.num_states; ++j) gm.set(i, j, g.at(i, j));
        }
        const mdp::MetricOperator op(mdp, pi, c, coupling(kind));
        return metric_array(op.apply(gm));
      },
      py::arg("P"), py::arg("R"), py::arg("policy"), py::arg("g"), py::arg("c"), py::arg("coupling") = "wasserstein",
      "One application of the policy bisimulation operator.");

  m.def(
      "metric_fixed_point",
      [](const Array& P, const Array& R, const Array& policy, double c, const std::string& kind, double tol,
         std::size_t max_iterations) {
        const auto mdp = make_mdp(P, R, 0.9);
        const mdp::MetricOperator op(mdp, make_policy(policy), c, coupling(kind));
        const auto r = mdp::solve_fixed_point(op, mdp::MetricMatrix(mdp.num_states), tol, max_iterations);
        return py::make_tuple(metric_array(r.metric), r.iterations, r.residual);
      },
      py::arg("P"), py::arg("R"), py::arg("policy"), py::arg("c"), py::arg("coupling") = "wasserstein",
      py::arg("tol") = 1e-10, py::arg("max_iterations") = 2000, "Fixed point as (metric, iterations, residual).");

  m.def(
      "certify",
      [](const Array& P, const Array& R, double discount, double epsilon, double c) {
        mdp::CertifyOptions opts;
        opts.c = c;
        return parse_json(mdp::certify(make_mdp(P, R, discount), epsilon, opts).to_json_line());
      },
      py::arg("P"), py::arg("R"), py::arg("discount"), py::arg("epsilon"), py::arg("c") = 0.95,
      "Aggregate at radius epsilon and check the value bound.");

  m.def(
      "fusion_loss",
      [](const Array& z, const Array& rewards, const Array& next, double gamma, const std::string& robust) {
        if (z.ndim() != 2 || next.ndim() != 2) throw std::invalid_argument("z and next must be [B, d]");
        auto w = losses::LossWeights::from_gamma(gamma);
        w.robust = robust == "squared" ? losses::Robust::squared : losses::Robust::huber;
        const tensor::Shape shape{std::size_t(z.shape(0)), std::size_t(z.shape(1))};
        const tensor::Tensor<double> zt(shape, to_vector(z));
        const tensor::Tensor<double> nt(shape, to_vector(next));
        const auto r = to_vector(rewards);
        return losses::fusion_loss<double>(zt, r, nt, w).item();
      },
      py::arg("z"), py::arg("rewards"), py::arg("next"), py::arg("gamma") = 0.99, py::arg("robust") = "huber");

  m.def(
      "reconstruction_loss",
      [](const Array& pred, const Array& target) {
        tensor::Shape shape(pred.shape(), pred.shape() + pred.ndim());
        return losses::reconstruction_loss(tensor::Tensor<double>(shape, to_vector(pred)),
                                           tensor::Tensor<double>(shape, to_vector(target)))
            .item();
      },
      py::arg("pred"), py::arg("target"));

  m.def(
      "cosine_distance",
      [](const Array& u, const Array& v) { return losses::cosine_distance(to_vector(u), to_vector(v)); },
      py::arg("u"), py::arg("v"));

  m.def(
      "spearman", [](const Array& x, const Array& y) { return harness::spearman(to_vector(x), to_vector(y)); },
      py::arg("x"), py::arg("y"));

  m.def(
      "render_state",
      [](const std::string& config_json, std::size_t state) {
        const auto cfg = harness::config_from_json(harness::json::parse(config_json));
        const envs::GridWorld env(cfg.env);
        const auto obs = env.render_state(state);
        py::list views;
        for (const auto& v : obs.views) {
          py::array_t<float> a({py::ssize_t(obs.height), py::ssize_t(obs.width), py::ssize_t(obs.channels)});
          std::copy(v.begin(), v.end(), a.mutable_data());
          views.append(a);
        }
        return views;
      },
      py::arg("config_json"), py::arg("state"), "Clean views of one state, one HxWxC array per view.");

  m.def(
      "config_hash",
      [](const std::string& text) { return harness::config_hash(harness::config_from_json(harness::json::parse(text))); },
      py::arg("config_json"));

  m.def(
      "fixed_point_sweep",
      [](std::size_t count, double c, std::uint64_t seed) {
        harness::FixedPointSweepOptions o;
        o.count = count;
        o.c = c;
        o.seed = seed;
        return parse_json(harness::fixed_point_sweep(o).dump());
      },
      py::arg("count") = 50, py::arg("c") = 0.9, py::arg("seed") = 1);

  m.def(
      "value_bound_sweep",
      [](std::size_t count, double discount, double c, std::uint64_t seed) {
        harness::BoundSweepOptions o;
        o.count = count;
        o.discount = discount;
        o.c = c;
        o.seed = seed;
        return parse_json(harness::value_bound_sweep(o).dump());
      },
      py::arg("count") = 100, py::arg("discount") = 0.9, py::arg("c") = 0.95, py::arg("seed") = 2);

  m.def(
      "grad_check_suite",
      [](std::uint64_t seed, std::size_t points) {
        return parse_json(harness::grad_check_suite(seed, points).to_json().dump());
      },
      py::arg("seed") = 10, py::arg("points") = 1);

  py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);
}
