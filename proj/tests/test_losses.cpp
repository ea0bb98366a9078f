#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mfsc/losses/losses.hpp"
#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/tensor/grad_check.hpp"
#include "mfsc/tensor/ops.hpp"
#include "mfsc/util/random.hpp"
#include "test_util.hpp"

using namespace mfsc;
using namespace mfsc::losses;
using mfsc::tensor::Tensor;

namespace {

double cos_distance_row(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return 1.0 - ab / std::sqrt(aa * bb);
}

std::span<const double> row(const Tensor<double>& t, std::size_t i) {
  const auto d = t.dim(t.rank() - 1);
  return t.data().subspan(i * d, d);
}

double fusion_oracle(const Tensor<double>& z, const std::vector<double>& r, const Tensor<double>& next,
                     const LossWeights& w) {
  const auto B = z.dim(0);
  double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const double zd = cos_distance_row(row(z, i), row(z, j));
      const double target = w.c_r * std::abs(r[i] - r[j]) + w.c_t * cos_distance_row(row(next, i), row(next, j));
      const double e = zd - target;
      if (w.robust == Robust::squared) {
        total += e * e;
      } else {
        total += std::abs(e) <= w.huber_delta ? 0.5 * e * e : w.huber_delta * (std::abs(e) - 0.5 * w.huber_delta);
      }
    }
  }
  return total / double(B * (B - 1));
}

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_views = 2;
  cfg.view_height = cfg.view_width = 6;
  cfg.channels = 3;
  cfg.encoder = {{4, 3, 2}};
  return cfg;
}

model::ViewBatch random_views(const model::ModelConfig& cfg, std::size_t B, std::mt19937_64& rng) {
  std::vector<envs::MultiViewObservation> obs(B);
  for (auto& o : obs) {
    o.height = cfg.view_height;
    o.width = cfg.view_width;
    o.channels = cfg.channels;
    for (std::size_t k = 0; k < cfg.num_views; ++k) {
      std::vector<float> v(o.view_size());
      for (auto& p : v) p = util::uniform01f(rng);
      o.views.push_back(std::move(v));
      o.status.push_back(envs::ViewStatus::present);
    }
  }
  return model::ViewBatch::from(obs);
}

}  // namespace

TEST_CASE("cosine distance: collinear, opposite, orthogonal, zero") {
  const std::vector<double> u{1, 2, 3}, neg{-1, -2, -3}, orth{3, 0, -1}, zero{0, 0, 0};
  CHECK(cosine_distance(u, u) == doctest::Approx(0).epsilon(1e-15));
  CHECK(cosine_distance(u, neg) == doctest::Approx(2));
  CHECK(cosine_distance(u, orth) == doctest::Approx(1));
  const auto before = tensor::diagnostics().zero_norm_rows;
  CHECK(cosine_distance(u, zero) == 1.0);
  CHECK(tensor::diagnostics().zero_norm_rows == before + 1);

  const Tensor<double> a({2, 3}, {1, 2, 3, 1, 2, 3}), b({2, 3}, {-1, -2, -3, 3, 0, -1});
  const auto d = cosine_distance(a, b);
  CHECK(d.at(0) == doctest::Approx(2));
  CHECK(d.at(1) == doctest::Approx(1));
}

TEST_CASE("loss weights: defaults and validation") {
  const auto w = LossWeights::from_gamma(0.99);
  CHECK(w.c_r == doctest::Approx(0.01));
  CHECK(w.c_t == doctest::Approx(0.99));
  CHECK(w.robust == Robust::huber);
  LossWeights bad = w;
  bad.c_r = 0.5;
  CHECK_THROWS(bad.validate());
  bad = w;
  bad.lambda = -1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("fusion loss: identical transitions give zero") {
  std::mt19937_64 rng(3);
  const auto one = testing::random_tensor<double>({1, 5}, rng);
  std::vector<double> zs, ns;
  for (int b = 0; b < 4; ++b) zs.insert(zs.end(), one.data().begin(), one.data().end());
  const Tensor<double> z({4, 5}, zs), next({4, 5}, zs);
  const std::vector<double> r(4, 0.7);
  CHECK(fusion_loss<double>(z, r, next, LossWeights::from_gamma(0.99)).item() == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("fusion loss: reward gap of one gives a target of c_r") {
  const Tensor<double> z({2, 3}, {1, 0, 0, 1, 0, 0});
  const Tensor<double> next({2, 3}, {0, 1, 0, 0, 1, 0});
  const std::vector<double> r{0.0, 1.0};
  auto w = LossWeights::from_gamma(0.99);
  // z_diff = 0 and target = 0.01, so each ordered pair errs by 0.01.
  CHECK(fusion_loss<double>(z, r, next, w).item() == doctest::Approx(0.5 * 1e-4).epsilon(1e-9));
  w.robust = Robust::squared;
  CHECK(fusion_loss<double>(z, r, next, w).item() == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("fusion loss: matches a pairwise double-loop oracle") {
  std::mt19937_64 rng(11);
  for (const auto mode : {Robust::huber, Robust::squared}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto z = testing::random_tensor<double>({8, 6}, rng);
      const auto next = testing::random_tensor<double>({8, 6}, rng);
      std::vector<double> r(8);
      for (auto& v : r) v = 3.0 * util::normal(rng);
      auto w = LossWeights::from_gamma(0.9);
      w.robust = mode;
      const double oracle = fusion_oracle(z, r, next, w);
      CHECK(fusion_loss<double>(z, r, next, w).item() == doctest::Approx(oracle).epsilon(1e-12));

      std::vector<float> zf(z.data().begin(), z.data().end()), nf(next.data().begin(), next.data().end());
      std::vector<float> rf(r.begin(), r.end());
      const auto lf = fusion_loss<float>(Tensor<float>({8, 6}, zf), rf, Tensor<float>({8, 6}, nf), w).item();
      CHECK(std::abs(double(lf) - oracle) < 1e-6);
    }
  }
}

TEST_CASE("fusion loss: invariant to batch permutation, nonnegative, rejects B < 2") {
  std::mt19937_64 rng(5);
  const auto z = testing::random_tensor<double>({6, 4}, rng);
  const auto next = testing::random_tensor<double>({6, 4}, rng);
  std::vector<double> r{0.1, -2, 0.5, 1, 0, 3};
  const auto w = LossWeights::from_gamma(0.99);
  const double base = fusion_loss<double>(z, r, next, w).item();
  CHECK(base >= 0.0);
  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  std::vector<double> rp;
  for (auto p : perm) rp.push_back(r[p]);
  const auto zp = tensor::take_rows(z, perm);
  const auto np = tensor::take_rows(next, perm);
  CHECK(fusion_loss<double>(zp, rp, np, w).item() == doctest::Approx(base).epsilon(1e-12));

  const auto single = testing::random_tensor<double>({1, 4}, rng);
  const std::vector<double> r1{0.0};
  CHECK_THROWS_AS(fusion_loss<double>(single, r1, single, w), std::invalid_argument);
}

TEST_CASE("fusion loss: gradient check and detached target") {
  std::mt19937_64 rng(8);
  const auto z = testing::random_tensor<double>({5, 4}, rng, -1, 1, true);
  const auto next = testing::random_tensor<double>({5, 4}, rng, -1, 1, true);
  std::vector<double> r{0.3, -1.2, 0.0, 2.0, 0.4};
  for (const auto mode : {Robust::huber, Robust::squared}) {
    auto w = LossWeights::from_gamma(0.9);
    w.robust = mode;
    const auto report = tensor::grad_check([&] { return fusion_loss<double>(z, r, next, w); }, {{"z", z}});
    CHECK_MESSAGE(report.passed(1e-4), report.worst);
  }
  auto zz = z;
  auto nn = next;
  zz.zero_grad();
  nn.zero_grad();
  tensor::backward(fusion_loss<double>(zz, r, nn, LossWeights::from_gamma(0.9)));
  CHECK(zz.has_grad());
  CHECK_FALSE(nn.has_grad());
}

TEST_CASE("reconstruction loss: collinear, opposite, oracle, gradients") {
  std::mt19937_64 rng(9);
  const auto z = testing::random_tensor<double>({3, 4, 6}, rng);
  CHECK(reconstruction_loss(z, z).item() == doctest::Approx(0).epsilon(1e-12));
  CHECK(reconstruction_loss(tensor::scale(z, 2.5), z).item() == doctest::Approx(0).epsilon(1e-12));
  CHECK(reconstruction_loss(tensor::scale(z, -1.0), z).item() == doctest::Approx(2));

  const auto pred = testing::random_tensor<double>({3, 4, 6}, rng, -1, 1, true);
  const auto target = testing::random_tensor<double>({3, 4, 6}, rng, -1, 1, true);
  double acc = 0;
  for (std::size_t i = 0; i < 12; ++i) acc += 1.0 - cos_distance_row(row(pred, i), row(target, i));
  const double oracle = 1.0 - acc / 12.0;
  const double got = reconstruction_loss(pred, target).item();
  CHECK(std::abs(got - oracle) < 1e-7);
  CHECK(got >= 0.0);
  CHECK(got <= 2.0);

  const auto report = tensor::grad_check([&] { return reconstruction_loss(pred, target); }, {{"pred", pred}});
  CHECK_MESSAGE(report.passed(1e-4), report.worst);
  auto p = pred;
  auto t = target;
  p.zero_grad();
  t.zero_grad();
  tensor::backward(reconstruction_loss(p, t));
  CHECK(p.has_grad());
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("dynamics: unit-norm members and exact-target extremes") {
  std::mt19937_64 rng(12);
  EnsembleDynamics<double> single(6, 4, {1, 16}, 7);
  const auto z = testing::random_tensor<double>({5, 6}, rng);
  const std::vector<std::size_t> a{0, 1, 2, 3, 1};
  const auto p = single.predict(0, z, a);
  for (std::size_t b = 0; b < 5; ++b) {
    double n = 0;
    for (auto v : row(p, b)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1).epsilon(1e-6));
  }
  CHECK(dynamics_loss(single, z, a, p).item() == doctest::Approx(0).epsilon(1e-12));
  CHECK(dynamics_loss(single, z, a, tensor::scale(p, -1.0)).item() == doctest::Approx(2));
  CHECK_THROWS_AS(single.predict(0, z, std::vector<std::size_t>{0, 1, 2, 4, 1}), std::out_of_range);
}

TEST_CASE("dynamics loss: straight-line oracle over five members, gradients, detachment") {
  std::mt19937_64 rng(13);
  EnsembleDynamics<double> ens(6, 3, {5, 16}, 21);
  const auto z = testing::random_tensor<double>({4, 6}, rng, -1, 1, true);
  const auto zn = testing::random_tensor<double>({4, 6}, rng, -1, 1, true);
  const std::vector<std::size_t> a{2, 0, 1, 2};
  double oracle = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto p = ens.predict(k, z, a);
    for (std::size_t b = 0; b < 4; ++b) oracle += cos_distance_row(row(p, b), row(zn, b)) / 20.0;
  }
  CHECK(std::abs(dynamics_loss(ens, z, a, zn).item() - oracle) < 1e-6);

  std::vector<tensor::NamedTensor> params;
  for (const auto& prm : ens.parameters().parameters()) params.emplace_back(prm.name, prm.value);
  const auto report = tensor::grad_check([&] { return dynamics_loss(ens, z, a, zn); }, params);
  CHECK_MESSAGE(report.passed(1e-4), report.worst);

  auto zz = z, nn = zn;
  zz.zero_grad();
  nn.zero_grad();
  tensor::backward(dynamics_loss(ens, zz, a, nn));
  CHECK_FALSE(zz.has_grad());
  CHECK_FALSE(nn.has_grad());
  tensor::backward(dynamics_loss(ens, zz, a, nn, true));
  CHECK(zz.has_grad());
  CHECK_FALSE(nn.has_grad());
}

TEST_CASE("sample_prediction: uniform member choice") {
  std::mt19937_64 rng(14);
  const auto z = testing::random_tensor<double>({1, 4}, rng);
  const std::vector<std::size_t> a{1};
  EnsembleDynamics<double> one(4, 2, {1, 8}, 1);
  for (int i = 0; i < 20; ++i) {
    std::size_t m = 99;
    one.sample_prediction(z, a, rng, &m);
    CHECK(m == 0);
  }
  EnsembleDynamics<double> five(4, 2, {5, 8}, 1);
  std::vector<std::size_t> counts(5, 0);
  const std::size_t draws = 100000;
  tensor::NoGradGuard guard;
  for (std::size_t i = 0; i < draws; ++i) {
    std::size_t m = 0;
    const auto p = five.sample_prediction(z, a, rng, &m);
    counts.at(m)++;
    if (i % 10000 == 0) {
      double n = 0;
      for (auto v : p.data()) n += v * v;
      CHECK(std::sqrt(n) == doctest::Approx(1).epsilon(1e-6));
    }
  }
  for (auto c : counts) CHECK(std::abs(double(c) / double(draws) - 0.2) < 0.01);
}

TEST_CASE("mfsc loss: composition of parts and lambda") {
  const auto cfg = tiny_config();
  std::mt19937_64 rng(17);
  model::FusionModel<float> net(cfg, 3);
  EnsembleDynamics<float> ens(cfg.embed_dim, 4, {3, 16}, 4);
  MfscBatch<float> batch;
  batch.obs = random_views(cfg, 4, rng);
  batch.masked_obs = batch.obs;
  model::MaskConfig mc;
  mc.cube_height = mc.cube_width = 2;
  mc.cube_depth = 1;
  model::cube_mask(batch.masked_obs, mc, rng);
  batch.next_obs = random_views(cfg, 4, rng);
  batch.actions = {0, 1, 2, 3};
  batch.rewards = {0.5f, -1.0f, 0.0f, 2.0f};

  auto w = LossWeights::from_gamma(0.99, 0.5);
  std::mt19937_64 r1(1);
  const auto parts = mfsc_loss<float>(net, nullptr, ens, batch, w, r1);
  CHECK(parts.total.item() ==
        doctest::Approx(parts.fusion.item() + 0.5f * parts.reconstruction.item()).epsilon(1e-6));
  CHECK(parts.fusion.item() >= 0.0f);
  CHECK(parts.reconstruction.item() >= 0.0f);
  CHECK(parts.dynamics.item() >= 0.0f);

  w.lambda = 0.0;
  std::mt19937_64 r2(1);
  const auto no_rec = mfsc_loss<float>(net, nullptr, ens, batch, w, r2);
  CHECK(no_rec.total.item() == no_rec.fusion.item());
  CHECK(no_rec.fusion.item() == parts.fusion.item());

  LossSwitches off;
  off.fusion = off.reconstruction = off.dynamics = false;
  w.lambda = 1.0;
  const auto none = mfsc_loss<float>(net, nullptr, ens, batch, w, r2, off);
  CHECK(none.total.item() == 0.0f);

  model::FusionModel<float> target(cfg, 3);
  std::mt19937_64 r3(1);
  const auto with_target = mfsc_loss<float>(net, &target, ens, batch, w, r3);
  CHECK(with_target.reconstruction.item() == doctest::Approx(parts.reconstruction.item()).epsilon(1e-5));
}

TEST_CASE("reward normalizer: constant stream, moments, floor") {
  RewardNormalizer constant;
  double last = 1.0;
  for (int i = 0; i < 200; ++i) last = constant.normalize(3.5);
  CHECK(last == 0.0);
  CHECK(std::isfinite(last));

  RewardNormalizer norm;
  std::mt19937_64 rng(18);
  std::vector<double> out;
  for (int i = 0; i < 1100; ++i) {
    const double v = norm.normalize(util::normal(rng));
    if (i >= 100) out.push_back(v);
  }
  const double m = std::accumulate(out.begin(), out.end(), 0.0) / double(out.size());
  double var = 0;
  for (double v : out) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / double(out.size()));
  CHECK(std::abs(m) < 0.1);
  CHECK(sd >= 0.8);
  CHECK(sd <= 1.2);

  RewardNormalizer shifted;
  std::vector<double> out2;
  for (int i = 0; i < 1100; ++i) {
    const double v = shifted.normalize(5.0 + 4.0 * util::normal(rng));
    if (i >= 100) out2.push_back(v);
  }
  const double m2 = std::accumulate(out2.begin(), out2.end(), 0.0) / double(out2.size());
  CHECK(std::abs(m2) < 0.1);
}

TEST_CASE("tabular target iteration reproduces the independent-coupling fixed point") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const double gamma = trial % 2 == 0 ? 0.9 : 0.99;
    const auto m = mdp::random_mdp(rng, 8, 3, gamma);
    const auto pi = mdp::random_policy(rng, 8, 3);
    const auto w = LossWeights::from_gamma(gamma);
    const auto tab = tabular_target_iteration(m, pi, w, 1e-12);
    const mdp::MetricOperator op(m, pi, gamma, mdp::CouplingKind::independent);
    const auto fp = mdp::solve_fixed_point(op, mdp::MetricMatrix(8), 1e-12, 100000);
    double diff = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) diff = std::max(diff, std::abs(tab.metric[i * 8 + j] - fp.metric(i, j)));
    }
    CHECK(diff < 1e-9);
  }
}
