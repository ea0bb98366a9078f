#include <doctest.h>

#include <cmath>
#include <random>

#include "mfsc/model/fusion_model.hpp"
#include "mfsc/tensor/grad_check.hpp"
#include "test_util.hpp"

using namespace mfsc;
using namespace mfsc::model;
using mfsc::tensor::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_views = 3;
  cfg.view_height = cfg.view_width = 6;
  cfg.channels = 3;
  cfg.encoder = {{4, 3, 2}};
  return cfg;
}

envs::MultiViewObservation random_obs(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.05f, 1.0f);
  envs::MultiViewObservation obs;
  obs.height = cfg.view_height;
  obs.width = cfg.view_width;
  obs.channels = cfg.channels;
  for (std::size_t k = 0; k < cfg.num_views; ++k) {
    std::vector<float> v(obs.view_size());
    for (auto& p : v) p = unit(rng);
    obs.views.push_back(std::move(v));
    obs.status.push_back(envs::ViewStatus::present);
  }
  return obs;
}

ViewBatch random_batch(const ModelConfig& cfg, std::size_t B, std::mt19937_64& rng) {
  std::vector<envs::MultiViewObservation> obs;
  for (std::size_t b = 0; b < B; ++b) obs.push_back(random_obs(cfg, rng));
  return ViewBatch::from(obs);
}

template <typename T>
double max_diff(std::span<const T> a, std::span<const T> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - double(b[i])));
  return d;
}

}  // namespace

TEST_CASE("encode and fuse shapes, unit-norm output") {
  std::mt19937_64 rng(1);
  const auto cfg = tiny_config();
  FusionModel<float> model(cfg, 7);
  const auto batch = random_batch(cfg, 5, rng);
  const auto emb = model.encode_views(batch);
  CHECK(emb.shape() == tensor::Shape{5, 3, 8});
  const auto out = model.fuse(emb);
  CHECK(out.fused.shape() == tensor::Shape{5, 8});
  CHECK(out.tokens.shape() == tensor::Shape{5, 4, 8});
  for (std::size_t b = 0; b < 5; ++b) {
    double n = 0.0;
    for (std::size_t j = 0; j < 8; ++j) n += double(out.fused.at(b * 8 + j)) * out.fused.at(b * 8 + j);
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }
  const auto head = model.predict(out.tokens);
  CHECK(head.shape() == out.tokens.shape());
  CHECK(max_diff(head.data(), out.tokens.data()) > 1e-3);
}

TEST_CASE("missing view slot is exactly the mask token") {
  std::mt19937_64 rng(2);
  const auto cfg = tiny_config();
  FusionModel<float> model(cfg, 3);
  auto batch = random_batch(cfg, 4, rng);
  batch.status[1 * 3 + 1] = envs::ViewStatus::missing;
  batch.status[3 * 3 + 0] = envs::ViewStatus::missing;
  const auto emb = model.encode_views(batch);
  const auto token = model.mask_token().data();
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(emb.at((1 * 3 + 1) * 8 + j) == token[j]);
    CHECK(emb.at((3 * 3 + 0) * 8 + j) == token[j]);
  }
  const auto out = model.fuse(emb);
  for (float v : out.fused.data()) CHECK(std::isfinite(v));

  // All views missing still fuses to a finite unit vector.
  for (auto& s : batch.status) s = envs::ViewStatus::missing;
  const auto all = model.forward(batch);
  double n = 0.0;
  for (std::size_t j = 0; j < 8; ++j) n += double(all.fused.at(j)) * all.fused.at(j);
  CHECK(std::abs(n - 1.0) < 1e-5);
}

TEST_CASE("pixel-zero mode encodes the blank image instead") {
  std::mt19937_64 rng(4);
  auto cfg = tiny_config();
  cfg.missing_view = MissingViewMode::pixel_zero;
  FusionModel<float> model(cfg, 3);
  auto batch = random_batch(cfg, 2, rng);
  auto v = batch.view(0, 2);
  std::fill(v.begin(), v.end(), 0.0f);
  batch.status[2] = envs::ViewStatus::missing;
  auto blank = random_batch(cfg, 1, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    auto b = blank.view(0, k);
    std::fill(b.begin(), b.end(), 0.0f);
  }
  const auto emb = model.encode_views(batch);
  const auto ref = model.encode_views(blank);
  for (std::size_t j = 0; j < 8; ++j) CHECK(emb.at(2 * 8 + j) == doctest::Approx(ref.at(j)));
  CHECK(max_diff(std::span<const float>(emb.data().data() + 16, 8), model.mask_token().data()) > 1e-4);
}

TEST_CASE("identical images give identical embeddings") {
  std::mt19937_64 rng(5);
  const auto cfg = tiny_config();
  FusionModel<float> model(cfg, 1);
  auto batch = random_batch(cfg, 1, rng);
  auto a = batch.view(0, 0);
  auto b = batch.view(0, 2);
  std::copy(a.begin(), a.end(), b.begin());
  const auto emb = model.encode_views(batch);
  // Same weights; GEMM rows may round differently in the last bit.
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(emb.at(j) - emb.at(16 + j)) < 1e-6f);
}

TEST_CASE("wrong view shape is rejected") {
  std::mt19937_64 rng(6);
  auto cfg = tiny_config();
  FusionModel<float> model(cfg, 1);
  cfg.view_height = 8;
  const auto batch = random_batch(cfg, 1, rng);
  CHECK_THROWS_AS(model.encode_views(batch), std::invalid_argument);
  CHECK_THROWS(model.fuse(Tensor<float>::zeros({2, 2, 8})));
  auto bad = tiny_config();
  bad.heads = 3;
  CHECK_THROWS_AS(FusionModel<float>(bad, 1), std::invalid_argument);
}

TEST_CASE("equal positional rows make fusion permutation symmetric") {
  std::mt19937_64 rng(8);
  auto cfg = tiny_config();
  cfg.depth = 2;
  FusionModel<double> model(cfg, 9);
  auto pos = model.positions();
  auto data = pos.mutable_data();
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t j = 0; j < 8; ++j) data[r * 8 + j] = data[j];
  const auto emb = testing::random_tensor<double>({2, 3, 8}, rng);
  const auto permuted = tensor::concat<double>(
      {tensor::slice(emb, 1, 2, 1), tensor::slice(emb, 1, 0, 1), tensor::slice(emb, 1, 1, 1)}, 1);
  const auto a = model.fuse(emb).fused, b = model.fuse(permuted).fused;
  CHECK(max_diff(a.data(), b.data()) < 1e-5);
}

TEST_CASE("distinct positions make swapped views distinguishable") {
  std::mt19937_64 rng(10);
  FusionModel<double> model(tiny_config(), 11);
  const auto emb = testing::random_tensor<double>({1, 3, 8}, rng);
  const auto swapped = tensor::concat<double>(
      {tensor::slice(emb, 1, 1, 1), tensor::slice(emb, 1, 0, 1), tensor::slice(emb, 1, 2, 1)}, 1);
  CHECK(max_diff(model.fuse(emb).fused.data(), model.fuse(swapped).fused.data()) > 1e-8);
}

TEST_CASE("attention block passes grad_check") {
  std::mt19937_64 rng(12);
  tensor::ParameterStore<double> store;
  AttentionBlock<double> block(store, "blk", 8, 2, 2, rng);
  const auto x = testing::random_tensor<double>({2, 4, 8}, rng, -1, 1, true);
  const auto proj = testing::random_tensor<double>({2, 4, 8}, rng);
  std::vector<tensor::NamedTensor> named{{"x", x}};
  for (const auto& p : store.parameters()) named.push_back({p.name, p.value});
  const auto report =
      tensor::grad_check([&] { return tensor::sum(tensor::mul(block(x), proj)); }, named);
  INFO(report.worst);
  CHECK(report.passed(1e-4));
}

TEST_CASE("composed model passes grad_check through encoder, fusion and head") {
  std::mt19937_64 rng(13);
  const auto cfg = tiny_config();
  FusionModel<double> model(cfg, 5);
  auto batch = random_batch(cfg, 2, rng);
  batch.status[4] = envs::ViewStatus::missing;
  const auto proj = testing::random_tensor<double>({2, 4, 8}, rng);
  const auto proj2 = testing::random_tensor<double>({2, 8}, rng);
  std::vector<tensor::NamedTensor> named;
  for (const auto& p : model.parameters().parameters()) named.push_back({p.name, p.value});
  const auto report = tensor::grad_check(
      [&] {
        const auto out = model.forward(batch);
        return tensor::add(tensor::sum(tensor::mul(model.predict(out.tokens), proj)),
                           tensor::sum(tensor::mul(out.fused, proj2)));
      },
      named);
  INFO(report.worst);
  CHECK(report.passed(1e-4));
}

TEST_CASE("targets behind stop_gradient receive no gradient") {
  std::mt19937_64 rng(14);
  FusionModel<double> model(tiny_config(), 2);
  const auto online = testing::random_tensor<double>({2, 3, 8}, rng, -1, 1, true);
  const auto target_in = testing::random_tensor<double>({2, 3, 8}, rng, -1, 1, true);
  const auto pred = model.predict(model.fuse(online).tokens);
  const auto target = tensor::stop_gradient(model.fuse(target_in).tokens);
  const auto loss = tensor::mean(tensor::cosine_similarity(pred, target));
  tensor::backward(loss);
  CHECK(online.has_grad());
  double g = 0.0;
  for (double v : online.grad()) g += std::abs(v);
  CHECK(g > 0.0);
  CHECK_FALSE(target_in.has_grad());
}

TEST_CASE("momentum copy tracks the online parameters by EMA") {
  const auto cfg = tiny_config();
  FusionModel<float> online(cfg, 1), target(cfg, 2);
  target.copy_from(online);
  const auto& op = online.parameters().parameters();
  const auto& tp = target.parameters().parameters();
  for (std::size_t i = 0; i < op.size(); ++i) CHECK(max_diff(op[i].value.data(), tp[i].value.data()) == 0.0);
  std::vector<std::vector<float>> before;
  for (const auto& p : tp) before.emplace_back(p.value.data().begin(), p.value.data().end());
  for (const auto& p : op) {
    auto v = p.value;
    for (auto& x : v.mutable_data()) x += 1.0f;
  }
  target.ema_update_from(online, 0.005f);
  for (std::size_t i = 0; i < op.size(); ++i) {
    for (std::size_t j = 0; j < before[i].size(); ++j) {
      const float expect = 0.995f * before[i][j] + 0.005f * op[i].value.at(j);
      CHECK(std::abs(tp[i].value.at(j) - expect) < 1e-6f);
    }
  }
}

TEST_CASE("cube mask: ratio extremes, coverage bounds, determinism") {
  std::mt19937_64 rng(20);
  ModelConfig cfg;
  cfg.view_height = cfg.view_width = 48;
  cfg.num_views = 3;
  const auto obs = random_obs(cfg, rng);
  MaskConfig mc;

  mc.mask_ratio = 0.0;
  std::mt19937_64 r0(1);
  CHECK(cube_mask(obs, mc, r0).views == obs.views);

  mc.mask_ratio = 1.0;
  const auto full = cube_mask(obs, mc, r0);
  for (const auto& v : full.views)
    for (float p : v) CHECK(p == 0.0f);

  mc.mask_ratio = 0.8;
  for (int trial = 0; trial < 20; ++trial) {
    const auto masked = cube_mask(obs, mc, r0);
    for (const auto& v : masked.views) {
      const double f = zero_fraction(v, 3);
      CHECK(f >= 0.8);
      CHECK(f < 0.8 + 144.0 / 2304.0);
    }
    CHECK(masked.views[0] != masked.views[1]);
  }
  std::mt19937_64 a(5), b(5);
  CHECK(cube_mask(obs, mc, a).views == cube_mask(obs, mc, b).views);

  // Stacked frames: cubes span consecutive frames and the bound is per cell.
  envs::MultiViewObservation stacked = obs;
  stacked.channels = 6;
  for (auto& v : stacked.views) v.resize(48 * 48 * 6, 0.5f);
  mc.cube_depth = 2;
  const auto ms = cube_mask(stacked, mc, r0);
  const double f = zero_fraction(ms.views[0], 6);
  CHECK(f >= 0.8);
  CHECK(f < 0.8 + 2 * 144.0 / (2304.0 * 2));

  mc.cube_height = 64;
  CHECK_THROWS_AS(cube_mask(obs, mc, r0), std::invalid_argument);
}
