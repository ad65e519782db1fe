// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cardioclip/mae.hpp"
#include "cardioclip/optim.hpp"

using namespace cardioclip;

namespace {

VisualEncoderConfig tiny_visual() {
  VisualEncoderConfig v;
  v.input_dims = {8, 8, 8};
  v.patch_size = {4, 4, 4};
  v.embed_dim = 16;
  v.depth = 1;
  v.heads = 2;
  v.proj_dim = 8;
  return v;
}

DecoderConfig tiny_decoder() {
  DecoderConfig d;
  d.embed_dim = 16;
  d.depth = 1;
  d.heads = 2;
  return d;
}

Volume3D random_volume(Dims3 dims, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D v = Volume3D::zeros(dims);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("mask counts at the default geometry") {
  const MaskPlan m = sample_mask(64, 0.75, 1);
  CHECK(m.masked_idx.size() == 48);
  CHECK(m.visible_idx.size() == 16);
  CHECK(m.is_partition());
  CHECK(std::is_sorted(m.masked_idx.begin(), m.masked_idx.end()));
  CHECK(std::is_sorted(m.visible_idx.begin(), m.visible_idx.end()));
}

TEST_CASE("mask sampling is deterministic per seed") {
  const MaskPlan a = sample_mask(64, 0.75, 99), b = sample_mask(64, 0.75, 99), c = sample_mask(64, 0.75, 100);
  CHECK(a.masked_idx == b.masked_idx);
  CHECK(a.visible_idx == b.visible_idx);
  CHECK(a.masked_idx != c.masked_idx);
}

TEST_CASE("each patch is masked with frequency ratio") {
  std::vector<int> hits(4, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (auto idx : sample_mask(4, 0.5, substream_seed(7, "draw") + static_cast<std::uint64_t>(i)).masked_idx)
      ++hits[idx];
  for (int h : hits) CHECK(std::abs(h / double(draws) - 0.5) <= 0.02);
}

TEST_CASE("partition invariant over many random plans") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(200);
    const double ratio = rng.uniform(0.05, 0.95);
    const auto expected = static_cast<std::size_t>(std::floor(ratio * double(n) + 1e-9));
    if (expected < 1 || expected + 1 > n) {
      CHECK_THROWS_AS(sample_mask(n, ratio, i), std::invalid_argument);
      continue;
    }
    const MaskPlan m = sample_mask(n, ratio, rng.next_u64());
    CHECK(m.is_partition());
    CHECK(m.masked_idx.size() == expected);
  }
}

TEST_CASE("invalid ratios are rejected") {
  CHECK_THROWS_AS(sample_mask(64, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_mask(64, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_mask(1, 0.5, 1), std::invalid_argument);
}

TEST_CASE("apply_mask returns visible patches in index order") {
  Volume3D v = Volume3D::zeros({2, 2, 4});
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = float(i);
  const PatchGrid g = patchify(v, {2, 2, 1});
  REQUIRE(g.count() == 4);
  MaskPlan m;
  m.n_total = 4;
  m.visible_idx = {0, 2};
  m.masked_idx = {1, 3};
  const Matrix<float> vis = apply_mask(g, m);
  REQUIRE(vis.rows() == 2);
  for (std::size_t j = 0; j < g.patch_volume(); ++j) {
    CHECK(vis(0, j) == g.patches(0, j));
    CHECK(vis(1, j) == g.patches(2, j));
  }
}

TEST_CASE("masked MSE touches masked rows only") {
  Rng rng(4);
  Matrix<double> recon(6, 5), target(6, 5);
  for (auto& x : recon.flat()) x = rng.normal();
  for (auto& x : target.flat()) x = rng.normal();
  const std::vector<std::size_t> masked{1, 4, 5};
  const auto r = masked_mse(recon, target, masked);

  double s = 0;
  for (auto m : masked)
    for (std::size_t j = 0; j < 5; ++j) s += (recon(m, j) - target(m, j)) * (recon(m, j) - target(m, j));
  CHECK(r.loss == doctest::Approx(s / 15.0).epsilon(1e-14));

  for (std::size_t row : {0, 2, 3})
    for (std::size_t j = 0; j < 5; ++j) CHECK(r.d_recon(row, j) == 0.0);

  // changing visible predictions leaves the loss unchanged
  auto recon2 = recon;
  for (std::size_t j = 0; j < 5; ++j) recon2(2, j) += 10.0;
  CHECK(masked_mse(recon2, target, masked).loss == r.loss);

  const std::vector<std::size_t> shuffled{5, 1, 4};
  CHECK(masked_mse(recon, target, shuffled).loss == doctest::Approx(r.loss).epsilon(1e-15));
  CHECK(masked_mse(target, target, masked).loss == 0.0);
}

TEST_CASE("constant volume with a zero decoder head: loss is the squared intensity") {
  const auto v = tiny_visual();
  const auto d = tiny_decoder();
  ParamStore<float> store = init_mae_params(v, d, 5);
  for (const char* name : {"decoder.head.weight", "decoder.head.bias"}) {
    auto& p = store.at(name);
    std::fill(p.value.begin(), p.value.end(), 0.0f);
  }
  const VisualEncoder<float> enc(v, store);
  const MaeDecoder<float> dec(v, d, store);
  Volume3D vol = Volume3D::zeros(v.input_dims);
  std::fill(vol.voxels.begin(), vol.voxels.end(), 0.6f);
  const MaskPlan plan = sample_mask(v.num_patches(), 0.75, 6);
  const auto out = mae_forward(vol, plan, enc, dec, d);
  CHECK(out.loss == doctest::Approx(0.36).epsilon(1e-6));
  CHECK(out.masked_idx == plan.masked_idx);
  CHECK(out.masked_recon.rows() == plan.masked_idx.size());
}

TEST_CASE("schedule: warmup ramp, peak, cosine endpoint") {
  ScheduleConfig s;
  s.base_lr = 1e-4;
  s.warmup_steps = 10;
  s.total_steps = 100;
  s.min_lr = 1e-6;
  CHECK(lr_at_step(s, 4) == doctest::Approx(5e-5));
  CHECK(lr_at_step(s, 10) == doctest::Approx(1e-4));
  CHECK(lr_at_step(s, 100) == doctest::Approx(1e-6));
  CHECK(lr_at_step(s, 9) == doctest::Approx(lr_at_step(s, 10)));
  for (std::size_t t = 10; t < 100; ++t) CHECK(lr_at_step(s, t + 1) <= lr_at_step(s, t));
  CHECK_THROWS_AS(lr_at_step(s, 101), std::invalid_argument);
  CHECK(warmup_from_fraction(0.05, 640) == 32);
  CHECK(warmup_from_fraction(0.05, 4) == 1);
  CHECK(warmup_from_fraction(0.0, 4) == 0);
}

TEST_CASE("one volume, one epoch: one optimizer step") {
  const auto v = tiny_visual();
  const auto d = tiny_decoder();
  ParamStore<float> store = init_mae_params(v, d, 7);
  MaeTrainConfig cfg;
  cfg.epochs = 1;
  const std::vector<Volume3D> corpus{random_volume(v.input_dims, 8)};
  const auto r = train_mae(corpus, store, v, d, cfg);
  CHECK(r.steps == 1);
  CHECK(r.trace.size() == 1);
}

TEST_CASE("stage-1 training is deterministic and reduces the loss") {
  const auto v = tiny_visual();
  const auto d = tiny_decoder();
  std::vector<Volume3D> corpus;
  for (int i = 0; i < 16; ++i) corpus.push_back(random_volume(v.input_dims, 100 + i));
  MaeTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 4;
  cfg.base_lr = 1e-3;
  cfg.seed = 9;
  ParamStore<float> a = init_mae_params(v, d, 10), b = init_mae_params(v, d, 10);
  const auto ra = train_mae(corpus, a, v, d, cfg);
  const auto rb = train_mae(corpus, b, v, d, cfg);
  REQUIRE(ra.trace.size() == 6);
  for (std::size_t e = 0; e < ra.trace.size(); ++e) {
    CHECK(ra.trace[e].mean_loss == rb.trace[e].mean_loss);
    CHECK(ra.trace[e].lr_last == rb.trace[e].lr_last);
  }
  CHECK(ra.trace.back().mean_loss < ra.trace.front().mean_loss);
  CHECK(a.all_finite());
}

TEST_CASE("weight decay skips vectors and tokens") {
  const auto store = init_mae_params(tiny_visual(), tiny_decoder(), 11);
  for (const auto& p : store.items()) {
    if (p.shape.size() == 2 && p.name.ends_with(".weight")) CHECK_MESSAGE(p.decay, p.name);
    else CHECK_MESSAGE(!p.decay, p.name);
  }
}
