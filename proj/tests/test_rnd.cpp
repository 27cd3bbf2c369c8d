#include "doctest.h"

#include <cmath>

#include "mmrl/rnd.hpp"

using namespace mmrl;

namespace {

RndConfig small_config() {
  RndConfig cfg;
  cfg.state_dim = 2;
  cfg.features = 8;
  cfg.hidden = {32};
  cfg.lr = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("novelty: predictor equal to target gives exactly zero") {
  Rng rng(1);
  RndPair rnd(small_config(), rng);
  rnd.set_predictor_params(rnd.target_params());
  CHECK(rnd.novelty({0.3, -0.4}) == 0.0);
  CHECK(rnd.intrinsic_reward({0.1, 0.1}, {0.9, 0.9}) == 0.0);
}

TEST_CASE("novelty: always clamped to [0, 1]") {
  Rng rng(2);
  RndPair rnd(small_config(), rng);
  Rng probe(3);
  for (int i = 0; i < 200; ++i) {
    const double nov = rnd.novelty({probe.uniform(-50, 50), probe.uniform(-50, 50)});
    CHECK(nov >= 0.0);
    CHECK(nov <= 1.0);
  }
}

TEST_CASE("novelty: trained-on cluster scores below an unvisited extreme state") {
  Rng rng(4);
  RndPair rnd(small_config(), rng);
  Rng sampler(5);
  Vec batch;
  for (int round = 0; round < 150; ++round) {
    batch.clear();
    for (int i = 0; i < 100; ++i) {
      batch.push_back(0.1 * sampler.normal());  // tight cluster at the origin
      batch.push_back(0.1 * sampler.normal());
    }
    rnd.update_predictor(batch, 100);
  }
  const double near = rnd.novelty({0.05, -0.05});
  const double far = rnd.novelty({0.9, 0.9});
  CHECK(far > near);
}

TEST_CASE("intrinsic_reward: formula cases") {
  Rng rng(6);
  RndConfig cfg = small_config();
  cfg.alpha = 0.0;
  RndPair rnd(cfg, rng);
  // alpha = 0 reduces to novelty(s').
  const Vec s = {0.2, 0.2}, sn = {0.7, -0.7};
  CHECK(rnd.intrinsic_reward(s, sn) == doctest::Approx(rnd.novelty(sn)));

  // Nonnegativity under arbitrary inputs and alpha = 1.
  RndConfig cfg2 = small_config();
  cfg2.alpha = 1.0;
  Rng rng2(7);
  RndPair rnd2(cfg2, rng2);
  Rng probe(8);
  for (int i = 0; i < 100; ++i) {
    const Vec a = {probe.uniform(-2, 2), probe.uniform(-2, 2)};
    const Vec b = {probe.uniform(-2, 2), probe.uniform(-2, 2)};
    CHECK(rnd2.intrinsic_reward(a, b) >= 0.0);
  }
}

TEST_CASE("intrinsic_reward: printed variant equals (1 - alpha) * novelty(s')") {
  Rng rng(9);
  RndConfig cfg = small_config();
  cfg.printed_variant = true;
  cfg.alpha = 0.5;
  RndPair rnd(cfg, rng);
  const Vec s = {0.4, 0.4}, sn = {-0.3, 0.8};
  CHECK(rnd.intrinsic_reward(s, sn) ==
        doctest::Approx(0.5 * rnd.novelty(sn)).epsilon(1e-12));
}

TEST_CASE("update_predictor: repeated training on one state drives novelty down") {
  Rng rng(10);
  RndPair rnd(small_config(), rng);
  Vec batch;
  for (int i = 0; i < 16; ++i) {
    batch.push_back(0.5);
    batch.push_back(-0.5);
  }
  // A couple of contrast states so the normalizer sees some variety.
  Vec contrast = {0.9, 0.9, -0.9, 0.3, 0.2, -0.8, -0.6, -0.1};
  rnd.update_predictor(contrast, 4);
  for (int round = 0; round < 500; ++round) rnd.update_predictor(batch, 16);
  CHECK(rnd.novelty({0.5, -0.5}) < 0.05);
}

TEST_CASE("update_predictor: empty batch raises") {
  Rng rng(11);
  RndPair rnd(small_config(), rng);
  CHECK_THROWS_AS(rnd.update_predictor({}, 0), ConfigError);
}

TEST_CASE("update_predictor: batch mean statistics are order-insensitive") {
  Rng rng(12);
  RndPair a(small_config(), rng);
  Rng rng2(12);
  RndPair b(small_config(), rng2);
  Rng fill(13);
  Vec batch, reversed;
  const int n = 64;
  for (int i = 0; i < n; ++i) {
    batch.push_back(fill.uniform(-1, 1));
    batch.push_back(fill.uniform(-1, 1));
  }
  for (int i = n - 1; i >= 0; --i) {
    reversed.push_back(batch[2 * i]);
    reversed.push_back(batch[2 * i + 1]);
  }
  a.update_predictor(batch, n);
  b.update_predictor(reversed, n);
  CHECK(a.state_stats().mean[0] ==
        doctest::Approx(b.state_stats().mean[0]).epsilon(1e-9));
  CHECK(a.state_stats().mean[1] ==
        doctest::Approx(b.state_stats().mean[1]).epsilon(1e-9));
  CHECK(a.novelty_stats().mean ==
        doctest::Approx(b.novelty_stats().mean).epsilon(1e-9));
}

TEST_CASE("fixed target: outputs for a fixed state never change across training") {
  Rng rng(14);
  RndPair rnd(small_config(), rng);
  const Vec probe_state = {0.25, 0.75};
  const Vec before = forward(rnd.net_spec(), rnd.target_params(), probe_state);
  Rng fill(15);
  Vec batch;
  for (int i = 0; i < 32; ++i) {
    batch.push_back(fill.uniform(-1, 1));
    batch.push_back(fill.uniform(-1, 1));
  }
  for (int round = 0; round < 50; ++round) rnd.update_predictor(batch, 32);
  const Vec after = forward(rnd.net_spec(), rnd.target_params(), probe_state);
  CHECK(before == after);
}

TEST_CASE("monotone extinction: re-presented transition loses intrinsic reward") {
  Rng rng(16);
  RndPair rnd(small_config(), rng);
  const Vec s = {0.0, 0.0}, sn = {0.6, 0.6};
  Vec batch = {s[0], s[1], sn[0], sn[1]};
  const double before = rnd.intrinsic_reward(s, sn);
  for (int round = 0; round < 600; ++round) rnd.update_predictor(batch, 2);
  const double after = rnd.intrinsic_reward(s, sn);
  CHECK(after < 0.05);
  CHECK(after <= before + 1e-12);
}
