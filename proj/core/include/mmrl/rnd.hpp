#pragma once

#include "mmrl/net.hpp"

namespace mmrl {

// Welford running mean/variance, per coordinate.
struct RunningMoments {
  long count = 0;
  Vec mean, m2;

  void init(std::size_t dim) {
    count = 0;
    mean.assign(dim, 0.0);
    m2.assign(dim, 0.0);
  }
  void observe(const double* x, std::size_t dim);
  double stddev(std::size_t i) const;
};

struct ScalarMoments {
  long count = 0;
  double mean = 0.0, m2 = 0.0;

  void observe(double x);
  double stddev() const;
};

struct RndConfig {
  int state_dim = 4;
  int features = 16;
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  double alpha = 0.5;           // previous-state novelty scale
  bool printed_variant = false; // subtract novelty(s') instead of novelty(s)
};

// Random-network-distillation novelty: squared prediction error of a trained
// network against a frozen random target, normalized by the running novelty
// deviation and clamped to [0, 1].
class RndPair {
 public:
  RndPair(const RndConfig& config, Rng& init_rng);

  double novelty(const Vec& state) const;

  // max(novelty(s') - alpha * novelty(s), 0); the printed variant uses s' in
  // both terms.
  double intrinsic_reward(const Vec& state, const Vec& next_state) const;

  // One Adam step on the mean prediction error over the batch; running state
  // and novelty statistics are refreshed from the batch.
  double update_predictor(const Vec& states, int n);

  const RndConfig& config() const { return config_; }
  const NetSpec& net_spec() const { return spec_; }
  const Vec& target_params() const { return target_; }
  const Vec& predictor_params() const { return predictor_; }

  // Checkpoint restore / test seams.
  void set_predictor_params(Vec params);
  void set_target_params(Vec params);
  RunningMoments& state_stats() { return state_stats_; }
  ScalarMoments& novelty_stats() { return novelty_stats_; }
  const RunningMoments& state_stats() const { return state_stats_; }
  const ScalarMoments& novelty_stats() const { return novelty_stats_; }

 private:
  Vec normalize_state(const Vec& state) const;
  double raw_error(const Vec& normalized) const;

  RndConfig config_;
  NetSpec spec_;
  Vec target_;     // frozen after construction
  Vec predictor_;
  AdamState adam_;
  RunningMoments state_stats_;
  ScalarMoments novelty_stats_;
};

}  // namespace mmrl
