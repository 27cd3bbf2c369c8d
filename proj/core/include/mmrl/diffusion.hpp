#pragma once

#include <functional>

#include "mmrl/net.hpp"

namespace mmrl {

// Variance schedule for the forward noising chain, with the cumulative
// products used by the closed-form marginal.
struct BetaSchedule {
  int steps = 0;
  Vec beta;       // beta[t-1] for t = 1..steps
  Vec alpha;      // 1 - beta
  Vec alpha_bar;  // prod of alpha up to t

  static BetaSchedule linear(int steps, double beta_start = 1e-4,
                             double beta_end = 0.2);
  void validate() const;
};

// Closed-form marginal a_t = sqrt(abar_t) a0 + sqrt(1 - abar_t) noise.
Vec forward_noise(const Vec& a0, int t, const Vec& noise,
                  const BetaSchedule& sched);

// Zeroes the embedding with probability p, otherwise returns it unchanged.
Vec mask_embedding(const Vec& embedding, double p, Rng& rng);

struct PolicyConfig {
  int action_dim = 2;
  int state_dim = 4;
  int embedding_dim = 5;
  double mask_prob = 0.5;
  int diffusion_steps = 5;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::kTanh;

  void validate() const;
  // Denoiser input: action, state, one-hot step encoding, embedding.
  int denoiser_input_dim() const {
    return action_dim + state_dim + diffusion_steps + embedding_dim;
  }
};

struct PolicyBatch {
  int n = 0;
  Vec states;      // n x state_dim
  Vec embeddings;  // n x embedding_dim
  Vec targets;     // n x action_dim, in [-1, 1]
};

// Noise-prediction action generator conditioned on state and mode embedding.
class DiffusionPolicy {
 public:
  DiffusionPolicy(const PolicyConfig& config, Rng& init_rng);
  DiffusionPolicy(const PolicyConfig& config, BetaSchedule sched, Vec params);

  // Predicted noise for a_t at step t (1-based).
  Vec denoise(const Vec& a_t, const Vec& state, int t, const Vec& embedding) const;

  // Ancestral reverse sampling from a_T ~ N(0, I); result clamped to [-1, 1].
  Vec sample(const Vec& state, const Vec& embedding, Rng& rng) const;

  // Batched reverse sampling with per-row states and embeddings; one shared
  // rng, noise drawn in row order per diffusion step.
  Vec sample_batch(const Vec& states, const Vec& embeddings, int n,
                   Rng& rng) const;

  // Deterministic reverse chain with injected per-step denoiser outputs and
  // transition noise; exposed for round-trip verification.
  static Vec reverse_chain(
      const std::function<Vec(const Vec& a_t, int t)>& denoiser,
      const BetaSchedule& sched, Vec a_terminal,
      const std::vector<Vec>& step_noise);

  struct LossResult {
    double loss = 0.0;
    Vec param_grad;
  };

  // Denoising-score-matching loss on target actions: per element draw
  // t ~ U{1..T} and eps ~ N(0, I), loss = mean ||eps - eps_hat||^2.
  LossResult bc_loss(const PolicyBatch& batch, Rng& rng) const;

  const PolicyConfig& config() const { return config_; }
  const BetaSchedule& schedule() const { return sched_; }
  const NetSpec& net_spec() const { return spec_; }
  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }

 private:
  Vec denoiser_input(const Vec& a_t, const Vec& state, int t,
                     const Vec& embedding) const;

  PolicyConfig config_;
  BetaSchedule sched_;
  NetSpec spec_;
  Vec params_;
};

}  // namespace mmrl
