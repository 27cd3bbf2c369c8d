#include "mmrl/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace mmrl {

BetaSchedule BetaSchedule::linear(int steps, double beta_start, double beta_end) {
  BetaSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    s.beta[t] = steps == 1
                    ? beta_end
                    : beta_start + (beta_end - beta_start) * t / (steps - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  s.validate();
  return s;
}

void BetaSchedule::validate() const {
  if (steps < 1) throw ConfigError("BetaSchedule needs at least one step");
  double prev_bar = 1.0;
  for (int t = 0; t < steps; ++t) {
    if (!(beta[t] > 0.0 && beta[t] < 1.0)) {
      throw ConfigError("beta values must lie in (0, 1)");
    }
    if (!(alpha_bar[t] < prev_bar)) {
      throw ConfigError("alpha_bar must be strictly decreasing");
    }
    prev_bar = alpha_bar[t];
  }
}

Vec forward_noise(const Vec& a0, int t, const Vec& noise,
                  const BetaSchedule& sched) {
  if (t < 1 || t > sched.steps) {
    throw ConfigError("forward_noise: diffusion step out of range");
  }
  if (noise.size() != a0.size()) {
    throw ConfigError("forward_noise: noise dimension mismatch");
  }
  const double abar = sched.alpha_bar[t - 1];
  const double c0 = std::sqrt(abar);
  const double cn = std::sqrt(1.0 - abar);
  Vec out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i) {
    out[i] = c0 * a0[i] + cn * noise[i];
  }
  return out;
}

Vec mask_embedding(const Vec& embedding, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("mask probability must be in [0, 1]");
  if (rng.uniform01() < p) return Vec(embedding.size(), 0.0);
  return embedding;
}

void PolicyConfig::validate() const {
  if (action_dim < 1 || state_dim < 1) {
    throw ConfigError("policy needs positive action and state dims");
  }
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (mask_prob < 0.0 || mask_prob > 1.0) {
    throw ConfigError("mask_prob must be in [0, 1]");
  }
  if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be >= 1");
}

DiffusionPolicy::DiffusionPolicy(const PolicyConfig& config, Rng& init_rng)
    : config_(config), sched_(BetaSchedule::linear(config.diffusion_steps)) {
  config_.validate();
  spec_ = NetSpec::mlp(config_.denoiser_input_dim(), config_.hidden,
                       config_.action_dim, config_.activation);
  params_ = init_params(spec_, init_rng);
}

DiffusionPolicy::DiffusionPolicy(const PolicyConfig& config, BetaSchedule sched,
                                 Vec params)
    : config_(config), sched_(std::move(sched)) {
  config_.validate();
  sched_.validate();
  if (sched_.steps != config_.diffusion_steps) {
    throw ConfigError("schedule length does not match diffusion_steps");
  }
  spec_ = NetSpec::mlp(config_.denoiser_input_dim(), config_.hidden,
                       config_.action_dim, config_.activation);
  if (params.size() != spec_.param_count()) {
    throw ConfigError("policy parameter vector has the wrong length");
  }
  params_ = std::move(params);
}

Vec DiffusionPolicy::denoiser_input(const Vec& a_t, const Vec& state, int t,
                                    const Vec& embedding) const {
  if (static_cast<int>(a_t.size()) != config_.action_dim ||
      static_cast<int>(state.size()) != config_.state_dim ||
      static_cast<int>(embedding.size()) != config_.embedding_dim) {
    throw ConfigError("denoiser input dimension mismatch");
  }
  Vec in;
  in.reserve(config_.denoiser_input_dim());
  in.insert(in.end(), a_t.begin(), a_t.end());
  in.insert(in.end(), state.begin(), state.end());
  for (int k = 1; k <= config_.diffusion_steps; ++k) {
    in.push_back(k == t ? 1.0 : 0.0);
  }
  in.insert(in.end(), embedding.begin(), embedding.end());
  return in;
}

Vec DiffusionPolicy::denoise(const Vec& a_t, const Vec& state, int t,
                             const Vec& embedding) const {
  if (t < 1 || t > config_.diffusion_steps) {
    throw ConfigError("denoise: diffusion step out of range");
  }
  return forward(spec_, params_, denoiser_input(a_t, state, t, embedding));
}

Vec DiffusionPolicy::reverse_chain(
    const std::function<Vec(const Vec& a_t, int t)>& denoiser,
    const BetaSchedule& sched, Vec a_terminal,
    const std::vector<Vec>& step_noise) {
  Vec a = std::move(a_terminal);
  for (int t = sched.steps; t >= 1; --t) {
    const Vec eps_hat = denoiser(a, t);
    const double alpha = sched.alpha[t - 1];
    const double beta = sched.beta[t - 1];
    const double abar = sched.alpha_bar[t - 1];
    const double coef = beta / std::sqrt(1.0 - abar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = inv_sqrt_alpha * (a[i] - coef * eps_hat[i]);
    }
    if (t > 1) {
      const Vec& z = step_noise[t - 2];
      const double sigma = std::sqrt(beta);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += sigma * z[i];
    }
    if (!all_finite(a)) {
      throw NumericError("non-finite sample in reverse diffusion at step " +
                         std::to_string(t));
    }
  }
  clamp_inplace(a, -1.0, 1.0);
  return a;
}

Vec DiffusionPolicy::sample(const Vec& state, const Vec& embedding,
                            Rng& rng) const {
  Vec a_terminal(config_.action_dim);
  for (double& v : a_terminal) v = rng.normal();
  std::vector<Vec> noise;
  noise.resize(std::max(0, config_.diffusion_steps - 1));
  for (auto& z : noise) {
    z.resize(config_.action_dim);
    for (double& v : z) v = rng.normal();
  }
  auto denoiser = [this, &state, &embedding](const Vec& a_t, int t) {
    return denoise(a_t, state, t, embedding);
  };
  return reverse_chain(denoiser, sched_, std::move(a_terminal), noise);
}

Vec DiffusionPolicy::sample_batch(const Vec& states, const Vec& embeddings,
                                  int n, Rng& rng) const {
  const int ad = config_.action_dim;
  const int in_dim = config_.denoiser_input_dim();
  if (states.size() != static_cast<std::size_t>(n) * config_.state_dim ||
      embeddings.size() != static_cast<std::size_t>(n) * config_.embedding_dim) {
    throw ConfigError("sample_batch: input length mismatch");
  }
  Vec a(static_cast<std::size_t>(n) * ad);
  for (double& v : a) v = rng.normal();

  Vec inputs(static_cast<std::size_t>(n) * in_dim, 0.0);
  Vec eps_hat;
  for (int t = config_.diffusion_steps; t >= 1; --t) {
    for (int r = 0; r < n; ++r) {
      double* in = inputs.data() + static_cast<std::size_t>(r) * in_dim;
      std::copy(a.begin() + static_cast<std::size_t>(r) * ad,
                a.begin() + static_cast<std::size_t>(r + 1) * ad, in);
      const double* s = states.data() + static_cast<std::size_t>(r) * config_.state_dim;
      std::copy(s, s + config_.state_dim, in + ad);
      for (int k = 0; k < config_.diffusion_steps; ++k) {
        in[ad + config_.state_dim + k] = (k == t - 1) ? 1.0 : 0.0;
      }
      const double* e = embeddings.data() +
                        static_cast<std::size_t>(r) * config_.embedding_dim;
      std::copy(e, e + config_.embedding_dim,
                in + ad + config_.state_dim + config_.diffusion_steps);
    }
    forward_batch(spec_, params_, inputs, n, eps_hat);
    const double alpha = sched_.alpha[t - 1];
    const double beta = sched_.beta[t - 1];
    const double abar = sched_.alpha_bar[t - 1];
    const double coef = beta / std::sqrt(1.0 - abar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double sigma = t > 1 ? std::sqrt(beta) : 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = inv_sqrt_alpha * (a[i] - coef * eps_hat[i]);
      if (t > 1) a[i] += sigma * rng.normal();
    }
  }
  if (!all_finite(a)) throw NumericError("non-finite sample in batched reverse diffusion");
  clamp_inplace(a, -1.0, 1.0);
  return a;
}

DiffusionPolicy::LossResult DiffusionPolicy::bc_loss(const PolicyBatch& batch,
                                                     Rng& rng) const {
  const int n = batch.n;
  if (n == 0) throw ConfigError("bc_loss: empty batch");
  const int ad = config_.action_dim;
  const int in_dim = config_.denoiser_input_dim();

  Vec inputs(static_cast<std::size_t>(n) * in_dim, 0.0);
  Vec eps(static_cast<std::size_t>(n) * ad);
  for (int r = 0; r < n; ++r) {
    const int t = 1 + static_cast<int>(rng.uniform_int(config_.diffusion_steps));
    const double abar = sched_.alpha_bar[t - 1];
    const double c0 = std::sqrt(abar);
    const double cn = std::sqrt(1.0 - abar);
    double* in = inputs.data() + static_cast<std::size_t>(r) * in_dim;
    for (int i = 0; i < ad; ++i) {
      const double e = rng.normal();
      eps[static_cast<std::size_t>(r) * ad + i] = e;
      const double a0 = batch.targets[static_cast<std::size_t>(r) * ad + i];
      in[i] = c0 * a0 + cn * e;
    }
    const double* s = batch.states.data() +
                      static_cast<std::size_t>(r) * config_.state_dim;
    std::copy(s, s + config_.state_dim, in + ad);
    in[ad + config_.state_dim + (t - 1)] = 1.0;
    const double* e = batch.embeddings.data() +
                      static_cast<std::size_t>(r) * config_.embedding_dim;
    std::copy(e, e + config_.embedding_dim,
              in + ad + config_.state_dim + config_.diffusion_steps);
  }

  BatchTrace trace;
  Vec eps_hat;
  forward_batch(spec_, params_, inputs, n, eps_hat, &trace);

  LossResult result;
  Vec out_grads(static_cast<std::size_t>(n) * ad);
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    const double diff = eps_hat[i] - eps[i];
    result.loss += diff * diff;
    out_grads[i] = 2.0 * diff / n;
  }
  result.loss /= n;
  result.param_grad.assign(spec_.param_count(), 0.0);
  backward_batch(spec_, params_, trace, out_grads, result.param_grad);
  return result;
}

}  // namespace mmrl
