#include "mmrl/rnd.hpp"

#include <algorithm>
#include <cmath>

namespace mmrl {

void RunningMoments::observe(const double* x, std::size_t dim) {
  count += 1;
  for (std::size_t i = 0; i < dim; ++i) {
    const double delta = x[i] - mean[i];
    mean[i] += delta / count;
    m2[i] += delta * (x[i] - mean[i]);
  }
}

double RunningMoments::stddev(std::size_t i) const {
  if (count < 2) return 1.0;
  return std::sqrt(m2[i] / count);
}

void ScalarMoments::observe(double x) {
  count += 1;
  const double delta = x - mean;
  mean += delta / count;
  m2 += delta * (x - mean);
}

double ScalarMoments::stddev() const {
  if (count < 2) return 1.0;
  return std::sqrt(m2 / count);
}

RndPair::RndPair(const RndConfig& config, Rng& init_rng) : config_(config) {
  if (config_.features < 1) throw ConfigError("RND needs >= 1 output feature");
  if (config_.alpha < 0.0) throw ConfigError("RND alpha must be >= 0");
  spec_ = NetSpec::mlp(config_.state_dim, config_.hidden, config_.features,
                       Activation::kRelu);
  target_ = init_params(spec_, init_rng);
  predictor_ = init_params(spec_, init_rng);
  adam_ = AdamState::make(predictor_.size(), config_.lr);
  state_stats_.init(config_.state_dim);
}

Vec RndPair::normalize_state(const Vec& state) const {
  Vec out(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    const double sd = state_stats_.count < 2 ? 1.0 : state_stats_.stddev(i);
    const double mu = state_stats_.count < 2 ? 0.0 : state_stats_.mean[i];
    out[i] = std::clamp((state[i] - mu) / (sd + 1e-8), -5.0, 5.0);
  }
  return out;
}

double RndPair::raw_error(const Vec& normalized) const {
  const Vec t = forward(spec_, target_, normalized);
  const Vec p = forward(spec_, predictor_, normalized);
  double err = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t[i] - p[i];
    err += d * d;
  }
  return err;
}

double RndPair::novelty(const Vec& state) const {
  const double raw = raw_error(normalize_state(state));
  const double denom = novelty_stats_.stddev() + 1e-8;
  return std::clamp(raw / denom, 0.0, 1.0);
}

double RndPair::intrinsic_reward(const Vec& state, const Vec& next_state) const {
  const double next_nov = novelty(next_state);
  const double prev_nov = config_.printed_variant ? next_nov : novelty(state);
  return std::max(next_nov - config_.alpha * prev_nov, 0.0);
}

double RndPair::update_predictor(const Vec& states, int n) {
  if (n < 1) throw ConfigError("update_predictor: empty batch");
  const int sd = config_.state_dim;
  if (states.size() != static_cast<std::size_t>(n) * sd) {
    throw ConfigError("update_predictor: state length mismatch");
  }
  for (int r = 0; r < n; ++r) {
    state_stats_.observe(states.data() + static_cast<std::size_t>(r) * sd, sd);
  }
  Vec normalized(states.size());
  for (int r = 0; r < n; ++r) {
    const Vec row(states.begin() + static_cast<std::size_t>(r) * sd,
                  states.begin() + static_cast<std::size_t>(r + 1) * sd);
    const Vec norm = normalize_state(row);
    std::copy(norm.begin(), norm.end(),
              normalized.begin() + static_cast<std::size_t>(r) * sd);
  }
  Vec target_out, pred_out;
  forward_batch(spec_, target_, normalized, n, target_out);
  BatchTrace trace;
  forward_batch(spec_, predictor_, normalized, n, pred_out, &trace);

  const int f = config_.features;
  Vec out_grads(pred_out.size());
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    double row_err = 0.0;
    for (int i = 0; i < f; ++i) {
      const std::size_t k = static_cast<std::size_t>(r) * f + i;
      const double d = pred_out[k] - target_out[k];
      row_err += d * d;
      out_grads[k] = 2.0 * d / n;
    }
    loss += row_err;
    novelty_stats_.observe(row_err);
  }
  loss /= n;
  Vec grad(spec_.param_count(), 0.0);
  backward_batch(spec_, predictor_, trace, out_grads, grad);
  adam_step(predictor_, grad, adam_);
  return loss;
}

void RndPair::set_predictor_params(Vec params) {
  if (params.size() != spec_.param_count()) {
    throw ConfigError("predictor parameter vector has the wrong length");
  }
  predictor_ = std::move(params);
}

void RndPair::set_target_params(Vec params) {
  if (params.size() != spec_.param_count()) {
    throw ConfigError("target parameter vector has the wrong length");
  }
  target_ = std::move(params);
}

}  // namespace mmrl
