#include "mmrl/critic.hpp"

#include <algorithm>
#include <cmath>

namespace mmrl {

void CategoricalSupport::validate() const {
  if (n_atoms < 2) throw ConfigError("categorical support needs >= 2 atoms");
  if (!(v_max > v_min)) throw ConfigError("categorical support needs v_max > v_min");
}

Vec softmax(const Vec& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

Vec project_categorical(double reward, bool done, double gamma,
                        const Vec& next_dist, const CategoricalSupport& support) {
  support.validate();
  if (gamma < 0.0 || gamma >= 1.0) {
    throw ConfigError("project_categorical needs gamma in [0, 1)");
  }
  const int n = support.n_atoms;
  const double dz = support.delta();
  Vec out(n, 0.0);
  for (int j = 0; j < n; ++j) {
    const double mass = next_dist[j];
    double tz = reward + (done ? 0.0 : gamma * support.atom(j));
    tz = std::clamp(tz, support.v_min, support.v_max);
    const double b = (tz - support.v_min) / dz;
    const int lo = std::clamp(static_cast<int>(std::floor(b)), 0, n - 1);
    const int hi = std::clamp(static_cast<int>(std::ceil(b)), 0, n - 1);
    if (lo == hi) {
      out[lo] += mass;
    } else {
      out[lo] += mass * (hi - b);
      out[hi] += mass * (b - lo);
    }
  }
  double sum = 0.0;
  for (double v : out) sum += v;
  if (sum > 0.0) {
    for (double& v : out) v /= sum;
  }
  return out;
}

CriticPair CriticPair::init(int state_dim, int action_dim,
                            const std::vector<int>& hidden,
                            const CategoricalSupport& support, double lr,
                            Rng& rng) {
  CriticPair c;
  c.support = support;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  c.spec = NetSpec::mlp(state_dim + action_dim, hidden, support.n_atoms,
                        Activation::kRelu);
  for (int k = 0; k < 2; ++k) {
    c.online[k] = init_params(c.spec, rng);
    c.target[k] = c.online[k];
    c.adam[k] = AdamState::make(c.online[k].size(), lr);
  }
  return c;
}

CriticPair CriticPair::inherit(const CriticPair& source) {
  CriticPair c = source;
  for (int k = 0; k < 2; ++k) {
    c.adam[k] = AdamState::make(c.online[k].size(), source.adam[k].lr);
  }
  return c;
}

namespace {

Vec joint_input(const Vec& state, const Vec& action) {
  Vec in;
  in.reserve(state.size() + action.size());
  in.insert(in.end(), state.begin(), state.end());
  in.insert(in.end(), action.begin(), action.end());
  return in;
}

double expectation(const Vec& probs, const CategoricalSupport& support) {
  double e = 0.0;
  for (int i = 0; i < support.n_atoms; ++i) e += probs[i] * support.atom(i);
  return e;
}

}  // namespace

double q_value_single(const CriticPair& critic, int which, bool use_target,
                      const Vec& state, const Vec& action) {
  const Vec& params = use_target ? critic.target[which] : critic.online[which];
  const Vec logits = forward(critic.spec, params, joint_input(state, action));
  return expectation(softmax(logits), critic.support);
}

double q_value(const CriticPair& critic, const Vec& state, const Vec& action) {
  return std::min(q_value_single(critic, 0, false, state, action),
                  q_value_single(critic, 1, false, state, action));
}

Vec q_action_grad(const CriticPair& critic, const Vec& state, const Vec& action) {
  const Vec in = joint_input(state, action);
  // Evaluate both online expectations, differentiate through the argmin.
  double best = 0.0;
  int which = 0;
  std::array<Vec, 2> probs;
  for (int k = 0; k < 2; ++k) {
    const Vec logits = forward(critic.spec, critic.online[k], in);
    probs[k] = softmax(logits);
    const double e = expectation(probs[k], critic.support);
    if (k == 0 || e < best) {
      best = e;
      which = k;
    }
  }
  // dE/dlogit_i = p_i * (z_i - E) for a softmax-expectation head.
  Vec out_grad(critic.support.n_atoms);
  for (int i = 0; i < critic.support.n_atoms; ++i) {
    out_grad[i] = probs[which][i] * (critic.support.atom(i) - best);
  }
  const Gradients g = backward(critic.spec, critic.online[which], in, out_grad);
  Vec action_grad(g.input_grad.end() - critic.action_dim, g.input_grad.end());
  if (!all_finite(action_grad)) {
    throw NumericError("non-finite action gradient from critic");
  }
  return action_grad;
}

double update_critic(CriticPair& critic, const TransitionBatch& batch,
                     double gamma, RewardSource source, double grad_clip) {
  const int n = batch.n;
  if (n == 0) throw ConfigError("update_critic: empty batch");
  if (batch.a_next.size() != static_cast<std::size_t>(n) * critic.action_dim) {
    throw ConfigError("update_critic: batch lacks bootstrap actions");
  }
  if (source == RewardSource::kIntrinsic &&
      batch.r_int.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("update_critic: batch lacks intrinsic rewards");
  }
  const int atoms = critic.support.n_atoms;
  const int in_dim = critic.state_dim + critic.action_dim;

  // Projected target from the lower-expectation target network at (s', a').
  Vec next_in(static_cast<std::size_t>(n) * in_dim);
  for (int r = 0; r < n; ++r) {
    double* dst = next_in.data() + static_cast<std::size_t>(r) * in_dim;
    const double* s = batch.s_next.data() + static_cast<std::size_t>(r) * critic.state_dim;
    const double* a = batch.a_next.data() + static_cast<std::size_t>(r) * critic.action_dim;
    std::copy(s, s + critic.state_dim, dst);
    std::copy(a, a + critic.action_dim, dst + critic.state_dim);
  }
  std::array<Vec, 2> target_logits;
  for (int k = 0; k < 2; ++k) {
    forward_batch(critic.spec, critic.target[k], next_in, n, target_logits[k]);
  }
  Vec projected(static_cast<std::size_t>(n) * atoms);
  for (int r = 0; r < n; ++r) {
    std::array<Vec, 2> p;
    std::array<double, 2> e{};
    for (int k = 0; k < 2; ++k) {
      p[k] = softmax(Vec(target_logits[k].begin() + static_cast<std::size_t>(r) * atoms,
                         target_logits[k].begin() + static_cast<std::size_t>(r + 1) * atoms));
      e[k] = expectation(p[k], critic.support);
    }
    const int pick = e[0] <= e[1] ? 0 : 1;
    const double reward =
        source == RewardSource::kExtrinsic ? batch.r_ext[r] : batch.r_int[r];
    const Vec proj = project_categorical(reward, batch.done[r] != 0, gamma,
                                         p[pick], critic.support);
    std::copy(proj.begin(), proj.end(),
              projected.begin() + static_cast<std::size_t>(r) * atoms);
  }

  // Cross-entropy step on both online networks against the shared target.
  Vec online_in(static_cast<std::size_t>(n) * in_dim);
  for (int r = 0; r < n; ++r) {
    double* dst = online_in.data() + static_cast<std::size_t>(r) * in_dim;
    const double* s = batch.s.data() + static_cast<std::size_t>(r) * critic.state_dim;
    const double* a = batch.a.data() + static_cast<std::size_t>(r) * critic.action_dim;
    std::copy(s, s + critic.state_dim, dst);
    std::copy(a, a + critic.action_dim, dst + critic.state_dim);
  }
  double loss_sum = 0.0;
  for (int k = 0; k < 2; ++k) {
    BatchTrace trace;
    Vec logits;
    forward_batch(critic.spec, critic.online[k], online_in, n, logits, &trace);
    Vec out_grads(static_cast<std::size_t>(n) * atoms);
    for (int r = 0; r < n; ++r) {
      const Vec p = softmax(Vec(logits.begin() + static_cast<std::size_t>(r) * atoms,
                                logits.begin() + static_cast<std::size_t>(r + 1) * atoms));
      for (int i = 0; i < atoms; ++i) {
        const double target_p = projected[static_cast<std::size_t>(r) * atoms + i];
        if (target_p > 0.0) {
          loss_sum += -target_p * std::log(std::max(p[i], 1e-300));
        }
        out_grads[static_cast<std::size_t>(r) * atoms + i] = (p[i] - target_p) / n;
      }
    }
    Vec grad(critic.spec.param_count(), 0.0);
    backward_batch(critic.spec, critic.online[k], trace, out_grads, grad);
    clip_global_norm(grad, grad_clip);
    adam_step(critic.online[k], grad, critic.adam[k]);
  }
  return loss_sum / (2.0 * n);
}

void polyak_update(CriticPair& critic, double tau) {
  for (int k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < critic.target[k].size(); ++i) {
      critic.target[k][i] =
          (1.0 - tau) * critic.target[k][i] + tau * critic.online[k][i];
    }
  }
}

CriticPair& spawn_critic(ModeQBank& bank, int mode_id,
                         const CriticPair* init_from, int state_dim,
                         int action_dim, const std::vector<int>& hidden,
                         const CategoricalSupport& support, double lr, Rng& rng) {
  CriticPair critic = init_from != nullptr
                          ? CriticPair::inherit(*init_from)
                          : CriticPair::init(state_dim, action_dim, hidden,
                                             support, lr, rng);
  auto [it, inserted] = bank.modes.insert_or_assign(mode_id, std::move(critic));
  (void)inserted;
  return it->second;
}

}  // namespace mmrl
