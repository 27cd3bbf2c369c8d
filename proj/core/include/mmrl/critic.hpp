#pragma once

#include <array>
#include <map>

#include "mmrl/net.hpp"
#include "mmrl/replay.hpp"

namespace mmrl {

// Fixed categorical support for the distributional critics.
struct CategoricalSupport {
  double v_min = 0.0;
  double v_max = 5.0;
  int n_atoms = 51;

  double delta() const { return (v_max - v_min) / (n_atoms - 1); }
  double atom(int i) const { return v_min + delta() * i; }
  void validate() const;
};

Vec softmax(const Vec& logits);

// Distributional Bellman projection of r + gamma * (1 - done) * z back onto
// the fixed support, mass split linearly between neighboring atoms.
Vec project_categorical(double reward, bool done, double gamma,
                        const Vec& next_dist, const CategoricalSupport& support);

// Double critic over (state, action) -> atom logits, with Polyak-averaged
// target copies.
struct CriticPair {
  NetSpec spec;  // input state_dim + action_dim, output n_atoms
  CategoricalSupport support;
  int state_dim = 0;
  int action_dim = 0;
  std::array<Vec, 2> online;
  std::array<Vec, 2> target;
  std::array<AdamState, 2> adam;

  static CriticPair init(int state_dim, int action_dim,
                         const std::vector<int>& hidden,
                         const CategoricalSupport& support, double lr, Rng& rng);
  // Deep parameter copy; optimizer moments reset.
  static CriticPair inherit(const CriticPair& source);
};

// Double-Q read: min over the two online expectations.
double q_value(const CriticPair& critic, const Vec& state, const Vec& action);

// Expectation of one network's distribution at (s, a).
double q_value_single(const CriticPair& critic, int which, bool use_target,
                      const Vec& state, const Vec& action);

// Gradient of the double-Q value with respect to the action.
Vec q_action_grad(const CriticPair& critic, const Vec& state, const Vec& action);

enum class RewardSource { kExtrinsic, kIntrinsic };

// One distributional TD update on the batch: projected target from the target
// networks at (s', a_next), cross-entropy on both online networks, gradients
// clipped at grad_clip, one Adam step each. Returns the mean cross-entropy.
double update_critic(CriticPair& critic, const TransitionBatch& batch,
                     double gamma, RewardSource source, double grad_clip);

void polyak_update(CriticPair& critic, double tau);

// One critic pair per discovered mode plus the exploration critic.
struct ModeQBank {
  std::map<int, CriticPair> modes;
  CriticPair exploration;
};

// Registers a critic for mode_id: a deep copy of init_from when given,
// otherwise a fresh initialization.
CriticPair& spawn_critic(ModeQBank& bank, int mode_id,
                         const CriticPair* init_from, int state_dim,
                         int action_dim, const std::vector<int>& hidden,
                         const CategoricalSupport& support, double lr, Rng& rng);

}  // namespace mmrl
