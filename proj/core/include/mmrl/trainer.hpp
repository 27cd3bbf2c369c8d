#pragma once

#include <functional>
#include <map>
#include <string>

#include "mmrl/clustering.hpp"
#include "mmrl/critic.hpp"
#include "mmrl/diffusion.hpp"
#include "mmrl/env.hpp"
#include "mmrl/replay.hpp"
#include "mmrl/rnd.hpp"

namespace mmrl {

struct TrainConfig {
  std::string env_name = "maze-v1";
  int num_envs = 64;
  int rollout_steps = 150;  // env steps per environment per iteration

  int batch_size = 512;
  int utd_ratio = 8;
  double action_lr = 3e-2;      // target-action ascent rate
  int action_grad_steps = 1;    // ascent steps per update round
  double actor_lr = 3e-4;
  double critic_lr = 5e-4;
  double gamma = 0.99;
  double tau = 0.05;
  double grad_clip = 1.0;

  double action_noise = 0.1;       // exploration noise on executed actions
  double explore_fraction = 0.25;  // share of envs on the exploration embedding

  int recluster_period = 100;      // iterations between re-clustering passes
  double cluster_threshold = 0.0;  // 0 = auto (0.7 x max merge distance)
  int cluster_subsample = 4;
  int assign_samples = 5;

  int embedding_dim = 5;
  double mask_prob = 0.5;
  int diffusion_steps = 5;
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};

  int rnd_features = 16;
  std::vector<int> rnd_hidden = {64, 64};
  double rnd_lr = 1e-3;
  double rnd_alpha = 0.5;
  bool rnd_printed_variant = false;
  int rnd_batch = 512;

  int buffer_capacity = 2000;

  long iterations = 100;
  std::uint64_t seed = 1;
  // Single-critic ablation: no clustering or mode embeddings, one critic
  // trained on extrinsic reward plus the intrinsic bonus.
  bool single_critic = false;

  void validate() const;
};

struct IterationMetrics {
  long iteration = 0;
  long env_steps = 0;
  int episodes = 0;
  int successes = 0;
  int mode_count = 0;
  double policy_loss = 0.0;
  double explore_critic_loss = 0.0;
  double intrinsic_mean = 0.0;
  std::map<int, double> mode_critic_loss;
  std::map<int, std::pair<int, int>> mode_success;  // mode -> (successes, episodes)
  std::size_t buffer_trajectories = 0;
  std::size_t buffer_transitions = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

struct ArchivedTrack {
  long id = -1;
  bool goal_reached = false;
  int conditioning_mode = kExplorationMode;
  Track track;
};

// K steps of clamped gradient ascent on packed targets; rows whose gradient
// comes back non-finite are skipped. Returns the skipped-row count.
int ascend_targets(const std::function<Vec(const Vec& action, int row)>& grad_fn,
                   Vec& targets, int n, int action_dim, int k_steps, double eta);

// End-to-end training driver: rollout collection with exploration-mode
// mixing, per-mode distributional critic updates, target-action ascent with
// write-back, multimodal policy batches, and scheduled re-clustering.
class Trainer {
 public:
  Trainer(const TrainConfig& config, MazeSpec maze);

  // Runs one collection + update iteration and returns its metrics.
  IterationMetrics train_iteration();

  // Collection phase only; returns ids of trajectories finalized during it.
  std::vector<long> collect_rollouts(int steps_per_env);

  // Target-action ascent on the batch through the mode's critic; write-back
  // to the buffer. Returns the number of skipped elements.
  int improve_targets(int mode_id, TransitionBatch& batch);

  // Equal per-mode sub-batches plus the exploration remainder, embeddings
  // attached and then masked with probability mask_prob.
  PolicyBatch build_multimodal_batch(int batch_size);

  std::map<int, double> estimate_mode_returns() const;

  // Runs the re-clustering pass immediately, regardless of the schedule.
  void recluster_now();

  void export_cluster_table(std::ostream& os) const;

  // Conditioning mode currently driving each environment.
  const std::vector<int>& conditioning_modes() const { return env_mode_; }

  const TrainConfig& config() const { return config_; }
  const MazeSpec& maze() const { return maze_; }
  const DiffusionPolicy& policy() const { return policy_; }
  const ModeQBank& bank() const { return bank_; }
  const ClusterAssignment& assignment() const { return assignment_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const RndPair& rnd() const { return rnd_; }
  const DistanceCache& distance_cache() const { return cache_; }
  long iteration() const { return iteration_; }
  long env_steps() const { return env_steps_; }
  const std::vector<ArchivedTrack>& archive() const { return archive_; }

  ModeQBank& mutable_bank() { return bank_; }
  DiffusionPolicy& mutable_policy() { return policy_; }

 private:
  void draw_conditioning(int env_index);
  Vec embedding_of(int mode_id) const;
  void do_recluster();
  void handle_evictions(const std::vector<long>& evicted);
  TransitionBatch sample_with_bootstrap(int mode_id, int n);
  std::vector<int> active_mode_ids() const;

  TrainConfig config_;
  MazeSpec maze_;
  CategoricalSupport support_;
  DiffusionPolicy policy_;
  AdamState policy_adam_;
  ModeQBank bank_;
  RndPair rnd_;
  ReplayBuffer buffer_;
  ClusterAssignment assignment_;
  DistanceCache cache_;

  std::vector<EnvState> envs_;
  std::vector<Vec> env_obs_;
  std::vector<long> env_traj_;
  std::vector<Vec> env_embedding_;
  std::vector<int> env_mode_;
  std::vector<Rng> env_rngs_;
  Rng update_rng_;
  Rng recluster_rng_;

  long iteration_ = 0;
  long env_steps_ = 0;
  IterationMetrics pending_;
  Vec fresh_states_;
  std::vector<ArchivedTrack> archive_;
};

// Mode estimate for deployment: mean discounted return over each mode's
// goal-reached member trajectories; empty modes map to -infinity.
std::map<int, double> estimate_mode_return(const ClusterAssignment& assignment,
                                           const ReplayBuffer& buffer,
                                           double gamma);

struct ReplanOutcome {
  bool success = false;
  int steps = 0;
  int switches = 0;
  int modes_tried = 0;
  std::vector<int> mode_sequence;
};

// Executes one episode with explicit mode control: start from the
// highest-return mode and rotate to the next one whenever the agent's
// displacement over the trailing window falls below the motion tolerance.
// The exploration mode never participates.
ReplanOutcome run_replan_episode(const DiffusionPolicy& policy,
                                 const ClusterAssignment& assignment,
                                 const std::map<int, double>& mode_returns,
                                 const MazeSpec& env, Rng& rng,
                                 int stuck_window = 10,
                                 double stuck_tolerance = -1.0);

}  // namespace mmrl
