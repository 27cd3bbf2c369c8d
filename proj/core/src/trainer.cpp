#include "mmrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace mmrl {

void TrainConfig::validate() const {
  if (num_envs < 1) throw ConfigError("num_envs must be >= 1");
  if (rollout_steps < 1) throw ConfigError("rollout_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (utd_ratio < 1) throw ConfigError("utd_ratio must be >= 1");
  if (action_lr <= 0 || actor_lr <= 0 || critic_lr <= 0 || rnd_lr <= 0) {
    throw ConfigError("learning rates must be > 0");
  }
  if (action_grad_steps < 1) throw ConfigError("action_grad_steps must be >= 1");
  if (gamma < 0 || gamma >= 1) throw ConfigError("gamma must be in [0, 1)");
  if (tau < 0 || tau > 1) throw ConfigError("tau must be in [0, 1]");
  if (explore_fraction < 0 || explore_fraction > 1) {
    throw ConfigError("explore_fraction must be in [0, 1]");
  }
  if (mask_prob < 0 || mask_prob > 1) throw ConfigError("mask_prob must be in [0, 1]");
  if (recluster_period < 1) throw ConfigError("recluster_period must be >= 1");
  if (buffer_capacity < num_envs + 1) {
    throw ConfigError("buffer capacity must exceed num_envs");
  }
}

std::string IterationMetrics::csv_header() {
  return "iteration,env_steps,episodes,successes,success_rate,modes,"
         "policy_loss,explore_critic_loss,intrinsic_mean,mode_critic_loss,"
         "mode_success,buffer_trajectories,buffer_transitions";
}

namespace {

std::string mode_tag(int mode_id) {
  return mode_id == kExplorationMode ? "e" : std::to_string(mode_id);
}

}  // namespace

std::string IterationMetrics::csv_row() const {
  std::ostringstream os;
  const double rate = episodes > 0 ? static_cast<double>(successes) / episodes : 0.0;
  os << iteration << ',' << env_steps << ',' << episodes << ',' << successes
     << ',' << format_double(rate) << ',' << mode_count << ','
     << format_double(policy_loss) << ',' << format_double(explore_critic_loss)
     << ',' << format_double(intrinsic_mean) << ',';
  if (mode_critic_loss.empty()) {
    os << '-';
  } else {
    bool first = true;
    for (const auto& [id, loss] : mode_critic_loss) {
      if (!first) os << ';';
      os << mode_tag(id) << ':' << format_double(loss);
      first = false;
    }
  }
  os << ',';
  if (mode_success.empty()) {
    os << '-';
  } else {
    bool first = true;
    for (const auto& [id, counts] : mode_success) {
      if (!first) os << ';';
      os << mode_tag(id) << ':' << counts.first << '/' << counts.second;
      first = false;
    }
  }
  os << ',' << buffer_trajectories << ',' << buffer_transitions;
  return os.str();
}

int ascend_targets(const std::function<Vec(const Vec& action, int row)>& grad_fn,
                   Vec& targets, int n, int action_dim, int k_steps, double eta) {
  int skipped = 0;
  std::vector<char> dead(n, 0);
  for (int step = 0; step < k_steps; ++step) {
    for (int r = 0; r < n; ++r) {
      if (dead[r]) continue;
      Vec action(targets.begin() + static_cast<std::size_t>(r) * action_dim,
                 targets.begin() + static_cast<std::size_t>(r + 1) * action_dim);
      Vec grad;
      try {
        grad = grad_fn(action, r);
      } catch (const NumericError&) {
        dead[r] = 1;
        ++skipped;
        continue;
      }
      if (!all_finite(grad)) {
        dead[r] = 1;
        ++skipped;
        continue;
      }
      for (int i = 0; i < action_dim; ++i) {
        targets[static_cast<std::size_t>(r) * action_dim + i] = std::clamp(
            action[i] + eta * grad[i], -1.0, 1.0);
      }
    }
  }
  return skipped;
}

namespace {

constexpr std::uint64_t kPolicyStream = 0;
constexpr std::uint64_t kExploreCriticStream = 1;
constexpr std::uint64_t kRndStream = 2;
constexpr std::uint64_t kUpdateStream = 3;
constexpr std::uint64_t kReclusterStream = 4;
constexpr std::uint64_t kEmbeddingStream = 5;
constexpr std::uint64_t kCriticSpawnStream = 6;
constexpr std::uint64_t kEnvStreamBase = 100;

PolicyConfig policy_config_from(const TrainConfig& cfg) {
  PolicyConfig pc;
  pc.action_dim = 2;
  pc.state_dim = kObsDim;
  pc.embedding_dim = cfg.embedding_dim;
  pc.mask_prob = cfg.mask_prob;
  pc.diffusion_steps = cfg.diffusion_steps;
  pc.hidden = cfg.policy_hidden;
  pc.activation = Activation::kTanh;
  return pc;
}

RndConfig rnd_config_from(const TrainConfig& cfg) {
  RndConfig rc;
  rc.state_dim = kObsDim;
  rc.features = cfg.rnd_features;
  rc.hidden = cfg.rnd_hidden;
  rc.lr = cfg.rnd_lr;
  rc.alpha = cfg.rnd_alpha;
  rc.printed_variant = cfg.rnd_printed_variant;
  return rc;
}

BufferConfig buffer_config_from(const TrainConfig& cfg) {
  BufferConfig bc;
  bc.capacity_trajectories = cfg.buffer_capacity;
  bc.state_dim = kObsDim;
  bc.action_dim = 2;
  return bc;
}

Rng make_stream(const TrainConfig& cfg, std::uint64_t id) {
  return Rng::stream(cfg.seed, id);
}

}  // namespace

Trainer::Trainer(const TrainConfig& config, MazeSpec maze)
    : config_(config),
      maze_(std::move(maze)),
      policy_([&] {
        Rng rng = make_stream(config, kPolicyStream);
        return DiffusionPolicy(policy_config_from(config), rng);
      }()),
      policy_adam_(AdamState::make(policy_.params().size(), config.actor_lr)),
      rnd_([&] {
        Rng rng = make_stream(config, kRndStream);
        return RndPair(rnd_config_from(config), rng);
      }()),
      buffer_(buffer_config_from(config)),
      update_rng_(make_stream(config, kUpdateStream)),
      recluster_rng_(make_stream(config, kReclusterStream)) {
  config_.validate();
  maze_.validate();
  {
    Rng rng = make_stream(config_, kExploreCriticStream);
    bank_.exploration = CriticPair::init(kObsDim, 2, config_.critic_hidden,
                                         support_, config_.critic_lr, rng);
  }
  {
    Rng rng = make_stream(config_, kEmbeddingStream);
    assignment_.exploration_embedding = make_embedding(config_.embedding_dim, rng);
  }
  envs_.resize(config_.num_envs);
  env_obs_.resize(config_.num_envs);
  env_traj_.resize(config_.num_envs);
  env_embedding_.resize(config_.num_envs);
  env_mode_.assign(config_.num_envs, kExplorationMode);
  env_rngs_.reserve(config_.num_envs);
  for (int i = 0; i < config_.num_envs; ++i) {
    env_rngs_.push_back(make_stream(config_, kEnvStreamBase + i));
    envs_[i] = reset_env(maze_, env_rngs_[i]);
    env_obs_[i] = observe(maze_, envs_[i]);
    env_traj_[i] = buffer_.begin_trajectory({envs_[i].px, envs_[i].py});
    draw_conditioning(i);
  }
}

Vec Trainer::embedding_of(int mode_id) const {
  if (config_.single_critic) return Vec(config_.embedding_dim, 0.0);
  if (mode_id == kExplorationMode) return assignment_.exploration_embedding;
  return assignment_.modes.at(mode_id).embedding;
}

void Trainer::draw_conditioning(int env_index) {
  if (config_.single_critic) {
    env_mode_[env_index] = kExplorationMode;
    env_embedding_[env_index] = Vec(config_.embedding_dim, 0.0);
    return;
  }
  Rng& rng = env_rngs_[env_index];
  const int explore_envs = static_cast<int>(
      std::lround(config_.explore_fraction * config_.num_envs));
  int mode = kExplorationMode;
  if (env_index >= explore_envs && !assignment_.modes.empty()) {
    std::vector<int> ids;
    ids.reserve(assignment_.modes.size());
    for (const auto& [id, info] : assignment_.modes) ids.push_back(id);
    mode = ids[rng.uniform_int(ids.size())];
  }
  env_mode_[env_index] = mode;
  env_embedding_[env_index] =
      mask_embedding(embedding_of(mode), config_.mask_prob, rng);
}

void Trainer::handle_evictions(const std::vector<long>& evicted) {
  for (long id : evicted) {
    cache_.purge(id);
    for (auto& [mode_id, info] : assignment_.modes) {
      auto it = std::find(info.members.begin(), info.members.end(), id);
      if (it != info.members.end()) info.members.erase(it);
    }
  }
}

std::vector<long> Trainer::collect_rollouts(int steps_per_env) {
  std::vector<long> finalized;
  for (int step = 0; step < steps_per_env; ++step) {
    for (int i = 0; i < config_.num_envs; ++i) {
      Rng& rng = env_rngs_[i];
      const Vec sampled = policy_.sample(env_obs_[i], env_embedding_[i], rng);
      Vec executed(2);
      for (int k = 0; k < 2; ++k) {
        executed[k] = std::clamp(
            sampled[k] + config_.action_noise * rng.normal(), -1.0, 1.0);
      }
      const Vec prev_obs = env_obs_[i];
      const StepResult res = step_env(maze_, envs_[i], executed[0], executed[1]);
      handle_evictions(buffer_.append(env_traj_[i], prev_obs, executed,
                                      res.reward, res.obs, res.done,
                                      {envs_[i].px, envs_[i].py}));
      fresh_states_.insert(fresh_states_.end(), res.obs.begin(), res.obs.end());
      env_obs_[i] = res.obs;
      ++env_steps_;
      if (res.done) {
        const TrajectoryRecord& rec = buffer_.finalize(env_traj_[i]);
        finalized.push_back(env_traj_[i]);
        archive_.push_back(
            {rec.id, rec.goal_reached, env_mode_[i], rec.track});
        pending_.episodes += 1;
        auto& per_mode = pending_.mode_success[env_mode_[i]];
        per_mode.second += 1;
        if (rec.goal_reached) {
          pending_.successes += 1;
          per_mode.first += 1;
        }
        envs_[i] = reset_env(maze_, rng);
        env_obs_[i] = observe(maze_, envs_[i]);
        env_traj_[i] = buffer_.begin_trajectory({envs_[i].px, envs_[i].py});
        draw_conditioning(i);
      }
    }
  }
  return finalized;
}

std::vector<int> Trainer::active_mode_ids() const {
  std::vector<int> ids;
  for (const auto& [id, info] : assignment_.modes) {
    if (buffer_.mode_transition_count(id) > 0) ids.push_back(id);
  }
  return ids;
}

TransitionBatch Trainer::sample_with_bootstrap(int mode_id, int n) {
  TransitionBatch batch = buffer_.sample_mode_batch(mode_id, n, update_rng_);
  const Vec embedding = embedding_of(mode_id);
  Vec embeddings(static_cast<std::size_t>(n) * config_.embedding_dim);
  for (int r = 0; r < n; ++r) {
    std::copy(embedding.begin(), embedding.end(),
              embeddings.begin() + static_cast<std::size_t>(r) * config_.embedding_dim);
  }
  batch.a_next = policy_.sample_batch(batch.s_next, embeddings, n, update_rng_);
  return batch;
}

int Trainer::improve_targets(int mode_id, TransitionBatch& batch) {
  CriticPair& critic = (mode_id == kExplorationMode || config_.single_critic)
                           ? bank_.exploration
                           : bank_.modes.at(mode_id);
  buffer_.mark_sampled_for_target_update(batch.refs);
  auto grad_fn = [&](const Vec& action, int row) {
    const Vec state(batch.s.begin() + static_cast<std::size_t>(row) * batch.state_dim,
                    batch.s.begin() + static_cast<std::size_t>(row + 1) * batch.state_dim);
    return q_action_grad(critic, state, action);
  };
  const int skipped =
      ascend_targets(grad_fn, batch.target, batch.n, batch.action_dim,
                     config_.action_grad_steps, config_.action_lr);
  buffer_.write_back_targets(batch.refs, batch.target);
  return skipped;
}

PolicyBatch Trainer::build_multimodal_batch(int batch_size) {
  if (buffer_.transition_count() == 0) {
    throw ConfigError("build_multimodal_batch: no data collected yet");
  }
  const std::vector<int> ids = config_.single_critic ? std::vector<int>{}
                                                     : active_mode_ids();
  const int parts = static_cast<int>(ids.size()) + 1;
  const int sub = batch_size / parts;
  const int remainder = batch_size - sub * static_cast<int>(ids.size());

  PolicyBatch out;
  out.n = batch_size;
  auto append = [&](int mode_id, int count) {
    if (count == 0) return;
    TransitionBatch b = buffer_.sample_mode_batch(mode_id, count, update_rng_);
    out.states.insert(out.states.end(), b.s.begin(), b.s.end());
    out.targets.insert(out.targets.end(), b.target.begin(), b.target.end());
    const Vec embedding = embedding_of(mode_id);
    for (int r = 0; r < count; ++r) {
      const Vec masked = mask_embedding(embedding, config_.mask_prob, update_rng_);
      out.embeddings.insert(out.embeddings.end(), masked.begin(), masked.end());
    }
  };
  for (int id : ids) append(id, sub);
  append(kExplorationMode, remainder);
  return out;
}

void Trainer::do_recluster() {
  ReclusterConfig rc;
  rc.threshold = config_.cluster_threshold;
  rc.subsample_stride = config_.cluster_subsample;
  rc.assign_samples = config_.assign_samples;
  rc.embedding_dim = config_.embedding_dim;
  InheritOutcome out = recluster(buffer_, assignment_, rc, cache_, recluster_rng_);

  std::map<int, CriticPair> new_critics;
  Rng spawn_rng = Rng::stream(config_.seed, kCriticSpawnStream + 1000 + iteration_);
  for (const auto& [mode_id, info] : out.assignment.modes) {
    const auto src = out.critic_source.find(mode_id);
    if (src != out.critic_source.end()) {
      const auto old_it = bank_.modes.find(src->second);
      if (old_it != bank_.modes.end()) {
        if (src->second == mode_id) {
          // Same identity: keep parameters and optimizer state.
          new_critics.emplace(mode_id, std::move(old_it->second));
        } else {
          new_critics.emplace(mode_id, CriticPair::inherit(old_it->second));
        }
        continue;
      }
    }
    new_critics.emplace(mode_id,
                        CriticPair::init(kObsDim, 2, config_.critic_hidden,
                                         support_, config_.critic_lr, spawn_rng));
  }
  bank_.modes = std::move(new_critics);
  assignment_ = std::move(out.assignment);
}

IterationMetrics Trainer::train_iteration() {
  pending_ = IterationMetrics{};
  fresh_states_.clear();
  collect_rollouts(config_.rollout_steps);

  // Refresh the novelty estimator on this iteration's collected states,
  // chunked into rnd_batch minibatches in collection order.
  {
    const int total = static_cast<int>(fresh_states_.size()) / kObsDim;
    for (int offset = 0; offset < total; offset += config_.rnd_batch) {
      const int count = std::min(config_.rnd_batch, total - offset);
      const Vec chunk(
          fresh_states_.begin() + static_cast<std::size_t>(offset) * kObsDim,
          fresh_states_.begin() +
              static_cast<std::size_t>(offset + count) * kObsDim);
      rnd_.update_predictor(chunk, count);
    }
  }

  if (buffer_.transition_count() > 0) {
    double intrinsic_sum = 0.0;
    long intrinsic_count = 0;
    for (int round = 0; round < config_.utd_ratio; ++round) {
      if (config_.single_critic) {
        TransitionBatch batch = sample_with_bootstrap(kExplorationMode,
                                                      config_.batch_size);
        batch.r_int.resize(batch.n);
        for (int r = 0; r < batch.n; ++r) {
          const Vec s(batch.s.begin() + static_cast<std::size_t>(r) * batch.state_dim,
                      batch.s.begin() + static_cast<std::size_t>(r + 1) * batch.state_dim);
          const Vec sn(batch.s_next.begin() + static_cast<std::size_t>(r) * batch.state_dim,
                       batch.s_next.begin() + static_cast<std::size_t>(r + 1) * batch.state_dim);
          batch.r_int[r] = rnd_.intrinsic_reward(s, sn);
          intrinsic_sum += batch.r_int[r];
          ++intrinsic_count;
        }
        // Intrinsic bonus folded into the extrinsic channel.
        TransitionBatch combined = batch;
        for (int r = 0; r < batch.n; ++r) combined.r_ext[r] += combined.r_int[r];
        pending_.explore_critic_loss = update_critic(
            bank_.exploration, combined, config_.gamma, RewardSource::kExtrinsic,
            config_.grad_clip);
        improve_targets(kExplorationMode, batch);
      } else {
        for (int id : active_mode_ids()) {
          TransitionBatch batch = sample_with_bootstrap(id, config_.batch_size);
          pending_.mode_critic_loss[id] =
              update_critic(bank_.modes.at(id), batch, config_.gamma,
                            RewardSource::kExtrinsic, config_.grad_clip);
          improve_targets(id, batch);
        }
        TransitionBatch ebatch = sample_with_bootstrap(kExplorationMode,
                                                       config_.batch_size);
        ebatch.r_int.resize(ebatch.n);
        for (int r = 0; r < ebatch.n; ++r) {
          const Vec s(ebatch.s.begin() + static_cast<std::size_t>(r) * ebatch.state_dim,
                      ebatch.s.begin() + static_cast<std::size_t>(r + 1) * ebatch.state_dim);
          const Vec sn(ebatch.s_next.begin() + static_cast<std::size_t>(r) * ebatch.state_dim,
                       ebatch.s_next.begin() + static_cast<std::size_t>(r + 1) * ebatch.state_dim);
          ebatch.r_int[r] = rnd_.intrinsic_reward(s, sn);
          intrinsic_sum += ebatch.r_int[r];
          ++intrinsic_count;
        }
        pending_.explore_critic_loss =
            update_critic(bank_.exploration, ebatch, config_.gamma,
                          RewardSource::kIntrinsic, config_.grad_clip);
        improve_targets(kExplorationMode, ebatch);
      }

      PolicyBatch pbatch = build_multimodal_batch(config_.batch_size);
      auto loss = policy_.bc_loss(pbatch, update_rng_);
      clip_global_norm(loss.param_grad, config_.grad_clip);
      adam_step(policy_.mutable_params(), loss.param_grad, policy_adam_);
      pending_.policy_loss = loss.loss;

      for (auto& [id, critic] : bank_.modes) polyak_update(critic, config_.tau);
      polyak_update(bank_.exploration, config_.tau);
    }
    pending_.intrinsic_mean =
        intrinsic_count > 0 ? intrinsic_sum / intrinsic_count : 0.0;
  }

  iteration_ += 1;
  if (!config_.single_critic && iteration_ % config_.recluster_period == 0) {
    do_recluster();
  }

  pending_.iteration = iteration_;
  pending_.env_steps = env_steps_;
  pending_.mode_count = static_cast<int>(assignment_.modes.size());
  pending_.buffer_trajectories = buffer_.trajectory_count();
  pending_.buffer_transitions = buffer_.transition_count();
  return pending_;
}

std::map<int, double> Trainer::estimate_mode_returns() const {
  return estimate_mode_return(assignment_, buffer_, config_.gamma);
}

void Trainer::recluster_now() {
  if (config_.single_critic) return;
  do_recluster();
}

void Trainer::export_cluster_table(std::ostream& os) const {
  os << "trajectory_id\tmode_id\tgoal_reached\n";
  for (long id : buffer_.live_ids()) {
    const TrajectoryRecord& rec = buffer_.trajectory(id);
    if (!rec.finalized) continue;
    os << id << '\t'
       << (rec.mode_id.has_value() ? std::to_string(*rec.mode_id) : "-") << '\t'
       << (rec.goal_reached ? 1 : 0) << '\n';
  }
}

std::map<int, double> estimate_mode_return(const ClusterAssignment& assignment,
                                           const ReplayBuffer& buffer,
                                           double gamma) {
  std::map<int, double> out;
  for (const auto& [mode_id, info] : assignment.modes) {
    double sum = 0.0;
    int count = 0;
    for (long id : info.members) {
      if (!buffer.has_trajectory(id)) continue;
      const TrajectoryRecord& rec = buffer.trajectory(id);
      if (!rec.goal_reached) continue;
      double ret = 0.0;
      double discount = 1.0;
      for (const Transition& t : rec.transitions) {
        ret += discount * t.reward;
        discount *= gamma;
      }
      sum += ret;
      ++count;
    }
    out[mode_id] = count > 0 ? sum / count
                             : -std::numeric_limits<double>::infinity();
  }
  return out;
}

ReplanOutcome run_replan_episode(const DiffusionPolicy& policy,
                                 const ClusterAssignment& assignment,
                                 const std::map<int, double>& mode_returns,
                                 const MazeSpec& env, Rng& rng, int stuck_window,
                                 double stuck_tolerance) {
  if (assignment.modes.empty()) {
    throw ConfigError("run_replan_episode needs at least one learned mode");
  }
  if (stuck_tolerance < 0.0) stuck_tolerance = env.action_scale;

  // Highest estimated return first; ties toward the lower mode id.
  std::vector<int> order;
  for (const auto& [id, info] : assignment.modes) order.push_back(id);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double ra = mode_returns.count(a)
                          ? mode_returns.at(a)
                          : -std::numeric_limits<double>::infinity();
    const double rb = mode_returns.count(b)
                          ? mode_returns.at(b)
                          : -std::numeric_limits<double>::infinity();
    if (ra != rb) return ra > rb;
    return a < b;
  });

  ReplanOutcome outcome;
  std::size_t current = 0;
  std::vector<char> tried(order.size(), 0);
  tried[0] = 1;
  outcome.mode_sequence.push_back(order[0]);

  EnvState state = reset_env(env, rng);
  Vec obs = observe(env, state);
  Track window;
  window.push_back({state.px, state.py});
  while (!state.done) {
    const Vec action =
        policy.sample(obs, assignment.modes.at(order[current]).embedding, rng);
    const StepResult res = step_env(env, state, action[0], action[1]);
    obs = res.obs;
    outcome.steps += 1;
    window.push_back({state.px, state.py});
    if (res.done) {
      outcome.success = res.goal_reached;
      break;
    }
    if (static_cast<int>(window.size()) > stuck_window) {
      const Point& past = window[window.size() - 1 - stuck_window];
      const double dx = state.px - past[0];
      const double dy = state.py - past[1];
      if (std::sqrt(dx * dx + dy * dy) < stuck_tolerance) {
        current = (current + 1) % order.size();
        outcome.switches += 1;
        tried[current] = 1;
        outcome.mode_sequence.push_back(order[current]);
        window.clear();
        window.push_back({state.px, state.py});
      }
    }
  }
  for (char t : tried) outcome.modes_tried += t;
  return outcome;
}

}  // namespace mmrl
