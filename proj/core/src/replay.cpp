#include "mmrl/replay.hpp"

#include <algorithm>
#include <cmath>

namespace mmrl {

ReplayBuffer::ReplayBuffer(const BufferConfig& config) : config_(config) {
  if (config_.capacity_trajectories < 1) {
    throw ConfigError("replay buffer capacity must be >= 1");
  }
}

std::uint64_t ReplayBuffer::transition_hash(const Transition& t) {
  std::uint64_t h = 1469598103934665603ull;
  h = hash_doubles(h, t.state.data(), t.state.size());
  h = hash_doubles(h, t.action.data(), t.action.size());
  h = hash_doubles(h, &t.reward, 1);
  h = hash_doubles(h, t.next_state.data(), t.next_state.size());
  const double done_flag = t.done ? 1.0 : 0.0;
  h = hash_doubles(h, &done_flag, 1);
  return h;
}

long ReplayBuffer::begin_trajectory(const Point& start_position) {
  const long id = next_id_++;
  Stored st;
  st.record.id = id;
  st.record.track.push_back(start_position);
  trajectories_.emplace(id, std::move(st));
  order_.push_back(id);
  return id;
}

const ReplayBuffer::Stored& ReplayBuffer::stored(long traj_id) const {
  const auto it = trajectories_.find(traj_id);
  if (it == trajectories_.end()) {
    throw ConfigError("unknown trajectory id " + std::to_string(traj_id));
  }
  return it->second;
}

std::vector<long> ReplayBuffer::append(long traj_id, Vec state, Vec action,
                                       double reward, Vec next_state, bool done,
                                       const Point& next_position) {
  auto it = trajectories_.find(traj_id);
  if (it == trajectories_.end()) {
    throw ConfigError("append to unknown trajectory id " + std::to_string(traj_id));
  }
  Stored& st = it->second;
  if (st.record.finalized) {
    throw ConfigError("append to finalized trajectory " + std::to_string(traj_id));
  }
  Transition t;
  t.traj_id = traj_id;
  t.step = static_cast<int>(st.record.transitions.size());
  t.state = std::move(state);
  t.action = std::move(action);
  t.target_action = t.action;
  clamp_inplace(t.target_action, -1.0, 1.0);
  t.next_state = std::move(next_state);
  t.reward = reward;
  t.done = done;
  if (reward > 0.0) st.record.goal_reached = true;
  st.content_hash.push_back(transition_hash(t));
  st.sampled.push_back(0);
  st.modified.push_back(0);
  st.record.transitions.push_back(std::move(t));
  st.record.track.push_back(next_position);
  ++total_transitions_;
  ++audit_.hashed;

  std::vector<long> evicted;
  while (trajectories_.size() > static_cast<std::size_t>(config_.capacity_trajectories)) {
    // Oldest finalized trajectory goes first; open ones are never evicted.
    long victim = -1;
    for (long id : order_) {
      const auto vit = trajectories_.find(id);
      if (vit != trajectories_.end() && vit->second.record.finalized) {
        victim = id;
        break;
      }
    }
    if (victim < 0) break;  // nothing finalized yet
    const auto vit = trajectories_.find(victim);
    const Stored& vs = vit->second;
    for (std::size_t k = 0; k < vs.record.transitions.size(); ++k) {
      ++audit_.verified;
      if (transition_hash(vs.record.transitions[k]) != vs.content_hash[k]) {
        ++audit_.mismatched;
      }
    }
    total_transitions_ -= vs.record.transitions.size();
    trajectories_.erase(vit);
    order_.erase(std::find(order_.begin(), order_.end(), victim));
    evicted.push_back(victim);
  }
  return evicted;
}

const TrajectoryRecord& ReplayBuffer::finalize(long traj_id) {
  auto it = trajectories_.find(traj_id);
  if (it == trajectories_.end()) {
    throw ConfigError("finalize of unknown trajectory id " + std::to_string(traj_id));
  }
  it->second.record.finalized = true;
  return it->second.record;
}

int ReplayBuffer::write_back_targets(const std::vector<TransitionRef>& refs,
                                     const Vec& new_targets) {
  const int dim = config_.action_dim;
  if (new_targets.size() != refs.size() * static_cast<std::size_t>(dim)) {
    throw ConfigError("write_back_targets: target length mismatch");
  }
  int stale = 0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    auto it = trajectories_.find(refs[r].traj_id);
    if (it == trajectories_.end() ||
        refs[r].index < 0 ||
        refs[r].index >= static_cast<int>(it->second.record.transitions.size())) {
      ++stale;
      continue;
    }
    Transition& t = it->second.record.transitions[refs[r].index];
    bool changed = false;
    for (int i = 0; i < dim; ++i) {
      const double v =
          std::clamp(new_targets[r * static_cast<std::size_t>(dim) + i], -1.0, 1.0);
      if (v != t.target_action[i]) changed = true;
      t.target_action[i] = v;
    }
    if (changed && !it->second.modified[refs[r].index]) {
      it->second.modified[refs[r].index] = 1;
      ++audit_.targets_modified;
    }
  }
  return stale;
}

TransitionBatch ReplayBuffer::sample_mode_batch(int mode_id, int n,
                                                Rng& rng) const {
  // Candidate trajectories in insertion order for deterministic draws.
  std::vector<const TrajectoryRecord*> pool;
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (long id : order_) {
    const auto it = trajectories_.find(id);
    if (it == trajectories_.end()) continue;
    const TrajectoryRecord& rec = it->second.record;
    if (rec.transitions.empty()) continue;
    const bool member = mode_id == kExplorationMode
                            ? true
                            : (rec.finalized && rec.mode_id.has_value() &&
                               *rec.mode_id == mode_id);
    if (!member) continue;
    pool.push_back(&rec);
    total += rec.transitions.size();
    cumulative.push_back(total);
  }
  if (total == 0) {
    throw ConfigError("sample_mode_batch: mode " + std::to_string(mode_id) +
                      " has no transitions");
  }

  TransitionBatch batch;
  batch.n = n;
  batch.state_dim = config_.state_dim;
  batch.action_dim = config_.action_dim;
  batch.s.reserve(static_cast<std::size_t>(n) * config_.state_dim);
  for (int k = 0; k < n; ++k) {
    const std::size_t flat = rng.uniform_int(total);
    const std::size_t which =
        std::upper_bound(cumulative.begin(), cumulative.end(), flat) -
        cumulative.begin();
    const TrajectoryRecord& rec = *pool[which];
    const std::size_t base = which == 0 ? 0 : cumulative[which - 1];
    const Transition& t = rec.transitions[flat - base];
    batch.s.insert(batch.s.end(), t.state.begin(), t.state.end());
    batch.a.insert(batch.a.end(), t.action.begin(), t.action.end());
    batch.target.insert(batch.target.end(), t.target_action.begin(),
                        t.target_action.end());
    batch.s_next.insert(batch.s_next.end(), t.next_state.begin(),
                        t.next_state.end());
    batch.r_ext.push_back(t.reward);
    batch.done.push_back(t.done ? 1 : 0);
    batch.refs.push_back({rec.id, t.step});
    batch.traj_ids.push_back(rec.id);
  }
  return batch;
}

void ReplayBuffer::set_mode(long traj_id, std::optional<int> mode_id) {
  auto it = trajectories_.find(traj_id);
  if (it == trajectories_.end()) {
    throw ConfigError("set_mode on unknown trajectory id " + std::to_string(traj_id));
  }
  it->second.record.mode_id = mode_id;
}

bool ReplayBuffer::has_trajectory(long traj_id) const {
  return trajectories_.count(traj_id) != 0;
}

const TrajectoryRecord& ReplayBuffer::trajectory(long traj_id) const {
  return stored(traj_id).record;
}

const Transition& ReplayBuffer::at(const TransitionRef& ref) const {
  const Stored& st = stored(ref.traj_id);
  if (ref.index < 0 || ref.index >= static_cast<int>(st.record.transitions.size())) {
    throw ConfigError("transition index out of range");
  }
  return st.record.transitions[ref.index];
}

std::vector<long> ReplayBuffer::live_ids() const {
  return {order_.begin(), order_.end()};
}

std::vector<long> ReplayBuffer::finalized_goal_reached_ids() const {
  std::vector<long> out;
  for (long id : order_) {
    const auto& rec = trajectories_.at(id).record;
    if (rec.finalized && rec.goal_reached) out.push_back(id);
  }
  return out;
}

std::vector<long> ReplayBuffer::finalized_unsuccessful_ids() const {
  std::vector<long> out;
  for (long id : order_) {
    const auto& rec = trajectories_.at(id).record;
    if (rec.finalized && !rec.goal_reached) out.push_back(id);
  }
  return out;
}

std::size_t ReplayBuffer::mode_transition_count(int mode_id) const {
  std::size_t total = 0;
  for (const auto& [id, st] : trajectories_) {
    const TrajectoryRecord& rec = st.record;
    if (mode_id == kExplorationMode) {
      total += rec.transitions.size();
    } else if (rec.finalized && rec.mode_id.has_value() && *rec.mode_id == mode_id) {
      total += rec.transitions.size();
    }
  }
  return total;
}

long ReplayBuffer::verify_live_hashes() const {
  long mismatched = 0;
  for (const auto& [id, st] : trajectories_) {
    for (std::size_t k = 0; k < st.record.transitions.size(); ++k) {
      ++audit_.verified;
      if (transition_hash(st.record.transitions[k]) != st.content_hash[k]) {
        ++mismatched;
        ++audit_.mismatched;
      }
    }
  }
  return mismatched;
}

void ReplayBuffer::mark_sampled_for_target_update(
    const std::vector<TransitionRef>& refs) {
  for (const TransitionRef& ref : refs) {
    auto it = trajectories_.find(ref.traj_id);
    if (it == trajectories_.end()) continue;
    if (ref.index < 0 ||
        ref.index >= static_cast<int>(it->second.sampled.size())) {
      continue;
    }
    if (!it->second.sampled[ref.index]) {
      it->second.sampled[ref.index] = 1;
      ++audit_.sampled_for_target_update;
    }
  }
}

void ReplayBuffer::dump(std::ostream& os) const {
  os << "# traj_id step state... action... target_action... reward "
        "next_state... done goal_reached mode\n";
  for (long id : order_) {
    const auto& rec = trajectories_.at(id).record;
    for (const Transition& t : rec.transitions) {
      os << id << ' ' << t.step;
      for (double v : t.state) os << ' ' << format_double(v);
      for (double v : t.action) os << ' ' << format_double(v);
      for (double v : t.target_action) os << ' ' << format_double(v);
      os << ' ' << format_double(t.reward);
      for (double v : t.next_state) os << ' ' << format_double(v);
      os << ' ' << (t.done ? 1 : 0) << ' ' << (rec.goal_reached ? 1 : 0) << ' '
         << (rec.mode_id.has_value() ? std::to_string(*rec.mode_id) : "-");
      os << '\n';
    }
  }
}

}  // namespace mmrl
