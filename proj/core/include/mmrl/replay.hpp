#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "mmrl/common.hpp"
#include "mmrl/rng.hpp"

namespace mmrl {

// Mode handle for the distinguished exploration pool.
inline constexpr int kExplorationMode = -1;

struct BufferConfig {
  int capacity_trajectories = 2000;
  int state_dim = 4;
  int action_dim = 2;
};

// Stable handle to a stored transition; survives target write-backs and is
// detectably stale after its trajectory is evicted.
struct TransitionRef {
  long traj_id = -1;
  int index = -1;
};

struct Transition {
  Vec state;
  Vec action;         // executed action, immutable after insert
  Vec target_action;  // mutable label, initialized to `action`
  Vec next_state;
  double reward = 0.0;
  bool done = false;
  long traj_id = -1;
  int step = 0;
};

struct TrajectoryRecord {
  long id = -1;
  bool finalized = false;
  bool goal_reached = false;
  std::optional<int> mode_id;  // set by re-clustering
  std::vector<Transition> transitions;
  Track track;  // world positions; size = transitions + 1
};

// Column-packed sample of transitions. `a_next` and `r_int` start empty and
// are filled by the trainer (policy bootstrap action, intrinsic reward).
struct TransitionBatch {
  int n = 0;
  int state_dim = 0;
  int action_dim = 0;
  Vec s, a, target, s_next;
  Vec r_ext, r_int;
  Vec a_next;
  std::vector<std::uint8_t> done;
  std::vector<TransitionRef> refs;
  std::vector<long> traj_ids;
};

// Trajectory-granular transition store. Eviction removes whole trajectories,
// oldest first, and never touches open (in-flight) ones.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(const BufferConfig& config);

  long begin_trajectory(const Point& start_position);

  // Appends one environment step; returns ids of trajectories evicted to
  // respect the capacity.
  std::vector<long> append(long traj_id, Vec state, Vec action, double reward,
                           Vec next_state, bool done, const Point& next_position);

  const TrajectoryRecord& finalize(long traj_id);

  // Overwrites target actions (clamped to [-1, 1]); stale refs are skipped.
  // Returns the number of stale refs encountered.
  int write_back_targets(const std::vector<TransitionRef>& refs,
                         const Vec& new_targets);

  // Uniform-with-replacement sample over the mode's transitions. The
  // exploration mode draws from every trajectory, including open ones.
  TransitionBatch sample_mode_batch(int mode_id, int n, Rng& rng) const;

  void set_mode(long traj_id, std::optional<int> mode_id);

  bool has_trajectory(long traj_id) const;
  const TrajectoryRecord& trajectory(long traj_id) const;
  const Transition& at(const TransitionRef& ref) const;

  std::vector<long> live_ids() const;                 // insertion order
  std::vector<long> finalized_goal_reached_ids() const;
  std::vector<long> finalized_unsuccessful_ids() const;

  std::size_t trajectory_count() const { return trajectories_.size(); }
  std::size_t transition_count() const { return total_transitions_; }
  std::size_t mode_transition_count(int mode_id) const;

  // Content audit: (s, a, r, s', done) is hashed at insertion and re-verified
  // when the trajectory leaves the buffer.
  struct AuditStats {
    long hashed = 0;
    long verified = 0;
    long mismatched = 0;
    long sampled_for_target_update = 0;
    long targets_modified = 0;
  };
  const AuditStats& audit() const { return audit_; }
  // Re-verifies every live transition now; returns the number of mismatches.
  long verify_live_hashes() const;
  void mark_sampled_for_target_update(const std::vector<TransitionRef>& refs);

  // Line-delimited dump; field order documented in the header line.
  void dump(std::ostream& os) const;

 private:
  struct Stored {
    TrajectoryRecord record;
    std::vector<std::uint64_t> content_hash;
    std::vector<std::uint8_t> sampled;
    std::vector<std::uint8_t> modified;
  };

  static std::uint64_t transition_hash(const Transition& t);
  void evict_oldest();
  const Stored& stored(long traj_id) const;

  BufferConfig config_;
  std::map<long, Stored> trajectories_;
  std::deque<long> order_;
  long next_id_ = 0;
  std::size_t total_transitions_ = 0;
  mutable AuditStats audit_;
};

}  // namespace mmrl
