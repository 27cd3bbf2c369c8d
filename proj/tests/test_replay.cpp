#include "doctest.h"

#include <set>
#include <sstream>

#include "mmrl/replay.hpp"

using namespace mmrl;

namespace {

BufferConfig tiny_config(int capacity) {
  BufferConfig cfg;
  cfg.capacity_trajectories = capacity;
  cfg.state_dim = 2;
  cfg.action_dim = 2;
  return cfg;
}

// Appends `steps` transitions to a fresh trajectory and finalizes it.
long push_trajectory(ReplayBuffer& buffer, int steps, double reward_last = 0.0,
                     double fill = 0.0) {
  const long id = buffer.begin_trajectory({fill, fill});
  for (int k = 0; k < steps; ++k) {
    const bool last = k == steps - 1;
    buffer.append(id, {fill, static_cast<double>(k)}, {0.1, -0.1},
                  last ? reward_last : 0.0, {fill, k + 1.0}, last,
                  {fill, k + 1.0});
  }
  buffer.finalize(id);
  return id;
}

}  // namespace

TEST_CASE("append: target action initialized to the executed action") {
  ReplayBuffer buffer(tiny_config(8));
  const long id = buffer.begin_trajectory({0, 0});
  buffer.append(id, {0, 0}, {0.4, -0.7}, 0.0, {0.1, 0.1}, false, {0.1, 0.1});
  const Transition& t = buffer.at({id, 0});
  CHECK(t.target_action == t.action);
  CHECK(t.target_action[0] == 0.4);
}

TEST_CASE("append: reward > 0 marks the trajectory goal_reached") {
  ReplayBuffer buffer(tiny_config(8));
  const long id = push_trajectory(buffer, 3, 1.0);
  CHECK(buffer.trajectory(id).goal_reached);
  const long id2 = push_trajectory(buffer, 3, 0.0);
  CHECK_FALSE(buffer.trajectory(id2).goal_reached);
}

TEST_CASE("append: unknown trajectory id raises") {
  ReplayBuffer buffer(tiny_config(8));
  CHECK_THROWS_AS(buffer.append(99, {0, 0}, {0, 0}, 0.0, {0, 0}, false, {0, 0}),
                  ConfigError);
}

TEST_CASE("eviction: whole oldest trajectory goes, never a partial one") {
  ReplayBuffer buffer(tiny_config(3));
  const long a = push_trajectory(buffer, 4);
  const long b = push_trajectory(buffer, 4);
  const long c = push_trajectory(buffer, 4);
  CHECK(buffer.trajectory_count() == 3);
  // A fourth trajectory overflows the capacity; `a` must vanish entirely.
  const long d = buffer.begin_trajectory({0, 0});
  const auto evicted =
      buffer.append(d, {0, 0}, {0, 0}, 0.0, {0, 1}, false, {0, 1});
  CHECK(evicted.size() == 1);
  CHECK(evicted[0] == a);
  CHECK_FALSE(buffer.has_trajectory(a));
  CHECK(buffer.has_trajectory(b));
  CHECK(buffer.has_trajectory(c));
  CHECK(buffer.trajectory_count() == 3);
  CHECK(buffer.transition_count() == 9);
  CHECK(buffer.audit().mismatched == 0);
}

TEST_CASE("eviction: open trajectories are skipped") {
  ReplayBuffer buffer(tiny_config(2));
  const long open_id = buffer.begin_trajectory({0, 0});
  buffer.append(open_id, {0, 0}, {0, 0}, 0.0, {0, 1}, false, {0, 1});
  const long b = push_trajectory(buffer, 2);
  const long c = push_trajectory(buffer, 2);  // overflow: b evicted, not open_id
  CHECK(buffer.has_trajectory(open_id));
  CHECK_FALSE(buffer.has_trajectory(b));
  CHECK(buffer.has_trajectory(c));
}

TEST_CASE("track bookkeeping: length equals transitions + 1") {
  ReplayBuffer buffer(tiny_config(4));
  const long id = push_trajectory(buffer, 5);
  const TrajectoryRecord& rec = buffer.trajectory(id);
  CHECK(rec.track.size() == rec.transitions.size() + 1);
}

TEST_CASE("write_back_targets: round-trip, clamping, original action intact") {
  ReplayBuffer buffer(tiny_config(4));
  const long id = push_trajectory(buffer, 2);
  const Vec original_action = buffer.at({id, 0}).action;
  const int stale =
      buffer.write_back_targets({{id, 0}, {id, 1}}, {0.9, -0.9, 1.7, -1.7});
  CHECK(stale == 0);
  CHECK(buffer.at({id, 0}).target_action == Vec{0.9, -0.9});
  CHECK(buffer.at({id, 1}).target_action == Vec{1.0, -1.0});  // clamped
  CHECK(buffer.at({id, 0}).action == original_action);
  CHECK(buffer.audit().mismatched == 0);
  CHECK(buffer.verify_live_hashes() == 0);
}

TEST_CASE("write_back_targets: stale refs are skipped and counted") {
  ReplayBuffer buffer(tiny_config(2));
  const long a = push_trajectory(buffer, 2);
  push_trajectory(buffer, 2);
  push_trajectory(buffer, 2);  // evicts a
  CHECK_FALSE(buffer.has_trajectory(a));
  const int stale = buffer.write_back_targets({{a, 0}, {a, 55}}, Vec(4, 0.0));
  CHECK(stale == 2);
}

TEST_CASE("sample_mode_batch: single transition repeats under n = 4") {
  ReplayBuffer buffer(tiny_config(4));
  const long id = push_trajectory(buffer, 1, 1.0);
  buffer.set_mode(id, 0);
  Rng rng(3);
  const TransitionBatch batch = buffer.sample_mode_batch(0, 4, rng);
  CHECK(batch.n == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(batch.traj_ids[i] == id);
    CHECK(batch.refs[i].index == 0);
  }
}

TEST_CASE("sample_mode_batch: mode samples carry only that mode's ids") {
  ReplayBuffer buffer(tiny_config(16));
  std::set<long> mode0, mode1;
  for (int k = 0; k < 4; ++k) {
    mode0.insert(push_trajectory(buffer, 3, 1.0, 0.0));
    mode1.insert(push_trajectory(buffer, 5, 1.0, 1.0));
  }
  for (long id : mode0) buffer.set_mode(id, 0);
  for (long id : mode1) buffer.set_mode(id, 1);
  Rng rng(4);
  const TransitionBatch b0 = buffer.sample_mode_batch(0, 64, rng);
  for (long id : b0.traj_ids) CHECK(mode0.count(id) == 1);
  const TransitionBatch b1 = buffer.sample_mode_batch(1, 64, rng);
  for (long id : b1.traj_ids) CHECK(mode1.count(id) == 1);
}

TEST_CASE("sample_mode_batch: exploration covers every mode and open trajectories") {
  ReplayBuffer buffer(tiny_config(16));
  const long a = push_trajectory(buffer, 3, 1.0);
  const long b = push_trajectory(buffer, 3, 1.0);
  buffer.set_mode(a, 0);
  buffer.set_mode(b, 1);
  const long open_id = buffer.begin_trajectory({0, 0});
  buffer.append(open_id, {9, 9}, {0, 0}, 0.0, {9, 8}, false, {9, 8});
  Rng rng(5);
  const TransitionBatch batch = buffer.sample_mode_batch(kExplorationMode, 256, rng);
  std::set<long> seen(batch.traj_ids.begin(), batch.traj_ids.end());
  CHECK(seen.count(a) == 1);
  CHECK(seen.count(b) == 1);
  CHECK(seen.count(open_id) == 1);
}

TEST_CASE("sample_mode_batch: unfinished trajectories are exploration-only") {
  ReplayBuffer buffer(tiny_config(16));
  const long open_id = buffer.begin_trajectory({0, 0});
  buffer.append(open_id, {1, 1}, {0, 0}, 0.0, {1, 2}, false, {1, 2});
  buffer.set_mode(open_id, 0);  // mode tag alone must not make it sampleable
  Rng rng(6);
  CHECK_THROWS_AS(buffer.sample_mode_batch(0, 4, rng), ConfigError);
  CHECK_NOTHROW(buffer.sample_mode_batch(kExplorationMode, 4, rng));
}

TEST_CASE("sample_mode_batch: empty mode raises") {
  ReplayBuffer buffer(tiny_config(4));
  push_trajectory(buffer, 2);
  Rng rng(7);
  CHECK_THROWS_AS(buffer.sample_mode_batch(3, 4, rng), ConfigError);
}

TEST_CASE("audit: content hash constant from insertion to eviction") {
  ReplayBuffer buffer(tiny_config(2));
  const long a = push_trajectory(buffer, 3);
  buffer.write_back_targets({{a, 0}, {a, 1}, {a, 2}},
                            {0.5, 0.5, -0.5, -0.5, 0.2, 0.2});
  push_trajectory(buffer, 3);
  push_trajectory(buffer, 3);  // evicts a, verifying its hashes
  CHECK(buffer.audit().verified >= 3);
  CHECK(buffer.audit().mismatched == 0);
  CHECK(buffer.verify_live_hashes() == 0);
}

TEST_CASE("audit: sampled/modified counters") {
  ReplayBuffer buffer(tiny_config(4));
  const long a = push_trajectory(buffer, 2);
  buffer.mark_sampled_for_target_update({{a, 0}, {a, 1}, {a, 0}});
  CHECK(buffer.audit().sampled_for_target_update == 2);
  buffer.write_back_targets({{a, 0}}, {0.9, 0.9});
  CHECK(buffer.audit().targets_modified == 1);
  // Writing the same value back does not count as a modification.
  buffer.write_back_targets({{a, 1}}, Vec(buffer.at({a, 1}).target_action));
  CHECK(buffer.audit().targets_modified == 1);
}

TEST_CASE("dump: one line per transition with a header") {
  ReplayBuffer buffer(tiny_config(4));
  push_trajectory(buffer, 2);
  push_trajectory(buffer, 3);
  std::ostringstream os;
  buffer.dump(os);
  const std::string text = os.str();
  CHECK(text.rfind("# traj_id step", 0) == 0);
  int lines = 0;
  for (char c : text) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == 1 + 5);
}
