#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mmrl/common.hpp"
#include "mmrl/rng.hpp"

namespace mmrl {

// Axis-aligned rectangle in world units.
struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  // Strict interior: points on the boundary are free, so a sliding agent can
  // move along a wall face.
  bool contains(double x, double y) const {
    return x > x0 && x < x1 && y > y0 && y < y1;
  }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct Goal {
  double cx = 0, cy = 0;
  double radius = 0.5;
  double weight = 1.0;
};

// 2D kinematic point-mass world: rectangular walls, circular sparse-reward
// goals, a uniform start region, and optional blockable corridor cells for
// the randomized-obstacle variant.
struct MazeSpec {
  std::string name;
  double width = 0, height = 0;
  std::vector<Rect> walls;  // includes the outer boundary
  std::vector<Goal> goals;
  Rect start_region;
  int episode_length = 150;
  double action_scale = 0.4;
  std::vector<Rect> obstacle_pool;

  bool in_wall(double x, double y) const;
  void validate() const;
};

struct EnvState {
  double px = 0, py = 0;  // world position
  double vx = 0, vy = 0;  // last applied displacement / action_scale
  int step = 0;
  bool done = false;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  bool goal_reached = false;
};

inline constexpr int kObsDim = 4;  // normalized position + velocity

EnvState reset_env(const MazeSpec& spec, Rng& rng);
Vec observe(const MazeSpec& spec, const EnvState& state);

// Moves by action * action_scale with per-axis swept collision resolution
// (slide along wall faces, no penetration). Actions are clamped to [-1, 1].
StepResult step_env(const MazeSpec& spec, EnvState& state, double ax, double ay);

// Elementwise step over independent environment copies; actions packed 2 per
// state.
std::vector<StepResult> batch_step(const MazeSpec& spec,
                                   std::vector<EnvState>& states,
                                   const Vec& actions);

// Converts a random subset of the obstacle pool into walls, retrying until a
// path from the start region to some goal survives (grid flood fill).
MazeSpec randomize_obstacles(const MazeSpec& spec, std::uint64_t seed);

// Flood-fill reachability from the start region to any goal.
bool path_exists(const MazeSpec& spec, double cell = 0.1);

// Built-in environment suite: maze-v1, maze-v2, maze-v3, maze-v4, reach-cross.
MazeSpec make_env(const std::string& name);
std::vector<std::string> env_names();

std::string maze_to_text(const MazeSpec& spec);
MazeSpec maze_from_text(const std::string& text);

}  // namespace mmrl
