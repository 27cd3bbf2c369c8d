#include "mmrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace mmrl {

bool MazeSpec::in_wall(double x, double y) const {
  for (const Rect& w : walls) {
    if (w.contains(x, y)) return true;
  }
  return false;
}

void MazeSpec::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError(name + ": non-positive world size");
  if (episode_length < 1) throw ConfigError(name + ": episode_length must be >= 1");
  if (action_scale <= 0) throw ConfigError(name + ": action_scale must be > 0");
  if (goals.empty()) throw ConfigError(name + ": needs at least one goal");
  for (const Goal& g : goals) {
    if (g.radius <= 0 || g.weight <= 0) {
      throw ConfigError(name + ": goal radius and weight must be > 0");
    }
    if (in_wall(g.cx, g.cy)) throw ConfigError(name + ": goal center inside a wall");
  }
  const Rect& s = start_region;
  if (s.x1 < s.x0 || s.y1 < s.y0) throw ConfigError(name + ": degenerate start region");
  const double xs[3] = {s.x0, 0.5 * (s.x0 + s.x1), s.x1};
  const double ys[3] = {s.y0, 0.5 * (s.y0 + s.y1), s.y1};
  for (double x : xs) {
    for (double y : ys) {
      if (in_wall(x, y)) throw ConfigError(name + ": start region overlaps a wall");
    }
  }
}

EnvState reset_env(const MazeSpec& spec, Rng& rng) {
  spec.validate();
  EnvState st;
  for (int attempt = 0; attempt < 100; ++attempt) {
    st.px = rng.uniform(spec.start_region.x0, spec.start_region.x1);
    st.py = rng.uniform(spec.start_region.y0, spec.start_region.y1);
    if (!spec.in_wall(st.px, st.py)) return st;
  }
  throw ConfigError(spec.name + ": could not sample a free start position");
}

Vec observe(const MazeSpec& spec, const EnvState& state) {
  return {2.0 * state.px / spec.width - 1.0, 2.0 * state.py / spec.height - 1.0,
          state.vx, state.vy};
}

namespace {

// Swept move along one axis; returns the feasible endpoint given that the
// orthogonal coordinate stays at `other`.
double sweep_axis(const std::vector<Rect>& walls, bool horizontal, double from,
                  double to, double other) {
  if (to == from) return to;
  double limit = to;
  for (const Rect& w : walls) {
    const double lo = horizontal ? w.x0 : w.y0;
    const double hi = horizontal ? w.x1 : w.y1;
    const double olo = horizontal ? w.y0 : w.x0;
    const double ohi = horizontal ? w.y1 : w.x1;
    if (!(other > olo && other < ohi)) continue;
    if (to > from) {
      if (from <= lo && limit > lo) limit = lo;
    } else {
      if (from >= hi && limit < hi) limit = hi;
    }
  }
  return limit;
}

}  // namespace

StepResult step_env(const MazeSpec& spec, EnvState& state, double ax, double ay) {
  if (state.done) {
    throw ConfigError("step on a finished episode");
  }
  ax = std::clamp(ax, -1.0, 1.0);
  ay = std::clamp(ay, -1.0, 1.0);
  const double dx = ax * spec.action_scale;
  const double dy = ay * spec.action_scale;

  const double old_x = state.px, old_y = state.py;
  double nx = sweep_axis(spec.walls, true, state.px, state.px + dx, state.py);
  double ny = sweep_axis(spec.walls, false, state.py, state.py + dy, nx);
  nx = std::clamp(nx, 0.0, spec.width);
  ny = std::clamp(ny, 0.0, spec.height);
  state.px = nx;
  state.py = ny;
  state.vx = (nx - old_x) / spec.action_scale;
  state.vy = (ny - old_y) / spec.action_scale;
  state.step += 1;

  StepResult res;
  for (const Goal& g : spec.goals) {
    const double d2 = (state.px - g.cx) * (state.px - g.cx) +
                      (state.py - g.cy) * (state.py - g.cy);
    if (d2 <= g.radius * g.radius) {
      res.reward = g.weight;
      res.goal_reached = true;
      break;
    }
  }
  res.done = res.goal_reached || state.step >= spec.episode_length;
  state.done = res.done;
  res.obs = observe(spec, state);
  return res;
}

std::vector<StepResult> batch_step(const MazeSpec& spec,
                                   std::vector<EnvState>& states,
                                   const Vec& actions) {
  if (actions.size() != 2 * states.size()) {
    throw ConfigError("batch_step: action count does not match state count");
  }
  std::vector<StepResult> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    out[i] = step_env(spec, states[i], actions[2 * i], actions[2 * i + 1]);
  }
  return out;
}

bool path_exists(const MazeSpec& spec, double cell) {
  const int nx = std::max(1, static_cast<int>(std::ceil(spec.width / cell)));
  const int ny = std::max(1, static_cast<int>(std::ceil(spec.height / cell)));
  auto center_x = [&](int i) { return (i + 0.5) * spec.width / nx; };
  auto center_y = [&](int j) { return (j + 0.5) * spec.height / ny; };

  std::vector<std::uint8_t> free(static_cast<std::size_t>(nx) * ny, 0);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(nx) * ny, 0);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      free[static_cast<std::size_t>(j) * nx + i] =
          spec.in_wall(center_x(i), center_y(j)) ? 0 : 1;
    }
  }
  std::queue<std::pair<int, int>> frontier;
  const Rect& s = spec.start_region;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double x = center_x(i), y = center_y(j);
      if (x >= s.x0 && x <= s.x1 && y >= s.y0 && y <= s.y1 &&
          free[static_cast<std::size_t>(j) * nx + i]) {
        frontier.emplace(i, j);
        seen[static_cast<std::size_t>(j) * nx + i] = 1;
      }
    }
  }
  auto is_goal = [&](double x, double y) {
    for (const Goal& g : spec.goals) {
      if ((x - g.cx) * (x - g.cx) + (y - g.cy) * (y - g.cy) <= g.radius * g.radius) {
        return true;
      }
    }
    return false;
  };
  const int dx[4] = {1, -1, 0, 0};
  const int dy[4] = {0, 0, 1, -1};
  while (!frontier.empty()) {
    const auto [i, j] = frontier.front();
    frontier.pop();
    if (is_goal(center_x(i), center_y(j))) return true;
    for (int k = 0; k < 4; ++k) {
      const int ni = i + dx[k], nj = j + dy[k];
      if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
      const std::size_t idx = static_cast<std::size_t>(nj) * nx + ni;
      if (!free[idx] || seen[idx]) continue;
      seen[idx] = 1;
      frontier.emplace(ni, nj);
    }
  }
  return false;
}

MazeSpec randomize_obstacles(const MazeSpec& spec, std::uint64_t seed) {
  if (spec.obstacle_pool.empty()) return spec;
  Rng rng(seed);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<Rect> blocked;
    for (const Rect& cell : spec.obstacle_pool) {
      if (rng.uniform01() < 0.5) blocked.push_back(cell);
    }
    if (blocked.empty()) continue;
    MazeSpec candidate = spec;
    candidate.walls.insert(candidate.walls.end(), blocked.begin(), blocked.end());
    if (path_exists(candidate)) return candidate;
  }
  // Random subsets failed; fall back to single-cell blocks before giving up.
  for (const Rect& cell : spec.obstacle_pool) {
    MazeSpec candidate = spec;
    candidate.walls.push_back(cell);
    if (path_exists(candidate)) return candidate;
  }
  throw ConfigError(spec.name + ": no obstacle configuration leaves a path open");
}

namespace {

// Boundary walls of thickness 0.5 just outside [0, w] x [0, h].
void add_boundary(MazeSpec& m) {
  m.walls.push_back({-0.5, -0.5, m.width + 0.5, 0.0});
  m.walls.push_back({-0.5, m.height, m.width + 0.5, m.height + 0.5});
  m.walls.push_back({-0.5, -0.5, 0.0, m.height + 0.5});
  m.walls.push_back({m.width, -0.5, m.width + 0.5, m.height + 0.5});
}

MazeSpec make_maze_v1() {
  // One goal behind a central obstacle; top and bottom corridors.
  MazeSpec m;
  m.name = "maze-v1";
  m.width = 8;
  m.height = 6;
  add_boundary(m);
  m.walls.push_back({3.0, 1.5, 5.0, 4.5});
  m.goals.push_back({7.0, 3.0, 0.5, 1.0});
  m.start_region = {0.7, 1.2, 1.5, 4.8};
  m.episode_length = 150;
  m.action_scale = 0.4;
  m.obstacle_pool.push_back({3.5, 4.5, 4.5, 6.0});  // plugs the top corridor
  m.obstacle_pool.push_back({3.5, 0.0, 4.5, 1.5});  // plugs the bottom corridor
  return m;
}

MazeSpec make_maze_v2() {
  // Easy low-reward goal on the right, high-reward goal in the top-left
  // behind a barrier with a gap on the right side.
  MazeSpec m;
  m.name = "maze-v2";
  m.width = 8;
  m.height = 8;
  add_boundary(m);
  m.walls.push_back({0.0, 4.0, 6.0, 4.6});
  m.goals.push_back({7.2, 1.0, 0.5, 1.0});
  m.goals.push_back({0.8, 7.2, 0.5, 2.0});
  m.start_region = {0.8, 0.8, 1.6, 1.6};
  m.episode_length = 150;
  m.action_scale = 0.4;
  m.obstacle_pool.push_back({4.5, 0.0, 5.3, 4.0});  // detours the easy route
  return m;
}

MazeSpec make_maze_v3() {
  // Two goals; three route classes to the top-left, two to the bottom-right.
  MazeSpec m;
  m.name = "maze-v3";
  m.width = 10;
  m.height = 10;
  add_boundary(m);
  m.walls.push_back({3.2, 6.0, 6.4, 6.8});  // upper slab
  m.walls.push_back({1.6, 2.6, 2.4, 6.0});  // left slab
  m.walls.push_back({6.0, 2.4, 7.0, 4.4});  // lower-right slab
  m.goals.push_back({1.0, 9.0, 0.5, 1.0});
  m.goals.push_back({9.0, 1.0, 0.5, 1.0});
  m.start_region = {4.6, 4.6, 5.4, 5.4};
  m.episode_length = 150;
  m.action_scale = 0.4;
  m.obstacle_pool.push_back({2.4, 6.0, 3.2, 6.8});  // plugs the middle channel
  return m;
}

MazeSpec make_maze_v4() {
  // Two symmetric goals behind a central slab; over/under routes to each.
  MazeSpec m;
  m.name = "maze-v4";
  m.width = 10;
  m.height = 10;
  add_boundary(m);
  m.walls.push_back({3.0, 4.4, 7.0, 5.6});
  m.goals.push_back({9.0, 8.0, 0.5, 1.0});
  m.goals.push_back({9.0, 2.0, 0.5, 1.0});
  m.start_region = {0.8, 4.6, 1.6, 5.4};
  m.episode_length = 150;
  m.action_scale = 0.4;
  m.obstacle_pool.push_back({4.5, 5.6, 5.5, 10.0});  // plugs the top corridor
  m.obstacle_pool.push_back({4.5, 0.0, 5.5, 4.4});   // plugs the bottom corridor
  return m;
}

MazeSpec make_reach_cross() {
  // Four arms around an open center; the goal sits above, reachable through
  // any of the four diagonal gaps.
  MazeSpec m;
  m.name = "reach-cross";
  m.width = 8;
  m.height = 8;
  add_boundary(m);
  m.walls.push_back({3.7, 4.9, 4.3, 6.2});  // N arm
  m.walls.push_back({3.7, 1.8, 4.3, 3.1});  // S arm
  m.walls.push_back({1.8, 3.7, 3.1, 4.3});  // W arm
  m.walls.push_back({4.9, 3.7, 6.2, 4.3});  // E arm
  m.goals.push_back({4.0, 7.3, 0.5, 1.0});
  m.start_region = {3.9, 3.9, 4.1, 4.1};
  m.episode_length = 60;
  m.action_scale = 0.4;
  m.obstacle_pool.push_back({4.3, 4.3, 4.9, 4.9});  // NE gap
  m.obstacle_pool.push_back({3.1, 4.3, 3.7, 4.9});  // NW gap
  m.obstacle_pool.push_back({4.3, 3.1, 4.9, 3.7});  // SE gap
  m.obstacle_pool.push_back({3.1, 3.1, 3.7, 3.7});  // SW gap
  return m;
}

}  // namespace

MazeSpec make_env(const std::string& name) {
  MazeSpec m;
  if (name == "maze-v1") {
    m = make_maze_v1();
  } else if (name == "maze-v2") {
    m = make_maze_v2();
  } else if (name == "maze-v3") {
    m = make_maze_v3();
  } else if (name == "maze-v4") {
    m = make_maze_v4();
  } else if (name == "reach-cross") {
    m = make_reach_cross();
  } else {
    throw ConfigError("unknown environment: " + name);
  }
  m.validate();
  return m;
}

std::vector<std::string> env_names() {
  return {"maze-v1", "maze-v2", "maze-v3", "maze-v4", "reach-cross"};
}

std::string maze_to_text(const MazeSpec& spec) {
  std::ostringstream os;
  os << "name " << spec.name << '\n';
  os << "size " << format_double(spec.width) << ' ' << format_double(spec.height) << '\n';
  os << "episode_length " << spec.episode_length << '\n';
  os << "action_scale " << format_double(spec.action_scale) << '\n';
  os << "start " << format_double(spec.start_region.x0) << ' '
     << format_double(spec.start_region.y0) << ' '
     << format_double(spec.start_region.x1) << ' '
     << format_double(spec.start_region.y1) << '\n';
  for (const Rect& w : spec.walls) {
    os << "wall " << format_double(w.x0) << ' ' << format_double(w.y0) << ' '
       << format_double(w.x1) << ' ' << format_double(w.y1) << '\n';
  }
  for (const Goal& g : spec.goals) {
    os << "goal " << format_double(g.cx) << ' ' << format_double(g.cy) << ' '
       << format_double(g.radius) << ' ' << format_double(g.weight) << '\n';
  }
  for (const Rect& c : spec.obstacle_pool) {
    os << "pool " << format_double(c.x0) << ' ' << format_double(c.y0) << ' '
       << format_double(c.x1) << ' ' << format_double(c.y1) << '\n';
  }
  return os.str();
}

MazeSpec maze_from_text(const std::string& text) {
  MazeSpec m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> m.name;
    } else if (key == "size") {
      ls >> m.width >> m.height;
    } else if (key == "episode_length") {
      ls >> m.episode_length;
    } else if (key == "action_scale") {
      ls >> m.action_scale;
    } else if (key == "start") {
      ls >> m.start_region.x0 >> m.start_region.y0 >> m.start_region.x1 >>
          m.start_region.y1;
    } else if (key == "wall") {
      Rect r;
      ls >> r.x0 >> r.y0 >> r.x1 >> r.y1;
      m.walls.push_back(r);
    } else if (key == "goal") {
      Goal g;
      ls >> g.cx >> g.cy >> g.radius >> g.weight;
      m.goals.push_back(g);
    } else if (key == "pool") {
      Rect r;
      ls >> r.x0 >> r.y0 >> r.x1 >> r.y1;
      m.obstacle_pool.push_back(r);
    } else {
      throw ConfigError("maze_from_text: unknown key '" + key + "'");
    }
    if (ls.fail()) throw ConfigError("maze_from_text: malformed line '" + line + "'");
  }
  m.validate();
  return m;
}

}  // namespace mmrl
