#include "mmrl/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmrl {

double dtw_distance(const Track& a, const Track& b) {
  if (a.empty() || b.empty()) throw ConfigError("dtw_distance: empty track");
  const std::size_t n = a.size(), m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  // Rolling DP over the alignment grid.
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double dx = a[i - 1][0] - b[j - 1][0];
      const double dy = a[i - 1][1] - b[j - 1][1];
      const double cost = std::sqrt(dx * dx + dy * dy);
      cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    prev.swap(cur);
  }
  return prev[m];
}

Track subsample_track(const Track& track, int stride) {
  if (stride < 1) throw ConfigError("subsample stride must be >= 1");
  if (track.empty()) return track;
  Track out;
  for (std::size_t i = 0; i < track.size(); i += stride) out.push_back(track[i]);
  if ((track.size() - 1) % stride != 0) out.push_back(track.back());
  return out;
}

std::uint64_t DistanceCache::key(long a, long b) {
  const std::uint64_t lo = static_cast<std::uint64_t>(std::min(a, b));
  const std::uint64_t hi = static_cast<std::uint64_t>(std::max(a, b));
  return (hi << 32) | (lo & 0xffffffffull);
}

std::optional<double> DistanceCache::lookup(long id_a, long id_b) const {
  const auto it = map_.find(key(id_a, id_b));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

double DistanceCache::distance(long id_a, long id_b, const Track& track_a,
                               const Track& track_b) {
  if (id_a == id_b) return 0.0;
  const std::uint64_t k = key(id_a, id_b);
  const auto it = map_.find(k);
  if (it != map_.end()) {
    ++hits_;
    return it->second;
  }
  ++misses_;
  const double d = dtw_distance(track_a, track_b);
  map_.emplace(k, d);
  partners_[id_a].push_back(id_b);
  partners_[id_b].push_back(id_a);
  return d;
}

void DistanceCache::purge(long traj_id) {
  const auto it = partners_.find(traj_id);
  if (it == partners_.end()) return;
  for (long other : it->second) map_.erase(key(traj_id, other));
  partners_.erase(it);
}

std::vector<double> build_distance_matrix(const std::vector<long>& ids,
                                          const std::vector<const Track*>& tracks,
                                          DistanceCache& cache) {
  const std::size_t n = ids.size();
  if (tracks.size() != n) throw ConfigError("distance matrix: ids/tracks mismatch");
  std::vector<double> matrix(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = cache.distance(ids[i], ids[j], *tracks[i], *tracks[j]);
      matrix[i * n + j] = d;
      matrix[j * n + i] = d;
    }
  }
  return matrix;
}

LinkageResult agglomerative_cluster(const std::vector<double>& dist_matrix, int n,
                                    std::optional<double> threshold) {
  if (n < 1) throw ConfigError("agglomerative_cluster: empty matrix");
  if (dist_matrix.size() != static_cast<std::size_t>(n) * n) {
    throw ConfigError("agglomerative_cluster: matrix size mismatch");
  }
  LinkageResult result;

  // Slot-compacted working matrix; merged clusters reuse the lower slot.
  std::vector<double> d = dist_matrix;
  std::vector<int> cluster_id(n), size(n, 1);
  std::vector<char> active(n, 1);
  for (int i = 0; i < n; ++i) cluster_id[i] = i;
  // Union-find over original indices, replayed later for the threshold cut.
  for (int step = 0; step < n - 1; ++step) {
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        if (d[static_cast<std::size_t>(i) * n + j] < best) {
          best = d[static_cast<std::size_t>(i) * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    MergeRecord rec;
    rec.left = std::min(cluster_id[bi], cluster_id[bj]);
    rec.right = std::max(cluster_id[bi], cluster_id[bj]);
    rec.distance = best;
    rec.size = size[bi] + size[bj];
    result.merges.push_back(rec);
    // Average-linkage update toward the surviving slot bi.
    for (int k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double dik = d[static_cast<std::size_t>(std::min(k, bi)) * n + std::max(k, bi)];
      const double djk = d[static_cast<std::size_t>(std::min(k, bj)) * n + std::max(k, bj)];
      const double merged = (size[bi] * dik + size[bj] * djk) / (size[bi] + size[bj]);
      d[static_cast<std::size_t>(std::min(k, bi)) * n + std::max(k, bi)] = merged;
    }
    size[bi] += size[bj];
    active[bj] = 0;
    cluster_id[bi] = n + step;
  }

  double max_merge = 0.0;
  for (const MergeRecord& m : result.merges) max_merge = std::max(max_merge, m.distance);
  result.threshold_used = threshold.has_value() ? *threshold : 0.7 * max_merge;

  // Flat cut: replay merges up to the threshold through union-find.
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  // Map scipy-style cluster ids back to one representative original index.
  std::vector<int> representative(2 * n - 1, -1);
  for (int i = 0; i < n; ++i) representative[i] = i;
  for (std::size_t k = 0; k < result.merges.size(); ++k) {
    const MergeRecord& m = result.merges[k];
    const int ra = representative[m.left];
    const int rb = representative[m.right];
    representative[n + k] = ra;
    if (m.distance <= result.threshold_used) {
      parent[find(rb)] = find(ra);
    }
  }
  result.flat.assign(n, -1);
  std::map<int, int> label_of_root;
  for (int i = 0; i < n; ++i) {
    const int root = find(i);
    const auto it = label_of_root.find(root);
    if (it == label_of_root.end()) {
      const int label = static_cast<int>(label_of_root.size());
      label_of_root.emplace(root, label);
      result.flat[i] = label;
    } else {
      result.flat[i] = it->second;
    }
  }
  result.n_clusters = static_cast<int>(label_of_root.size());
  return result;
}

Vec make_embedding(int dim, Rng& rng) {
  Vec e(dim);
  for (double& v : e) v = rng.normal();
  return e;
}

InheritOutcome inherit_modes(const std::vector<std::vector<long>>& new_clusters,
                             const ClusterAssignment& old_assignment,
                             int embedding_dim, Rng& rng) {
  InheritOutcome out;
  out.assignment.exploration_embedding = old_assignment.exploration_embedding;
  out.assignment.next_mode_id = old_assignment.next_mode_id;
  out.assignment.threshold_used = old_assignment.threshold_used;

  struct Candidate {
    std::size_t cluster_index;
    int donor;        // old mode id, -1 for none
    std::size_t overlap;
  };
  std::vector<Candidate> candidates;
  for (std::size_t c = 0; c < new_clusters.size(); ++c) {
    std::vector<long> members = new_clusters[c];
    std::sort(members.begin(), members.end());
    int donor = -1;
    std::size_t best_overlap = 0;
    for (const auto& [old_id, info] : old_assignment.modes) {
      std::vector<long> old_members = info.members;
      std::sort(old_members.begin(), old_members.end());
      std::vector<long> shared;
      std::set_intersection(members.begin(), members.end(), old_members.begin(),
                            old_members.end(), std::back_inserter(shared));
      if (shared.size() > best_overlap) {
        best_overlap = shared.size();
        donor = old_id;
      }
    }
    candidates.push_back({c, best_overlap > 0 ? donor : -1, best_overlap});
  }

  // Per donor, the largest new cluster keeps the donor's identity.
  std::map<int, std::size_t> keeper;  // donor -> cluster index
  for (const Candidate& cand : candidates) {
    if (cand.donor < 0) continue;
    const auto it = keeper.find(cand.donor);
    if (it == keeper.end() ||
        new_clusters[cand.cluster_index].size() > new_clusters[it->second].size()) {
      keeper[cand.donor] = cand.cluster_index;
    }
  }

  for (const Candidate& cand : candidates) {
    ModeInfo info;
    info.members = new_clusters[cand.cluster_index];
    std::sort(info.members.begin(), info.members.end());
    int mode_id;
    if (cand.donor >= 0 && keeper[cand.donor] == cand.cluster_index) {
      mode_id = cand.donor;
      info.embedding = old_assignment.modes.at(cand.donor).embedding;
      out.critic_source.emplace(mode_id, cand.donor);
    } else {
      mode_id = out.assignment.next_mode_id++;
      info.embedding = make_embedding(embedding_dim, rng);
      if (cand.donor >= 0) out.critic_source.emplace(mode_id, cand.donor);
    }
    out.assignment.modes.emplace(mode_id, std::move(info));
  }
  return out;
}

int assign_unsuccessful(long traj_id, const Track& track,
                        const ClusterAssignment& assignment, int sample_count,
                        DistanceCache& cache, const TrackLookup& lookup,
                        Rng& rng) {
  if (assignment.modes.empty()) return kExplorationMode;
  if (sample_count < 1) throw ConfigError("assign_unsuccessful: sample_count < 1");
  int best_mode = kExplorationMode;
  double best_mean = std::numeric_limits<double>::infinity();
  for (const auto& [mode_id, info] : assignment.modes) {
    if (info.members.empty()) continue;
    std::vector<long> pool = info.members;
    std::sort(pool.begin(), pool.end());
    const std::size_t take =
        std::min<std::size_t>(sample_count, pool.size());
    // Partial Fisher-Yates draw of `take` distinct members.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.uniform_int(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
      sum += cache.distance(traj_id, pool[i], track, lookup(pool[i]));
    }
    const double mean = sum / take;
    if (mean < best_mean) {
      best_mean = mean;
      best_mode = mode_id;
    }
  }
  return best_mode;
}

InheritOutcome recluster(ReplayBuffer& buffer,
                         const ClusterAssignment& old_assignment,
                         const ReclusterConfig& config, DistanceCache& cache,
                         Rng& rng) {
  const std::vector<long> goal_ids = buffer.finalized_goal_reached_ids();
  if (goal_ids.empty()) {
    return {old_assignment, {}};
  }

  std::map<long, Track> subsampled;
  for (long id : goal_ids) {
    subsampled.emplace(id, subsample_track(buffer.trajectory(id).track,
                                           config.subsample_stride));
  }
  std::vector<const Track*> tracks;
  tracks.reserve(goal_ids.size());
  for (long id : goal_ids) tracks.push_back(&subsampled.at(id));

  const std::vector<double> matrix = build_distance_matrix(goal_ids, tracks, cache);
  const std::optional<double> threshold =
      config.threshold > 0.0 ? std::optional<double>(config.threshold)
                             : std::nullopt;
  const LinkageResult link =
      agglomerative_cluster(matrix, static_cast<int>(goal_ids.size()), threshold);

  std::vector<std::vector<long>> clusters(link.n_clusters);
  for (std::size_t i = 0; i < goal_ids.size(); ++i) {
    clusters[link.flat[i]].push_back(goal_ids[i]);
  }
  InheritOutcome out = inherit_modes(clusters, old_assignment,
                                     config.embedding_dim, rng);
  out.assignment.threshold_used = link.threshold_used;

  std::map<long, int> mode_of;
  for (const auto& [mode_id, info] : out.assignment.modes) {
    for (long id : info.members) mode_of[id] = mode_id;
  }

  TrackLookup lookup = [&](long id) -> const Track& {
    auto it = subsampled.find(id);
    if (it == subsampled.end()) {
      it = subsampled.emplace(id, subsample_track(buffer.trajectory(id).track,
                                                  config.subsample_stride)).first;
    }
    return it->second;
  };
  for (long id : buffer.finalized_unsuccessful_ids()) {
    const int mode = assign_unsuccessful(id, lookup(id), out.assignment,
                                         config.assign_samples, cache, lookup, rng);
    if (mode != kExplorationMode) {
      out.assignment.modes.at(mode).members.push_back(id);
      mode_of[id] = mode;
    }
  }
  for (auto& [mode_id, info] : out.assignment.modes) {
    std::sort(info.members.begin(), info.members.end());
  }

  for (long id : buffer.live_ids()) {
    if (!buffer.trajectory(id).finalized) continue;
    const auto it = mode_of.find(id);
    buffer.set_mode(id, it == mode_of.end() ? std::optional<int>() : it->second);
  }
  return out;
}

}  // namespace mmrl
