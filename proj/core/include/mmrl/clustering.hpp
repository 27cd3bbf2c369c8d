#pragma once

#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "mmrl/common.hpp"
#include "mmrl/replay.hpp"
#include "mmrl/rng.hpp"

namespace mmrl {

// Classic dynamic-time-warping distance with Euclidean point cost, full
// window, boundary-to-boundary alignment.
double dtw_distance(const Track& a, const Track& b);

// Every stride-th point, always keeping the final point.
Track subsample_track(const Track& track, int stride);

// Memoized pairwise DTW distances keyed by unordered trajectory-id pairs.
// Each pair is computed at most once per cache lifetime.
class DistanceCache {
 public:
  double distance(long id_a, long id_b, const Track& track_a, const Track& track_b);
  std::optional<double> lookup(long id_a, long id_b) const;
  void purge(long traj_id);

  long hits() const { return hits_; }
  long misses() const { return misses_; }
  std::size_t size() const { return map_.size(); }

 private:
  static std::uint64_t key(long a, long b);
  std::unordered_map<std::uint64_t, double> map_;
  std::unordered_map<long, std::vector<long>> partners_;
  long hits_ = 0;
  long misses_ = 0;
};

// All pairwise distances for the given tracks, row-major n x n, cache first.
std::vector<double> build_distance_matrix(const std::vector<long>& ids,
                                          const std::vector<const Track*>& tracks,
                                          DistanceCache& cache);

// One agglomerative merge in scipy-style numbering: original points are
// clusters 0..n-1, the k-th merge creates cluster n + k.
struct MergeRecord {
  int left = 0, right = 0;
  double distance = 0.0;
  int size = 0;
};

struct LinkageResult {
  std::vector<MergeRecord> merges;
  std::vector<int> flat;  // cluster label per input, labels 0..n_clusters-1
  int n_clusters = 0;
  double threshold_used = 0.0;
};

// Average-linkage agglomeration over a full distance matrix with a threshold
// cut. Absent threshold means auto: 0.7 x the maximum merge distance.
LinkageResult agglomerative_cluster(const std::vector<double>& dist_matrix, int n,
                                    std::optional<double> threshold);

struct ModeInfo {
  std::vector<long> members;  // trajectory ids, goal-reached and assigned
  Vec embedding;
};

struct ClusterAssignment {
  std::map<int, ModeInfo> modes;
  Vec exploration_embedding;
  int next_mode_id = 0;
  double threshold_used = 0.0;
};

Vec make_embedding(int dim, Rng& rng);

struct InheritOutcome {
  ClusterAssignment assignment;
  // new mode id -> old mode id whose critic parameters it inherits; ids
  // absent here start from a fresh critic.
  std::map<int, int> critic_source;
};

// Maps freshly clustered goal-reached trajectories onto the previous
// assignment: each new cluster inherits critic and embedding from the old
// cluster with maximal member overlap; when several new clusters share a
// donor, the largest keeps its identity and the rest get parameter copies
// with fresh embeddings.
InheritOutcome inherit_modes(const std::vector<std::vector<long>>& new_clusters,
                             const ClusterAssignment& old_assignment,
                             int embedding_dim, Rng& rng);

using TrackLookup = std::function<const Track&(long)>;

// Nearest cluster by mean DTW distance to up-to-sample_count randomly drawn
// goal-reached members; ties break toward the lower mode id. Returns
// kExplorationMode when no clusters exist.
int assign_unsuccessful(long traj_id, const Track& track,
                        const ClusterAssignment& assignment, int sample_count,
                        DistanceCache& cache, const TrackLookup& lookup, Rng& rng);

struct ReclusterConfig {
  double threshold = 0.0;  // 0 = auto
  int subsample_stride = 4;
  int assign_samples = 5;
  int embedding_dim = 5;
};

// Full re-clustering pass: goal-reached tracks -> distance matrix -> linkage
// cut -> mode inheritance -> nearest-cluster assignment of unsuccessful
// trajectories. Updates every finalized trajectory's mode id in the buffer.
InheritOutcome recluster(ReplayBuffer& buffer,
                         const ClusterAssignment& old_assignment,
                         const ReclusterConfig& config, DistanceCache& cache,
                         Rng& rng);

}  // namespace mmrl
