#pragma once

// Partition of channels into K groups matched to K fixed phrase embeddings.
//
//   J(g) = sum_k n_k ||mu_k - e_k||^2,  mu_k = mean of rows assigned to k
//
// minimized over assignments with every group nonempty, by single-channel
// relocation starting from nearest-center assignment. Groups are 0-based.

#include <functional>
#include <vector>

#include "textcam/cam.hpp"
#include "textcam/types.hpp"

namespace textcam::grouping {

using Index = Eigen::Index;

inline constexpr int kDefaultMaxSweeps = 5000;
// Moves must lower J by more than this to be applied.
inline constexpr double kImprovementThreshold = 1e-12;

struct Problem {
  RowMatrix weighted_semantics;  // [d, D], rows w_j a_j p_j
  RowMatrix centers;             // [K, D], selected phrase embeddings

  Index channels() const noexcept { return weighted_semantics.rows(); }
  Index groups() const noexcept { return centers.rows(); }
};

void validate(const Problem& problem);

struct Assignment {
  std::vector<int> group;  // length d, values in [0, K)
  double objective = 0.0;  // J recomputed from scratch
  int sweeps = 0;
  int moves = 0;
  bool converged = false;
};

// Exact J; throws Error(kEmptyGroup) when a group has no channel.
double objective(const std::vector<int>& group, const Problem& problem);

// Incremental per-group counts and sums. Empty groups are allowed here (they
// contribute 0) so the initial repair can fill them.
class GroupState {
 public:
  GroupState(const Problem& problem, std::vector<int> group);

  int count(int k) const { return counts_[static_cast<std::size_t>(k)]; }
  const Vector& sum(int k) const { return sums_[static_cast<std::size_t>(k)]; }
  Vector mean(int k) const;
  double contribution(int k) const;
  double objective() const;
  const std::vector<int>& assignment() const noexcept { return group_; }

  // J(after moving channel j to group b) - J(now). Throws kWouldEmptyGroup
  // when j is alone in its group and kInvalidArgument when b is its group.
  double move_delta(Index j, int b) const;
  void apply_move(Index j, int b);

 private:
  double contribution(int k, const Vector& sum, int count) const;

  const Problem& problem_;
  std::vector<int> group_;
  std::vector<int> counts_;
  std::vector<Vector> sums_;
};

// Nearest center per channel (ties to the smaller group), then each empty
// group receives the channel whose move raises J the least.
Assignment init_assignment(const Problem& problem);

struct MoveEvent {
  Index channel = 0;
  int from = 0;
  int to = 0;
  double delta = 0.0;
  bool accepted = false;
};

// Called for every evaluated candidate move, before any state change.
using MoveObserver = std::function<void(const MoveEvent&, const GroupState&)>;

// Sweeps channels in ascending order; each takes its most improving move.
// Stops after a sweep without moves or after `max_sweeps` sweeps.
Assignment greedy_relocate(const Problem& problem, int max_sweeps = kDefaultMaxSweeps,
                           const MoveObserver& observer = {});

// V^k = sum over channels in group k of w_j A_j.
cam::SaliencyMap group_saliency(const cam::ActivationStack& stack,
                                const cam::ChannelWeights& weights,
                                const std::vector<int>& group, int k);

}  // namespace textcam::grouping
