#include "textcam/grouping.hpp"

#include <limits>
#include <string>

#include "textcam/error.hpp"

namespace textcam::grouping {

void validate(const Problem& problem) {
  const Index d = problem.channels();
  const Index k = problem.groups();
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one group");
  if (d < k) {
    throw Error(ErrorCode::kInvalidArgument, "cannot split " + std::to_string(d) +
                                                 " channels into " + std::to_string(k) +
                                                 " nonempty groups");
  }
  if (problem.weighted_semantics.cols() != problem.centers.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "semantic rows and centers differ in dimension");
  }
  if (!problem.weighted_semantics.allFinite() || !problem.centers.allFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, "grouping problem has non-finite values");
  }
}

double objective(const std::vector<int>& group, const Problem& problem) {
  const Index k_count = problem.groups();
  if (static_cast<Index>(group.size()) != problem.channels()) {
    throw Error(ErrorCode::kShapeMismatch, "assignment length differs from channel count");
  }
  RowMatrix sums = RowMatrix::Zero(k_count, problem.centers.cols());
  std::vector<int> counts(static_cast<std::size_t>(k_count), 0);
  for (std::size_t j = 0; j < group.size(); ++j) {
    const int k = group[j];
    if (k < 0 || k >= k_count) throw Error(ErrorCode::kIndexOutOfRange, "group id out of range");
    sums.row(k) += problem.weighted_semantics.row(static_cast<Index>(j));
    ++counts[static_cast<std::size_t>(k)];
  }
  double total = 0.0;
  for (Index k = 0; k < k_count; ++k) {
    const int n = counts[static_cast<std::size_t>(k)];
    if (n == 0) throw Error(ErrorCode::kEmptyGroup, "group " + std::to_string(k) + " is empty");
    total += n * (sums.row(k) / n - problem.centers.row(k)).squaredNorm();
  }
  return total;
}

GroupState::GroupState(const Problem& problem, std::vector<int> group)
    : problem_(problem), group_(std::move(group)) {
  const Index k_count = problem.groups();
  if (static_cast<Index>(group_.size()) != problem.channels()) {
    throw Error(ErrorCode::kShapeMismatch, "assignment length differs from channel count");
  }
  counts_.assign(static_cast<std::size_t>(k_count), 0);
  sums_.assign(static_cast<std::size_t>(k_count), Vector::Zero(problem.centers.cols()));
  for (std::size_t j = 0; j < group_.size(); ++j) {
    const int k = group_[j];
    if (k < 0 || k >= k_count) throw Error(ErrorCode::kIndexOutOfRange, "group id out of range");
    sums_[static_cast<std::size_t>(k)] += problem.weighted_semantics.row(static_cast<Index>(j)).transpose();
    ++counts_[static_cast<std::size_t>(k)];
  }
}

Vector GroupState::mean(int k) const {
  const int n = count(k);
  if (n == 0) throw Error(ErrorCode::kEmptyGroup, "group " + std::to_string(k) + " is empty");
  return sum(k) / n;
}

double GroupState::contribution(int k, const Vector& s, int n) const {
  if (n == 0) return 0.0;
  return n * (s / n - problem_.centers.row(k).transpose()).squaredNorm();
}

double GroupState::contribution(int k) const { return contribution(k, sum(k), count(k)); }

double GroupState::objective() const {
  double total = 0.0;
  for (int k = 0; k < static_cast<int>(counts_.size()); ++k) total += contribution(k);
  return total;
}

double GroupState::move_delta(Index j, int b) const {
  if (j < 0 || j >= static_cast<Index>(group_.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "channel index out of range");
  }
  if (b < 0 || b >= static_cast<int>(counts_.size())) {
    throw Error(ErrorCode::kIndexOutOfRange, "target group out of range");
  }
  const int a = group_[static_cast<std::size_t>(j)];
  if (a == b) throw Error(ErrorCode::kInvalidArgument, "channel already in target group");
  if (count(a) == 1) {
    throw Error(ErrorCode::kWouldEmptyGroup,
                "moving channel " + std::to_string(j) + " would empty group " + std::to_string(a));
  }
  const auto s = problem_.weighted_semantics.row(j).transpose();
  const double before = contribution(a) + contribution(b);
  const double after = contribution(a, sum(a) - s, count(a) - 1) +
                       contribution(b, sum(b) + s, count(b) + 1);
  return after - before;
}

void GroupState::apply_move(Index j, int b) {
  const int a = group_[static_cast<std::size_t>(j)];
  if (a == b) return;
  const auto s = problem_.weighted_semantics.row(j).transpose();
  sums_[static_cast<std::size_t>(a)] -= s;
  sums_[static_cast<std::size_t>(b)] += s;
  --counts_[static_cast<std::size_t>(a)];
  ++counts_[static_cast<std::size_t>(b)];
  group_[static_cast<std::size_t>(j)] = b;
}

Assignment init_assignment(const Problem& problem) {
  validate(problem);
  const Index d = problem.channels();
  const int k_count = static_cast<int>(problem.groups());
  std::vector<int> group(static_cast<std::size_t>(d), 0);
  for (Index j = 0; j < d; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_count; ++k) {
      const double dist = (problem.weighted_semantics.row(j) - problem.centers.row(k)).squaredNorm();
      if (dist < best) {
        best = dist;
        group[static_cast<std::size_t>(j)] = k;
      }
    }
  }

  GroupState state(problem, std::move(group));
  for (int k = 0; k < k_count; ++k) {
    if (state.count(k) > 0) continue;
    Index pick = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < d; ++j) {
      if (state.count(state.assignment()[static_cast<std::size_t>(j)]) < 2) continue;
      const double delta = state.move_delta(j, k);
      if (delta < best) {
        best = delta;
        pick = j;
      }
    }
    // d >= K guarantees some group still holds two or more channels.
    state.apply_move(pick, k);
  }

  Assignment out;
  out.group = state.assignment();
  out.objective = objective(out.group, problem);
  return out;
}

Assignment greedy_relocate(const Problem& problem, int max_sweeps, const MoveObserver& observer) {
  Assignment start = init_assignment(problem);
  GroupState state(problem, start.group);
  const int k_count = static_cast<int>(problem.groups());
  const Index d = problem.channels();

  Assignment out;
  std::vector<MoveEvent> candidates;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    bool moved = false;
    for (Index j = 0; j < d; ++j) {
      const int a = state.assignment()[static_cast<std::size_t>(j)];
      if (state.count(a) < 2) continue;
      candidates.clear();
      int best_b = -1;
      double best_delta = -kImprovementThreshold;
      for (int b = 0; b < k_count; ++b) {
        if (b == a) continue;
        const double delta = state.move_delta(j, b);
        candidates.push_back({j, a, b, delta, false});
        if (delta < best_delta) {
          best_delta = delta;
          best_b = b;
        }
      }
      if (observer) {
        for (auto& ev : candidates) {
          ev.accepted = ev.to == best_b;
          observer(ev, state);
        }
      }
      if (best_b >= 0) {
        state.apply_move(j, best_b);
        ++out.moves;
        moved = true;
      }
    }
    out.sweeps = sweep;
    if (!moved) {
      out.converged = true;
      break;
    }
  }
  if (max_sweeps <= 0) out.converged = false;
  out.group = state.assignment();
  out.objective = objective(out.group, problem);
  return out;
}

cam::SaliencyMap group_saliency(const cam::ActivationStack& stack,
                                const cam::ChannelWeights& weights,
                                const std::vector<int>& group, int k) {
  if (static_cast<Index>(group.size()) != stack.channels() ||
      weights.w.size() != stack.channels()) {
    throw Error(ErrorCode::kShapeMismatch, "assignment, weights and stack disagree on d");
  }
  int k_count = 0;
  for (int g : group) k_count = std::max(k_count, g + 1);
  if (k < 0 || k >= k_count) {
    throw Error(ErrorCode::kIndexOutOfRange, "group " + std::to_string(k) + " does not exist");
  }
  cam::ChannelWeights masked = weights;
  for (Index j = 0; j < stack.channels(); ++j) {
    if (group[static_cast<std::size_t>(j)] != k) masked.w[j] = 0.0;
  }
  return cam::saliency(stack, masked);
}

}  // namespace textcam::grouping
