#include "textcam/channel_semantics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "textcam/error.hpp"
#include "textcam/parallel.hpp"

namespace textcam::semantics {

namespace {

RowMatrix gather_rows(const RowMatrix& m, const std::vector<Index>& rows) {
  RowMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Eigen::MatrixXd scatter(const RowMatrix& x, const Vector& mean) {
  const RowMatrix centered = x.rowwise() - mean.transpose();
  return centered.transpose() * centered;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

Extremes select_extremes(const Vector& scores, int m) {
  const Index n = scores.size();
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "M must be positive");
  if (n < 2 * static_cast<Index>(m)) {
    throw Error(ErrorCode::kTooFewSamples, "need at least 2M = " + std::to_string(2 * m) +
                                               " samples, have " + std::to_string(n));
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });

  Extremes out;
  out.positive.assign(order.begin(), order.begin() + m);
  std::vector<Index> rest(order.begin() + m, order.end());
  std::sort(rest.begin(), rest.end());
  std::stable_sort(rest.begin(), rest.end(),
                   [&](Index a, Index b) { return scores[a] < scores[b]; });
  out.negative.assign(rest.begin(), rest.begin() + m);
  return out;
}

std::optional<Vector> lda_direction(const RowMatrix& pos, const RowMatrix& neg,
                                    double shrinkage) {
  if (pos.rows() < 2 || neg.rows() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "each class needs at least 2 samples");
  }
  if (pos.cols() != neg.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "class embeddings differ in dimension");
  }
  if (shrinkage < 0.0) throw Error(ErrorCode::kInvalidArgument, "shrinkage must be >= 0");

  const Vector mean_pos = pos.colwise().mean().transpose();
  const Vector mean_neg = neg.colwise().mean().transpose();
  const Vector diff = mean_pos - mean_neg;
  if (diff.norm() < kDegenerateThreshold) return std::nullopt;

  const Index dim = pos.cols();
  Eigen::MatrixXd within = scatter(pos, mean_pos) + scatter(neg, mean_neg);
  const double trace = within.trace();

  Vector direction;
  if (shrinkage > 0.0) {
    if (trace <= 0.0) {
      // Zero scatter: the regularized solution tends to the mean difference.
      direction = diff;
    } else {
      within.diagonal().array() += shrinkage * trace / static_cast<double>(dim);
      Eigen::LLT<Eigen::MatrixXd> llt(within);
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::kSingularScatter, "regularized within-class scatter is not PD");
      }
      direction = llt.solve(diff);
    }
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(within);
    const Vector pivots = ldlt.vectorD();
    const double largest = pivots.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(largest > 0.0) ||
        pivots.minCoeff() <= 1e-12 * largest) {
      throw Error(ErrorCode::kSingularScatter,
                  "within-class scatter is singular; use a positive shrinkage");
    }
    direction = ldlt.solve(diff);
  }

  const double norm = direction.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kSingularScatter, "discriminant direction vanished");
  }
  direction /= norm;
  if (direction.dot(diff) < 0.0) direction = -direction;
  return direction;
}

ChannelSemanticsTable build_table(const ReferenceSet& ref, const Config& cfg) {
  const Index n = ref.image_embeddings.rows();
  const Index dim = ref.image_embeddings.cols();
  const Index channels = ref.channel_scores.cols();
  if (cfg.m_extremes < 2) throw Error(ErrorCode::kInvalidArgument, "M must be >= 2");
  if (cfg.shrinkage < 0.0) throw Error(ErrorCode::kInvalidArgument, "shrinkage must be >= 0");
  if (ref.channel_scores.rows() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "reference set has " + std::to_string(n) + " embeddings but " +
                    std::to_string(ref.channel_scores.rows()) + " score rows");
  }
  if (channels < 1 || dim < 1) {
    throw Error(ErrorCode::kShapeMismatch, "reference set needs d >= 1 and D >= 1");
  }
  if (!ref.image_embeddings.allFinite() || !ref.channel_scores.allFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, "reference set contains non-finite values");
  }
  if (n < 2 * static_cast<Index>(cfg.m_extremes)) {
    throw Error(ErrorCode::kTooFewSamples, "reference set has " + std::to_string(n) +
                                               " images, needs 2M = " +
                                               std::to_string(2 * cfg.m_extremes));
  }

  RowMatrix embeddings = ref.image_embeddings;
  for (Index i = 0; i < n; ++i) {
    const double norm = embeddings.row(i).norm();
    if (norm == 0.0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "image embedding row " + std::to_string(i) + " is zero");
    }
    embeddings.row(i) /= norm;
  }

  ChannelSemanticsTable table;
  table.directions = RowMatrix::Zero(channels, dim);
  std::vector<char> degenerate(static_cast<std::size_t>(channels), 0);
  parallel_for(static_cast<std::size_t>(channels), [&](std::size_t j) {
    const Vector scores = ref.channel_scores.col(static_cast<Index>(j));
    // A constant channel ranks images by index alone; it carries no direction.
    if (scores.maxCoeff() == scores.minCoeff()) {
      degenerate[j] = 1;
      return;
    }
    const Extremes ex = select_extremes(scores, cfg.m_extremes);
    const auto p = lda_direction(gather_rows(embeddings, ex.positive),
                                 gather_rows(embeddings, ex.negative), cfg.shrinkage);
    if (p) {
      table.directions.row(static_cast<Index>(j)) = p->transpose();
    } else {
      degenerate[j] = 1;
    }
  });
  table.degenerate.assign(degenerate.begin(), degenerate.end());
  return table;
}

RowMatrix weighted_semantics(const ChannelSemanticsTable& table, const Vector& activation,
                             const cam::ChannelWeights& weights) {
  const Index d = table.channels();
  if (activation.size() != d || weights.w.size() != d) {
    throw Error(ErrorCode::kShapeMismatch,
                "table has " + std::to_string(d) + " channels, activation " +
                    std::to_string(activation.size()) + ", weights " +
                    std::to_string(weights.w.size()));
  }
  const Vector scale = weights.w.cwiseProduct(activation);
  return scale.asDiagonal() * table.directions;
}

SemanticRepresentation semantic_representation(const ChannelSemanticsTable& table,
                                               const Vector& activation,
                                               const cam::ChannelWeights& weights) {
  const RowMatrix terms = weighted_semantics(table, activation, weights);
  SemanticRepresentation out;
  out.t = terms.colwise().sum().transpose();
  out.class_index = weights.class_index;
  if (!out.t.allFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, "semantic representation is not finite");
  }
  return out;
}

io::TensorBundle table_to_bundle(const ChannelSemanticsTable& table, const Config& cfg) {
  io::TensorBundle bundle;
  const Index d = table.channels();
  const Index dim = table.embedding_dim();
  std::vector<float> dirs(static_cast<std::size_t>(d * dim));
  for (Index i = 0; i < table.directions.size(); ++i) {
    dirs[static_cast<std::size_t>(i)] = static_cast<float>(table.directions.data()[i]);
  }
  std::vector<float> mask(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) mask[static_cast<std::size_t>(j)] = table.degenerate[j] ? 1.0f : 0.0f;
  bundle.tensors.emplace(kDirectionsTensor,
                         io::Tensor({d, dim}, std::move(dirs), io::Role::kClipImageEmbedding));
  bundle.tensors.emplace(kDegenerateTensor, io::Tensor({d}, std::move(mask), io::Role::kLabels));
  bundle.metadata["m_extremes"] = std::to_string(cfg.m_extremes);
  bundle.metadata["shrinkage"] = format_double(cfg.shrinkage);
  return bundle;
}

ChannelSemanticsTable table_from_bundle(const io::TensorBundle& bundle) {
  const io::Tensor& dirs = bundle.at(kDirectionsTensor);
  const io::Tensor& mask = bundle.at(kDegenerateTensor);
  if (dirs.rank() != 2 || mask.rank() != 1 || mask.dim(0) != dirs.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch, "table bundle needs directions [d,D] and mask [d]");
  }
  ChannelSemanticsTable table;
  table.directions.resize(dirs.dim(0), dirs.dim(1));
  for (Index i = 0; i < table.directions.size(); ++i) {
    table.directions.data()[i] = static_cast<double>(dirs.data[static_cast<std::size_t>(i)]);
  }
  table.degenerate.resize(static_cast<std::size_t>(mask.dim(0)));
  for (std::size_t j = 0; j < table.degenerate.size(); ++j) {
    table.degenerate[j] = mask.data[j] != 0.0f;
    if (table.degenerate[j]) table.directions.row(static_cast<Index>(j)).setZero();
  }
  return table;
}

}  // namespace textcam::semantics
