#include "textcam/concept_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "textcam/error.hpp"

namespace textcam::eval {

ConceptBank::ConceptBank(std::vector<std::string> concepts, RowMatrix embeddings)
    : concepts_(std::move(concepts)), embeddings_(std::move(embeddings)) {
  if (embeddings_.rows() < 1) throw Error(ErrorCode::kInvariantViolation, "empty concept bank");
  if (static_cast<Index>(concepts_.size()) != embeddings_.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "concept names and embedding rows differ in count");
  }
  std::set<std::string> seen;
  for (const auto& c : concepts_) {
    if (!seen.insert(c).second) {
      throw Error(ErrorCode::kInvariantViolation, "duplicate concept '" + c + "'");
    }
  }
  for (Index i = 0; i < embeddings_.rows(); ++i) {
    if (std::abs(embeddings_.row(i).norm() - 1.0) > 1e-4) {
      throw Error(ErrorCode::kInvariantViolation,
                  "concept '" + concepts_[static_cast<std::size_t>(i)] + "' is not unit norm");
    }
  }
}

Index ConceptBank::index_of(const std::string& name) const {
  auto it = std::find(concepts_.begin(), concepts_.end(), name);
  if (it == concepts_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown concept '" + name + "'");
  return static_cast<Index>(it - concepts_.begin());
}

Vector concept_scores(const Vector& t, const ConceptBank& bank) {
  if (t.size() != bank.dim()) {
    throw Error(ErrorCode::kShapeMismatch, "semantic vector and concept bank differ in dimension");
  }
  const double norm = t.norm();
  if (!(norm > 0.0)) throw Error(ErrorCode::kZeroVector, "cannot score a zero semantic vector");
  return bank.embeddings() * (t / norm);
}

Index top_concept(const Vector& scores) {
  if (scores.size() == 0) throw Error(ErrorCode::kEmptySet, "no scores");
  Index best = 0;
  for (Index i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<Index> top_k_concepts(const Vector& scores, int k) {
  std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  if (k >= 0 && idx.size() > static_cast<std::size_t>(k)) idx.resize(static_cast<std::size_t>(k));
  return idx;
}

double txt_accuracy(std::span<const Index> predictions, std::span<const Index> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and labels differ in length");
  }
  if (labels.empty()) throw Error(ErrorCode::kEmptySet, "accuracy over an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<Index> color_dominant_mask(const RowMatrix& probe, int k) {
  const Index d = probe.cols();
  if (k < 1 || k > d) {
    throw Error(ErrorCode::kInvalidArgument, "top-k must lie in [1, " + std::to_string(d) + "]");
  }
  std::set<Index> chosen;
  std::vector<Index> order(static_cast<std::size_t>(d));
  for (Index c = 0; c < probe.rows(); ++c) {
    std::iota(order.begin(), order.end(), Index{0});
    const auto row = probe.row(c);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return std::abs(row[a]) > std::abs(row[b]);
    });
    chosen.insert(order.begin(), order.begin() + k);
  }
  return {chosen.begin(), chosen.end()};
}

Vector ablate(const Vector& z, std::span<const Index> mask) {
  Vector out = z;
  for (Index j : mask) {
    if (j < 0 || j >= z.size()) throw Error(ErrorCode::kIndexOutOfRange, "mask index out of range");
    out[j] = 0.0;
  }
  return out;
}

RowMatrix ablate_rows(const RowMatrix& features, std::span<const Index> mask) {
  RowMatrix out = features;
  for (Index j : mask) {
    if (j < 0 || j >= features.cols()) {
      throw Error(ErrorCode::kIndexOutOfRange, "mask index out of range");
    }
    out.col(j).setZero();
  }
  return out;
}

RowMatrix fit_ridge_head(const RowMatrix& features, std::span<const int> labels,
                         int num_classes, double ridge) {
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "labels and feature rows differ in count");
  }
  if (num_classes < 1 || !(ridge >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "need num_classes >= 1 and ridge >= 0");
  }
  RowMatrix targets = RowMatrix::Constant(features.rows(), num_classes, -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error(ErrorCode::kIndexOutOfRange, "class label out of range");
    }
    targets(static_cast<Index>(i), labels[i]) = 1.0;
  }
  Eigen::MatrixXd gram = features.transpose() * features;
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSingularScatter, "ridge system could not be factored");
  }
  const Eigen::MatrixXd w = ldlt.solve(features.transpose() * targets);
  return w.transpose();
}

std::vector<int> predict(const RowMatrix& head, const RowMatrix& features) {
  if (head.cols() != features.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "head and features differ in channel count");
  }
  const RowMatrix logits = features * head.transpose();
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double classification_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and labels differ in length");
  }
  if (labels.empty()) throw Error(ErrorCode::kEmptySet, "accuracy over an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace textcam::eval
