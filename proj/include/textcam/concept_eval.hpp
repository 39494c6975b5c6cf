#pragma once

// Concept-level evaluation: cosine concept scores, textual top-1 accuracy,
// and the color-probe ablation used to remove a color shortcut from a shape
// classifier.

#include <span>
#include <string>
#include <vector>

#include "textcam/types.hpp"

namespace textcam::eval {

using Index = Eigen::Index;

class ConceptBank {
 public:
  // `embeddings` is [K_c, D] with unit rows (within 1e-4).
  ConceptBank(std::vector<std::string> concepts, RowMatrix embeddings);

  const std::vector<std::string>& concepts() const noexcept { return concepts_; }
  const RowMatrix& embeddings() const noexcept { return embeddings_; }
  Index size() const noexcept { return embeddings_.rows(); }
  Index dim() const noexcept { return embeddings_.cols(); }
  // Position of `name`; throws kInvalidArgument when unknown.
  Index index_of(const std::string& name) const;

 private:
  std::vector<std::string> concepts_;
  RowMatrix embeddings_;
};

// cos(T / ||T||, e_c) for every concept. Throws kZeroVector for T = 0.
Vector concept_scores(const Vector& t, const ConceptBank& bank);

// Argmax with ties to the smaller index.
Index top_concept(const Vector& scores);

// k best concepts by descending score, ties by ascending index.
std::vector<Index> top_k_concepts(const Vector& scores, int k);

double txt_accuracy(std::span<const Index> predictions, std::span<const Index> labels);

// Union over probe rows of the k channels with the largest |weight| (ties to
// the smaller index). Sorted ascending.
std::vector<Index> color_dominant_mask(const RowMatrix& probe, int k);

// Zeroes the listed coordinates.
Vector ablate(const Vector& z, std::span<const Index> mask);
RowMatrix ablate_rows(const RowMatrix& features, std::span<const Index> mask);

// Bias-free ridge least squares: W = argmin ||Z W' - Y||^2 + ridge ||W||^2
// with Y one-hot in {-1, +1}. Returns [num_classes, d].
RowMatrix fit_ridge_head(const RowMatrix& features, std::span<const int> labels,
                         int num_classes, double ridge);

// argmax_c (W z) per row of `features`, ties to the smaller class.
std::vector<int> predict(const RowMatrix& head, const RowMatrix& features);

double classification_accuracy(std::span<const int> predictions, std::span<const int> labels);

}  // namespace textcam::eval
