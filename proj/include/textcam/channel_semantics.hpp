#pragma once

// Per-channel semantic directions in the joint image-text embedding space.
//
// For every channel, the reference images with the strongest and weakest
// pooled responses form two classes; the two-class Fisher discriminant
// between their image embeddings is that channel's direction. Channel
// directions weighted by activation and channel weight sum to the
// image-level semantic vector.

#include <optional>
#include <vector>

#include "textcam/cam.hpp"
#include "textcam/tensor_io.hpp"
#include "textcam/types.hpp"

namespace textcam::semantics {

using Index = Eigen::Index;

struct ReferenceSet {
  RowMatrix image_embeddings;  // [n, D]
  RowMatrix channel_scores;    // [n, d], pooled activation per image and channel
};

struct Config {
  int m_extremes = 100;
  // Relative ridge: S_W + shrinkage * trace(S_W) / D * I.
  double shrinkage = 1e-3;
};

struct Extremes {
  std::vector<Index> positive;  // highest scores first
  std::vector<Index> negative;  // lowest scores first
};

struct ChannelSemanticsTable {
  RowMatrix directions;           // [d, D], unit rows or zero rows
  std::vector<bool> degenerate;   // length d

  Index channels() const noexcept { return directions.rows(); }
  Index embedding_dim() const noexcept { return directions.cols(); }
};

struct SemanticRepresentation {
  Vector t;  // length D
  int class_index = 0;
};

// Mean-difference norm below which a channel has no direction.
inline constexpr double kDegenerateThreshold = 1e-9;

// The m highest-scoring indices, then the m lowest among the rest. Ties go to
// the smaller index in both lists.
Extremes select_extremes(const Vector& scores, int m);

// Unit Fisher direction separating `pos` from `neg` (rows are samples),
// oriented so the positive mean projects higher. Returns nullopt when the
// class means coincide.
std::optional<Vector> lda_direction(const RowMatrix& pos, const RowMatrix& neg,
                                    double shrinkage);

ChannelSemanticsTable build_table(const ReferenceSet& ref, const Config& cfg);

// T = sum_j w_j * a_j * p_j; degenerate channels carry zero rows.
SemanticRepresentation semantic_representation(const ChannelSemanticsTable& table,
                                               const Vector& activation,
                                               const cam::ChannelWeights& weights);

// Rows w_j * a_j * p_j, the per-channel terms of the sum above.
RowMatrix weighted_semantics(const ChannelSemanticsTable& table, const Vector& activation,
                             const cam::ChannelWeights& weights);

// Tensor names used when a table is persisted.
inline constexpr const char* kDirectionsTensor = "channel_directions";
inline constexpr const char* kDegenerateTensor = "degenerate";

io::TensorBundle table_to_bundle(const ChannelSemanticsTable& table, const Config& cfg);
ChannelSemanticsTable table_from_bundle(const io::TensorBundle& bundle);

}  // namespace textcam::semantics
