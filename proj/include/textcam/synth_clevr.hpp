#pragma once

// Desk-scale stand-in for a biased shape/color corpus.
//
// Features are factorized: one block of channels per shape, one block per
// color, plus nuisance channels. Color follows the shape's dominant color
// with probability `bias` (cube -> blue, ball -> red, cylinder -> yellow).
// Pseudo image embeddings place colors on axes 0..2 and shapes on axes 3..5
// of the embedding space, so concept embeddings are orthonormal axes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "textcam/concept_eval.hpp"
#include "textcam/types.hpp"

namespace textcam::synth {

using Index = Eigen::Index;

inline constexpr std::array<const char*, 3> kShapes{"cube", "ball", "cylinder"};
inline constexpr std::array<const char*, 3> kColors{"red", "blue", "yellow"};

// Concept bank order: red, blue, yellow, cube, ball, cylinder.
inline constexpr Index color_concept(int color) { return color; }
inline constexpr Index shape_concept(int shape) { return 3 + shape; }
inline constexpr int dominant_color(int shape) {
  constexpr std::array<int, 3> kDominant{1, 0, 2};
  return kDominant[static_cast<std::size_t>(shape)];
}

struct Config {
  std::uint64_t seed = 0;
  int n_per_class = 300;
  double bias = 0.9;
  // Cycle colors exactly within each shape instead of sampling them.
  bool exact_balance = false;

  int channels_per_attribute = 8;
  int nuisance_channels = 16;
  int embedding_dim = 16;

  double shape_block_noise = 0.1;  // shared within a shape block, per image
  double color_block_noise = 0.1;
  double channel_noise = 0.15;
  double nuisance_scale = 0.5;
  double embedding_noise = 0.15;
  // Fraction of images whose shape evidence is attenuated to
  // `occlusion_amplitude` (partially hidden objects).
  double occlusion_rate = 0.3;
  double occlusion_amplitude = 0.5;

  int feature_dim() const { return 6 * channels_per_attribute + nuisance_channels; }
  Index shape_channel(int shape, int i) const { return shape * channels_per_attribute + i; }
  Index color_channel(int color, int i) const {
    return (3 + color) * channels_per_attribute + i;
  }
};

struct Dataset {
  RowMatrix features;          // [n, d], nonnegative pooled activations
  std::vector<int> shapes;     // per image, index into kShapes
  std::vector<int> colors;     // per image, index into kColors
  RowMatrix image_embeddings;  // [n, D], unit rows
};

// Deterministic for a given config (bitwise across runs).
Dataset synth_clevr_features(const Config& cfg);

std::vector<std::string> concept_names();
eval::ConceptBank concept_bank(int embedding_dim);

// Spatial activation stack whose channel means equal `features`: every
// channel is a Gaussian blob centered at (cy, cx) rescaled to the target mean.
RowMatrix blob_activation(const Vector& features, int height, int width, double cy, double cx);

struct ProtocolConfig {
  Config data;               // training split; the test split is derived
  int m_extremes = 100;
  double shrinkage = 1e-3;
  double ridge = 1e-2;
  int probe_top_k = 8;
};

struct ProtocolResult {
  double shape_acc_txt = 0.0;
  double color_acc_txt = 0.0;
  double shape_accuracy_before = 0.0;
  double shape_accuracy_after = 0.0;
  std::size_t mask_size = 0;
  std::vector<Index> mask;
  // Same image explained through both heads.
  Index demo_shape_concept = 0;
  Index demo_color_concept = 0;
  std::size_t degenerate_channels = 0;
};

// Train split from `cfg.data`; color-balanced test split from the same seed
// family. Heads are fit by ridge least squares; the color head doubles as
// the color probe. Explanations use the ground-truth class of each head.
ProtocolResult run_clevr_protocol(const ProtocolConfig& cfg);

// Balanced evaluation split paired with a training config.
Config balanced_split(const Config& train);

}  // namespace textcam::synth
