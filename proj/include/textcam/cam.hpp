#pragma once

// Class activation map primitives: channel pooling, channel weights, the
// weighted channel sum, and heatmap rendering.

#include <cstdint>
#include <vector>

#include "textcam/tensor_io.hpp"
#include "textcam/types.hpp"

namespace textcam::cam {

using Index = Eigen::Index;

// Feature maps of one image at the explained layer, stored as [d, H*W].
// Gradient stacks reuse the same layout.
class ActivationStack {
 public:
  ActivationStack(RowMatrix maps, Index height, Index width);

  // Accepts a rank-3 tensor [d, H, W].
  static ActivationStack from_tensor(const io::Tensor& tensor);
  io::Tensor to_tensor(io::Role role = io::Role::kActivation) const;

  Index channels() const noexcept { return maps_.rows(); }
  Index height() const noexcept { return height_; }
  Index width() const noexcept { return width_; }
  const RowMatrix& maps() const noexcept { return maps_; }

  bool same_shape(const ActivationStack& other) const noexcept {
    return channels() == other.channels() && height_ == other.height_ &&
           width_ == other.width_;
  }

 private:
  RowMatrix maps_;
  Index height_;
  Index width_;
};

enum class WeightSource { kHead, kGradCam, kLayerCam, kExternal };

struct ChannelWeights {
  Vector w;
  int class_index = 0;
  WeightSource source = WeightSource::kExternal;
};

const char* weight_source_name(WeightSource source) noexcept;

struct SaliencyMap {
  RowMatrix values;  // [H, W]
  bool normalized = false;
};

// Spatial mean of every channel.
Vector gap(const ActivationStack& stack);

// Row `class_index` of a [C, d] classifier head.
ChannelWeights weights_from_head(const RowMatrix& head, int class_index);

enum class GradientMode { kGradCam, kLayerCam };

// gradcam: mean gradient per channel. layercam: mean of ReLU(gradient).
ChannelWeights weights_from_gradients(const ActivationStack& gradients,
                                      GradientMode mode, int class_index = 0);
// Same, additionally checking the gradients pair with `activations`.
ChannelWeights weights_from_gradients(const ActivationStack& gradients,
                                      const ActivationStack& activations,
                                      GradientMode mode, int class_index = 0);

// V = sum_j w_j A_j with no rectification.
SaliencyMap saliency(const ActivationStack& stack, const ChannelWeights& weights);

// ReLU followed by division by the maximum (when positive).
SaliencyMap normalize(const SaliencyMap& map);

enum class Colormap { kGray, kJet };

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = grayscale, 3 = RGB
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Rectify, normalize to [0, 1], bilinear-resample with half-pixel centers,
// quantize to 0..255 and optionally colorize.
Image render(const SaliencyMap& map, int out_height, int out_width,
             Colormap colormap = Colormap::kGray);

// 256-entry RGB lookup used for Colormap::kJet.
const std::vector<std::uint8_t>& jet_table();

}  // namespace textcam::cam
