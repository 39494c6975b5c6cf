#include "textcam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "textcam/error.hpp"

namespace textcam::cam {

namespace {

std::string shape_string(Index d, Index h, Index w) {
  return "[" + std::to_string(d) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

void check_finite(const RowMatrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, std::string(what) + " contains non-finite values");
  }
}

std::uint8_t quantize(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

std::vector<std::uint8_t> make_jet_table() {
  std::vector<std::uint8_t> table(256 * 3);
  for (int i = 0; i < 256; ++i) {
    const double x = i / 255.0;
    auto channel = [x](double center) {
      return std::clamp(1.5 - std::abs(4.0 * x - center), 0.0, 1.0);
    };
    table[3 * i + 0] = quantize(channel(3.0));
    table[3 * i + 1] = quantize(channel(2.0));
    table[3 * i + 2] = quantize(channel(1.0));
  }
  return table;
}

}  // namespace

ActivationStack::ActivationStack(RowMatrix maps, Index height, Index width)
    : maps_(std::move(maps)), height_(height), width_(width) {
  if (maps_.rows() < 1 || height_ < 1 || width_ < 1) {
    throw Error(ErrorCode::kShapeMismatch, "activation stack needs d, H, W >= 1");
  }
  if (maps_.cols() != height_ * width_) {
    throw Error(ErrorCode::kShapeMismatch, "activation maps do not match H*W");
  }
  check_finite(maps_, "activation stack");
}

ActivationStack ActivationStack::from_tensor(const io::Tensor& tensor) {
  if (tensor.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch, "activation tensor must have rank 3 [d,H,W]");
  }
  const Index d = tensor.dim(0), h = tensor.dim(1), w = tensor.dim(2);
  RowMatrix maps(d, h * w);
  for (Index i = 0; i < maps.size(); ++i) {
    maps.data()[i] = static_cast<double>(tensor.data[static_cast<std::size_t>(i)]);
  }
  return ActivationStack(std::move(maps), h, w);
}

io::Tensor ActivationStack::to_tensor(io::Role role) const {
  std::vector<float> data(static_cast<std::size_t>(maps_.size()));
  for (Index i = 0; i < maps_.size(); ++i) {
    data[static_cast<std::size_t>(i)] = static_cast<float>(maps_.data()[i]);
  }
  return io::Tensor({channels(), height_, width_}, std::move(data), role);
}

const char* weight_source_name(WeightSource source) noexcept {
  switch (source) {
    case WeightSource::kHead: return "head";
    case WeightSource::kGradCam: return "gradcam";
    case WeightSource::kLayerCam: return "layercam";
    case WeightSource::kExternal: return "external";
  }
  return "unknown";
}

Vector gap(const ActivationStack& stack) {
  return stack.maps().rowwise().mean();
}

ChannelWeights weights_from_head(const RowMatrix& head, int class_index) {
  if (class_index < 0 || class_index >= head.rows()) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "class index " + std::to_string(class_index) + " outside head with " +
                    std::to_string(head.rows()) + " classes");
  }
  check_finite(head, "head weights");
  return {head.row(class_index).transpose(), class_index, WeightSource::kHead};
}

ChannelWeights weights_from_gradients(const ActivationStack& gradients,
                                      GradientMode mode, int class_index) {
  ChannelWeights out;
  out.class_index = class_index;
  if (mode == GradientMode::kGradCam) {
    out.w = gradients.maps().rowwise().mean();
    out.source = WeightSource::kGradCam;
  } else {
    out.w = gradients.maps().cwiseMax(0.0).rowwise().mean();
    out.source = WeightSource::kLayerCam;
  }
  return out;
}

ChannelWeights weights_from_gradients(const ActivationStack& gradients,
                                      const ActivationStack& activations,
                                      GradientMode mode, int class_index) {
  if (!gradients.same_shape(activations)) {
    throw Error(ErrorCode::kShapeMismatch,
                "gradients " +
                    shape_string(gradients.channels(), gradients.height(), gradients.width()) +
                    " do not pair with activations " +
                    shape_string(activations.channels(), activations.height(),
                                 activations.width()));
  }
  return weights_from_gradients(gradients, mode, class_index);
}

SaliencyMap saliency(const ActivationStack& stack, const ChannelWeights& weights) {
  if (weights.w.size() != stack.channels()) {
    throw Error(ErrorCode::kShapeMismatch,
                "weights have length " + std::to_string(weights.w.size()) + " but the stack has " +
                    std::to_string(stack.channels()) + " channels");
  }
  const Eigen::RowVectorXd flat = weights.w.transpose() * stack.maps();
  SaliencyMap out;
  out.values = Eigen::Map<const RowMatrix>(flat.data(), stack.height(), stack.width());
  return out;
}

SaliencyMap normalize(const SaliencyMap& map) {
  SaliencyMap out;
  out.values = map.values.cwiseMax(0.0);
  const double peak = out.values.size() ? out.values.maxCoeff() : 0.0;
  if (peak > 0.0) out.values /= peak;
  out.normalized = true;
  return out;
}

Image render(const SaliencyMap& map, int out_height, int out_width, Colormap colormap) {
  if (out_height < 1 || out_width < 1) {
    throw Error(ErrorCode::kInvalidArgument, "render size must be at least 1x1");
  }
  const SaliencyMap unit = normalize(map);
  const Index in_h = unit.values.rows();
  const Index in_w = unit.values.cols();

  // Source coordinate of an output pixel center; clamped at the borders.
  auto source = [](int out, int out_size, Index in_size, Index& lo, Index& hi, double& frac) {
    double s = (out + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_size - 1));
    lo = static_cast<Index>(std::floor(s));
    hi = std::min<Index>(lo + 1, in_size - 1);
    frac = s - static_cast<double>(lo);
  };

  Image img;
  img.width = out_width;
  img.height = out_height;
  img.channels = colormap == Colormap::kGray ? 1 : 3;
  img.pixels.resize(static_cast<std::size_t>(out_width) * out_height * img.channels);
  const auto& jet = jet_table();
  for (int y = 0; y < out_height; ++y) {
    Index y0, y1;
    double fy;
    source(y, out_height, in_h, y0, y1, fy);
    for (int x = 0; x < out_width; ++x) {
      Index x0, x1;
      double fx;
      source(x, out_width, in_w, x0, x1, fx);
      const auto& v = unit.values;
      const double top = (1.0 - fx) * v(y0, x0) + fx * v(y0, x1);
      const double bottom = (1.0 - fx) * v(y1, x0) + fx * v(y1, x1);
      const std::uint8_t q = quantize((1.0 - fy) * top + fy * bottom);
      const std::size_t at = (static_cast<std::size_t>(y) * out_width + x) * img.channels;
      if (img.channels == 1) {
        img.pixels[at] = q;
      } else {
        for (int c = 0; c < 3; ++c) img.pixels[at + c] = jet[3 * q + c];
      }
    }
  }
  return img;
}

const std::vector<std::uint8_t>& jet_table() {
  static const std::vector<std::uint8_t> table = make_jet_table();
  return table;
}

}  // namespace textcam::cam
