#include "textcam/synth_clevr.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "textcam/cam.hpp"
#include "textcam/channel_semantics.hpp"
#include "textcam/error.hpp"

namespace textcam::synth {

namespace {

// Draws are built from raw 64-bit engine output so the stream does not depend
// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace

Dataset synth_clevr_features(const Config& cfg) {
  if (!(cfg.bias >= 0.0 && cfg.bias <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "bias must lie in [0, 1]");
  }
  if (cfg.n_per_class < 1 || cfg.channels_per_attribute < 1 || cfg.nuisance_channels < 0 ||
      cfg.embedding_dim < 6) {
    throw Error(ErrorCode::kInvalidArgument, "invalid synthetic corpus dimensions");
  }
  Rng rng(cfg.seed);
  const int n = 3 * cfg.n_per_class;
  const int d = cfg.feature_dim();
  const int cpa = cfg.channels_per_attribute;

  Dataset out;
  out.features = RowMatrix::Zero(n, d);
  out.image_embeddings = RowMatrix::Zero(n, cfg.embedding_dim);
  out.shapes.resize(static_cast<std::size_t>(n));
  out.colors.resize(static_cast<std::size_t>(n));

  for (int shape = 0; shape < 3; ++shape) {
    const int dominant = dominant_color(shape);
    for (int k = 0; k < cfg.n_per_class; ++k) {
      const int i = shape * cfg.n_per_class + k;
      int color;
      if (cfg.exact_balance) {
        color = k % 3;
      } else if (rng.uniform() < cfg.bias) {
        color = dominant;
      } else {
        // One of the two remaining colors, in ascending order.
        const int pick = rng.uniform() < 0.5 ? 0 : 1;
        int seen = 0;
        color = 0;
        for (int c = 0; c < 3; ++c) {
          if (c == dominant) continue;
          if (seen++ == pick) color = c;
        }
      }
      out.shapes[static_cast<std::size_t>(i)] = shape;
      out.colors[static_cast<std::size_t>(i)] = color;

      const double amplitude =
          rng.uniform() < cfg.occlusion_rate ? cfg.occlusion_amplitude : 1.0;
      for (int b = 0; b < 3; ++b) {
        const double shared = cfg.shape_block_noise * rng.normal();
        for (int c = 0; c < cpa; ++c) {
          out.features(i, cfg.shape_channel(b, c)) =
              (b == shape ? amplitude : 0.0) + shared + cfg.channel_noise * rng.normal();
        }
      }
      for (int b = 0; b < 3; ++b) {
        const double shared = cfg.color_block_noise * rng.normal();
        for (int c = 0; c < cpa; ++c) {
          out.features(i, cfg.color_channel(b, c)) =
              (b == color ? 1.0 : 0.0) + shared + cfg.channel_noise * rng.normal();
        }
      }
      for (int c = 0; c < cfg.nuisance_channels; ++c) {
        out.features(i, 6 * cpa + c) = cfg.nuisance_scale * std::abs(rng.normal());
      }

      for (int e = 0; e < cfg.embedding_dim; ++e) {
        out.image_embeddings(i, e) = cfg.embedding_noise * rng.normal();
      }
      out.image_embeddings(i, color_concept(color)) += 1.0;
      out.image_embeddings(i, shape_concept(shape)) += 1.0;
      out.image_embeddings.row(i).normalize();
    }
  }
  out.features = out.features.cwiseMax(0.0);
  return out;
}

std::vector<std::string> concept_names() {
  return {kColors[0], kColors[1], kColors[2], kShapes[0], kShapes[1], kShapes[2]};
}

eval::ConceptBank concept_bank(int embedding_dim) {
  if (embedding_dim < 6) throw Error(ErrorCode::kInvalidArgument, "embedding_dim must be >= 6");
  RowMatrix e = RowMatrix::Zero(6, embedding_dim);
  for (int c = 0; c < 6; ++c) e(c, c) = 1.0;
  return eval::ConceptBank(concept_names(), std::move(e));
}

RowMatrix blob_activation(const Vector& features, int height, int width, double cy, double cx) {
  RowMatrix blob(1, height * width);
  const double sigma = 0.2 * std::max(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      blob(0, y * width + x) = std::exp(-r2 / (2.0 * sigma * sigma));
    }
  }
  blob /= blob.mean();
  return features * blob;
}

Config balanced_split(const Config& train) {
  Config test = train;
  test.seed = train.seed * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull;
  test.exact_balance = true;
  test.occlusion_rate = 0.0;
  return test;
}

ProtocolResult run_clevr_protocol(const ProtocolConfig& cfg) {
  const Dataset train = synth_clevr_features(cfg.data);
  const Dataset test = synth_clevr_features(balanced_split(cfg.data));
  const eval::ConceptBank bank = concept_bank(cfg.data.embedding_dim);

  const semantics::ChannelSemanticsTable table = semantics::build_table(
      {train.image_embeddings, train.features}, {cfg.m_extremes, cfg.shrinkage});
  const RowMatrix shape_head = eval::fit_ridge_head(train.features, train.shapes, 3, cfg.ridge);
  const RowMatrix color_head = eval::fit_ridge_head(train.features, train.colors, 3, cfg.ridge);

  auto explain = [&](const RowMatrix& head, int cls, Index image) {
    const cam::ChannelWeights w = cam::weights_from_head(head, cls);
    const Vector a = test.features.row(image).transpose();
    const auto rep = semantics::semantic_representation(table, a, w);
    return eval::top_concept(eval::concept_scores(rep.t, bank));
  };

  ProtocolResult out;
  for (bool d : table.degenerate) out.degenerate_channels += d ? 1 : 0;
  const Index n = test.features.rows();
  std::vector<Index> shape_pred, shape_label, color_pred, color_label;
  for (Index i = 0; i < n; ++i) {
    const int s = test.shapes[static_cast<std::size_t>(i)];
    const int c = test.colors[static_cast<std::size_t>(i)];
    shape_pred.push_back(explain(shape_head, s, i));
    shape_label.push_back(shape_concept(s));
    color_pred.push_back(explain(color_head, c, i));
    color_label.push_back(color_concept(c));
  }
  out.shape_acc_txt = eval::txt_accuracy(shape_pred, shape_label);
  out.color_acc_txt = eval::txt_accuracy(color_pred, color_label);
  out.demo_shape_concept = shape_pred.front();
  out.demo_color_concept = color_pred.front();

  out.mask = eval::color_dominant_mask(color_head, cfg.probe_top_k);
  out.mask_size = out.mask.size();
  out.shape_accuracy_before =
      eval::classification_accuracy(eval::predict(shape_head, test.features), test.shapes);
  out.shape_accuracy_after = eval::classification_accuracy(
      eval::predict(shape_head, eval::ablate_rows(test.features, out.mask)), test.shapes);
  return out;
}

}  // namespace textcam::synth
