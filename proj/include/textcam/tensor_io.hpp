#pragma once

// On-disk container shared by the extractor and the numeric core.
//
// A bundle is a directory holding `manifest.json` plus one `<name>.bin` blob
// per tensor. Blobs are raw little-endian float32 in row-major order. The
// manifest lists entries sorted by name, so a given bundle always serializes
// to the same bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textcam::io {

inline constexpr int kFormatVersion = 1;

enum class Role {
  kActivation,
  kGradient,
  kClipImageEmbedding,
  kClipTextEmbedding,
  kHeadWeights,
  kChannelWeights,
  kFeatureVector,
  kLabels,
};

std::string_view role_name(Role role) noexcept;
std::optional<Role> parse_role(std::string_view name) noexcept;

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  Role role = Role::kFeatureVector;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> shape_in, std::vector<float> data_in,
         Role role_in)
      : shape(std::move(shape_in)), data(std::move(data_in)), role(role_in) {}

  std::size_t rank() const noexcept { return shape.size(); }
  std::int64_t dim(std::size_t axis) const { return shape.at(axis); }

  // Product of the shape; 1 for a rank-0 shape.
  std::size_t numel() const noexcept;

  // Structural equality with bit-exact float comparison.
  friend bool operator==(const Tensor& a, const Tensor& b);
};

struct TensorBundle {
  int format_version = kFormatVersion;
  bool allow_nonfinite = false;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;

  bool contains(const std::string& name) const {
    return tensors.count(name) != 0;
  }
  // Throws Error(kMissingFile) naming the tensor when absent.
  const Tensor& at(const std::string& name) const;

  // Names of tensors carrying `role`, in lexicographic order.
  std::vector<std::string> names_with_role(Role role) const;

  friend bool operator==(const TensorBundle& a, const TensorBundle& b);
};

// Checks every invariant of the format; throws Error(kInvariantViolation).
void validate(const TensorBundle& bundle);

bool is_valid_tensor_name(std::string_view name) noexcept;

// Canonical manifest text (sorted keys, entries ordered by name).
std::string manifest_json(const TensorBundle& bundle);

TensorBundle read_bundle(const std::filesystem::path& dir);
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& dir);

// Writes `bytes` to a sibling temp file then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace textcam::io
