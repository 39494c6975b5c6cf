#include "textcam/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "json.hpp"
#include "textcam/error.hpp"

namespace textcam::io {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::array<std::pair<Role, std::string_view>, 8> kRoleNames{{
    {Role::kActivation, "activation"},
    {Role::kGradient, "gradient"},
    {Role::kClipImageEmbedding, "clip_image_embedding"},
    {Role::kClipTextEmbedding, "clip_text_embedding"},
    {Role::kHeadWeights, "head_weights"},
    {Role::kChannelWeights, "channel_weights"},
    {Role::kFeatureVector, "feature_vector"},
    {Role::kLabels, "labels"},
}};

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
           (v >> 24);
  }
}

std::string encode_floats(const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t le = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(bytes.data() + 4 * i, &le, 4);
  }
  return bytes;
}

std::vector<float> decode_floats(const std::string& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t le = 0;
    std::memcpy(&le, bytes.data() + 4 * i, 4);
    values[i] = std::bit_cast<float>(to_little_endian(le));
  }
  return values;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) {
    throw Error(ErrorCode::kIoError, "read failed for " + path.string());
  }
  return ss.str();
}

[[noreturn]] void parse_fail(const std::string& what) {
  throw Error(ErrorCode::kManifestParseError, what);
}

void check_finite(const std::string& name, const std::vector<float>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "tensor '" + name + "' has a non-finite value at flat index " +
                      std::to_string(i));
    }
  }
}

}  // namespace

std::string_view role_name(Role role) noexcept {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "unknown";
}

std::optional<Role> parse_role(std::string_view name) noexcept {
  for (const auto& [r, n] : kRoleNames) {
    if (n == name) return r;
  }
  return std::nullopt;
}

std::size_t Tensor::numel() const noexcept {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.role == b.role && a.shape == b.shape &&
         a.data.size() == b.data.size() &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

bool operator==(const TensorBundle& a, const TensorBundle& b) {
  return a.format_version == b.format_version &&
         a.allow_nonfinite == b.allow_nonfinite && a.metadata == b.metadata &&
         a.tensors == b.tensors;
}

const Tensor& TensorBundle::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw Error(ErrorCode::kMissingFile, "bundle has no tensor named '" + name + "'");
  }
  return it->second;
}

std::vector<std::string> TensorBundle::names_with_role(Role role) const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors) {
    if (t.role == role) out.push_back(name);
  }
  return out;
}

bool is_valid_tensor_name(std::string_view name) noexcept {
  if (name.empty() || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    const auto c = static_cast<unsigned char>(ch);
    return c > 0x20 && c < 0x7f && c != '/' && c != '\\';
  });
}

void validate(const TensorBundle& bundle) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvariantViolation, what);
  };
  if (bundle.format_version != kFormatVersion) {
    fail("format_version must be " + std::to_string(kFormatVersion));
  }
  for (const auto& [name, t] : bundle.tensors) {
    if (!is_valid_tensor_name(name)) fail("invalid tensor name '" + name + "'");
    if (t.shape.empty()) fail("tensor '" + name + "' has an empty shape");
    for (auto s : t.shape) {
      if (s <= 0) fail("tensor '" + name + "' has a non-positive dimension");
    }
    if (t.data.size() != t.numel()) {
      fail("tensor '" + name + "' holds " + std::to_string(t.data.size()) +
           " values but its shape implies " + std::to_string(t.numel()));
    }
    if (!bundle.allow_nonfinite) {
      try {
        check_finite(name, t.data);
      } catch (const Error& e) {
        fail(e.what());
      }
    }
  }
}

std::string manifest_json(const TensorBundle& bundle) {
  json entries = json::array();
  for (const auto& [name, t] : bundle.tensors) {
    entries.push_back({{"name", name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"role", std::string(role_name(t.role))}});
  }
  json doc = {{"format_version", bundle.format_version},
              {"allow_nonfinite", bundle.allow_nonfinite},
              {"entries", std::move(entries)},
              {"metadata", bundle.metadata}};
  return doc.dump(2) + "\n";
}

TensorBundle read_bundle(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw Error(ErrorCode::kMissingFile, "bundle directory not found: " + dir.string());
  }
  const std::string text = read_file(dir / "manifest.json");

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    parse_fail(std::string("manifest.json: ") + e.what());
  }
  if (!doc.is_object()) parse_fail("manifest.json must hold an object");

  TensorBundle bundle;
  try {
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
      parse_fail("missing integer format_version");
    }
    bundle.format_version = doc["format_version"].get<int>();
    if (bundle.format_version != kFormatVersion) {
      parse_fail("unsupported format_version " + std::to_string(bundle.format_version));
    }
    if (doc.contains("allow_nonfinite")) {
      if (!doc["allow_nonfinite"].is_boolean()) parse_fail("allow_nonfinite must be a boolean");
      bundle.allow_nonfinite = doc["allow_nonfinite"].get<bool>();
    }
    if (doc.contains("metadata")) {
      const auto& meta = doc["metadata"];
      if (!meta.is_object()) parse_fail("metadata must be an object");
      for (const auto& [key, value] : meta.items()) {
        if (!value.is_string()) parse_fail("metadata value for '" + key + "' must be a string");
        bundle.metadata[key] = value.get<std::string>();
      }
    }
    if (!doc.contains("entries") || !doc["entries"].is_array()) {
      parse_fail("missing entries array");
    }
    for (const auto& entry : doc["entries"]) {
      if (!entry.is_object()) parse_fail("entry must be an object");
      if (!entry.contains("name") || !entry["name"].is_string()) parse_fail("entry without a name");
      const auto name = entry["name"].get<std::string>();
      if (!is_valid_tensor_name(name)) parse_fail("invalid tensor name '" + name + "'");
      if (bundle.tensors.count(name)) parse_fail("duplicate tensor name '" + name + "'");
      if (entry.value("dtype", "") != "f32") parse_fail("tensor '" + name + "' dtype must be f32");
      const auto role = parse_role(entry.value("role", ""));
      if (!role) parse_fail("tensor '" + name + "' has an unknown role");
      if (!entry.contains("shape") || !entry["shape"].is_array() || entry["shape"].empty()) {
        parse_fail("tensor '" + name + "' needs a nonempty shape");
      }
      Tensor t;
      t.role = *role;
      for (const auto& s : entry["shape"]) {
        if (!s.is_number_integer() || s.get<std::int64_t>() <= 0) {
          parse_fail("tensor '" + name + "' shape must hold positive integers");
        }
        t.shape.push_back(s.get<std::int64_t>());
      }

      const std::string blob = read_file(dir / (name + ".bin"));
      if (blob.size() != t.numel() * 4) {
        throw Error(ErrorCode::kShapeMismatch,
                    "tensor '" + name + "' blob has " + std::to_string(blob.size()) +
                        " bytes, shape requires " + std::to_string(t.numel() * 4));
      }
      t.data = decode_floats(blob);
      if (!bundle.allow_nonfinite) check_finite(name, t.data);
      bundle.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    parse_fail(std::string("manifest.json: ") + e.what());
  }
  return bundle;
}

void write_bundle(const TensorBundle& bundle, const fs::path& dir) {
  validate(bundle);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kIoError, "cannot create bundle directory " + dir.string());
  }
  for (const auto& [name, t] : bundle.tensors) {
    const std::string bytes = encode_floats(t.data);
    write_file_atomic(dir / (name + ".bin"), bytes);
  }
  write_file_atomic(dir / "manifest.json", manifest_json(bundle));
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot rename into " + path.string());
  }
}

}  // namespace textcam::io
