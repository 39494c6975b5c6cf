#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "textcam/error.hpp"
#include "textcam/tensor_io.hpp"

using namespace textcam;
using io::Role;
using io::Tensor;
using io::TensorBundle;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kInvariantViolation;
}

Tensor random_tensor(testing::Random& rng, std::vector<std::int64_t> shape, Role role) {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  std::vector<float> data(n);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return Tensor(std::move(shape), std::move(data), role);
}

}  // namespace

TEST_CASE("smallest well-formed bundle reads back four floats") {
  testing::TempDir dir("io_small");
  const std::string manifest = R"({
    "format_version": 1,
    "entries": [{"name": "a", "shape": [2, 2], "dtype": "f32", "role": "activation"}],
    "metadata": {}
  })";
  spit(dir / "manifest.json", manifest);
  std::string blob(16, '\0');
  const float values[4] = {1.0f, -2.0f, 0.5f, 3.25f};
  for (int i = 0; i < 4; ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) blob[static_cast<std::size_t>(4 * i + b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  spit(dir / "a.bin", blob);

  const TensorBundle bundle = io::read_bundle(dir.path());
  const Tensor& a = bundle.at("a");
  CHECK(a.shape == std::vector<std::int64_t>{2, 2});
  CHECK(a.role == Role::kActivation);
  REQUIRE(a.data.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(a.data[static_cast<std::size_t>(i)] == values[i]);
}

TEST_CASE("blob shorter than its declared shape is a shape mismatch") {
  testing::TempDir dir("io_short");
  spit(dir / "manifest.json",
       R"({"format_version":1,"entries":[{"name":"a","shape":[2,2],"dtype":"f32","role":"activation"}]})");
  spit(dir / "a.bin", std::string(12, '\0'));
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("read errors carry the documented codes") {
  testing::TempDir dir("io_errors");
  CHECK(code_of([&] { io::read_bundle(dir / "absent"); }) == ErrorCode::kMissingFile);
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kMissingFile);

  spit(dir / "manifest.json", "{ not json");
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kManifestParseError);

  spit(dir / "manifest.json", R"({"format_version":2,"entries":[]})");
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kManifestParseError);

  spit(dir / "manifest.json",
       R"({"format_version":1,"entries":[{"name":"a","shape":[1],"dtype":"f64","role":"labels"}]})");
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kManifestParseError);

  spit(dir / "manifest.json",
       R"({"format_version":1,"entries":[{"name":"a","shape":[1],"dtype":"f32","role":"bogus"}]})");
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kManifestParseError);

  spit(dir / "manifest.json",
       R"({"format_version":1,"entries":[{"name":"a","shape":[1],"dtype":"f32","role":"labels"}]})");
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kMissingFile);

  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::string blob(4, '\0');
  std::memcpy(blob.data(), &nan, 4);
  spit(dir / "a.bin", blob);
  CHECK(code_of([&] { io::read_bundle(dir.path()); }) == ErrorCode::kNonFiniteValue);

  spit(dir / "manifest.json",
       R"({"format_version":1,"allow_nonfinite":true,"entries":[{"name":"a","shape":[1],"dtype":"f32","role":"labels"}]})");
  CHECK(std::isnan(io::read_bundle(dir.path()).at("a").data[0]));
}

TEST_CASE("round trip of a random 3x4x5 tensor is bit-identical") {
  testing::Random rng(11);
  TensorBundle b;
  b.metadata["layer"] = "layer4";
  b.metadata["class_index"] = "3";
  b.tensors["acts"] = random_tensor(rng, {3, 4, 5}, Role::kActivation);
  testing::TempDir dir("io_roundtrip");
  io::write_bundle(b, dir / "b");
  const TensorBundle back = io::read_bundle(dir / "b");
  CHECK(back == b);
  const auto& x = b.at("acts").data;
  const auto& y = back.at("acts").data;
  CHECK(std::memcmp(x.data(), y.data(), x.size() * 4) == 0);
}

TEST_CASE("empty tensor list is a valid bundle") {
  testing::TempDir dir("io_empty");
  TensorBundle b;
  io::write_bundle(b, dir / "e");
  const TensorBundle back = io::read_bundle(dir / "e");
  CHECK(back.tensors.empty());
  CHECK(back == b);
}

TEST_CASE("manifest lists entries lexicographically regardless of insertion") {
  TensorBundle b;
  b.tensors.emplace("b", Tensor({1}, {1.0f}, Role::kLabels));
  b.tensors.emplace("a", Tensor({1}, {2.0f}, Role::kLabels));
  const auto doc = nlohmann::json::parse(io::manifest_json(b));
  REQUIRE(doc["entries"].size() == 2);
  CHECK(doc["entries"][0]["name"] == "a");
  CHECK(doc["entries"][1]["name"] == "b");
}

TEST_CASE("write, read, write produces identical bytes") {
  testing::Random rng(5);
  TensorBundle b;
  b.metadata["model"] = "toy";
  b.tensors["w"] = random_tensor(rng, {4, 7}, Role::kHeadWeights);
  b.tensors["g"] = random_tensor(rng, {2, 3, 3}, Role::kGradient);
  testing::TempDir dir("io_determinism");
  io::write_bundle(b, dir / "one");
  io::write_bundle(io::read_bundle(dir / "one"), dir / "two");
  for (const char* f : {"manifest.json", "w.bin", "g.bin"}) {
    CHECK(slurp(dir / "one" / f) == slurp(dir / "two" / f));
  }
  CHECK_FALSE(std::filesystem::exists(dir / "one" / "manifest.json.tmp"));
}

TEST_CASE("validation rejects malformed bundles before writing") {
  testing::TempDir dir("io_validate");
  TensorBundle b;
  b.tensors["a"] = Tensor({2, 2}, {1.0f, 2.0f, 3.0f}, Role::kActivation);
  CHECK(code_of([&] { io::write_bundle(b, dir / "x"); }) == ErrorCode::kInvariantViolation);

  TensorBundle bad_name;
  bad_name.tensors["a/b"] = Tensor({1}, {1.0f}, Role::kLabels);
  CHECK(code_of([&] { io::validate(bad_name); }) == ErrorCode::kInvariantViolation);

  TensorBundle nonfinite;
  nonfinite.tensors["a"] = Tensor({1}, {std::numeric_limits<float>::infinity()}, Role::kLabels);
  CHECK(code_of([&] { io::validate(nonfinite); }) == ErrorCode::kInvariantViolation);
  nonfinite.allow_nonfinite = true;
  CHECK_NOTHROW(io::validate(nonfinite));

  TensorBundle zero_dim;
  zero_dim.tensors["a"] = Tensor({0}, {}, Role::kLabels);
  CHECK(code_of([&] { io::validate(zero_dim); }) == ErrorCode::kInvariantViolation);
}

TEST_CASE("tensor names and roles") {
  CHECK(io::is_valid_tensor_name("layer4.0_act"));
  CHECK_FALSE(io::is_valid_tensor_name(""));
  CHECK_FALSE(io::is_valid_tensor_name(".."));
  CHECK_FALSE(io::is_valid_tensor_name("a b"));
  CHECK_FALSE(io::is_valid_tensor_name("caf\xc3\xa9"));
  for (Role r : {Role::kActivation, Role::kGradient, Role::kClipImageEmbedding,
                 Role::kClipTextEmbedding, Role::kHeadWeights, Role::kChannelWeights,
                 Role::kFeatureVector, Role::kLabels}) {
    CHECK(io::parse_role(io::role_name(r)) == r);
  }
  CHECK_FALSE(io::parse_role("weights").has_value());
}

TEST_CASE("property: random bundles survive the round trip") {
  testing::Random rng(2024);
  testing::TempDir dir("io_property");
  const Role roles[] = {Role::kActivation, Role::kLabels, Role::kFeatureVector, Role::kGradient};
  for (int trial = 0; trial < 20; ++trial) {
    TensorBundle b;
    const int count = rng.integer(0, 4);
    for (int t = 0; t < count; ++t) {
      std::vector<std::int64_t> shape;
      const int rank = rng.integer(1, 3);
      for (int r = 0; r < rank; ++r) shape.push_back(rng.integer(1, 5));
      b.tensors["t" + std::to_string(t)] = random_tensor(rng, shape, roles[rng.integer(0, 3)]);
    }
    b.metadata["trial"] = std::to_string(trial);
    const auto path = dir / ("b" + std::to_string(trial));
    io::write_bundle(b, path);
    CHECK(io::read_bundle(path) == b);
  }
}
