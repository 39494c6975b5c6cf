#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "oracles/oracles.hpp"
#include "support.hpp"
#include "textcam/error.hpp"
#include "textcam/sparse_select.hpp"
#include "textcam/tensor_io.hpp"

using namespace textcam;
using namespace textcam::sparse;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Config exact(double alpha, double beta) {
  Config cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.tol = 1e-10;
  cfg.max_iter = 200000;
  return cfg;
}

Solution with_omega(const Vector& omega) {
  Solution s;
  s.omega = omega;
  return s;
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

}  // namespace

TEST_CASE("gram_offdiag examples") {
  CHECK(gram_offdiag(RowMatrix::Identity(4, 4)).isZero(0));

  RowMatrix twins(2, 2);
  twins << 0.6, 0.6, 0.8, 0.8;
  const RowMatrix g = gram_offdiag(twins);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(1.0));
  CHECK(g(1, 0) == doctest::Approx(1.0));

  testing::Random rng(20);
  const RowMatrix e = rng.unit_columns(5, 8);
  const RowMatrix r = gram_offdiag(e);
  for (Index i = 0; i < 8; ++i) {
    for (Index j = 0; j < 8; ++j) {
      double dot = 0.0;
      for (Index k = 0; k < 5; ++k) dot += e(k, i) * e(k, j);
      CHECK(r(i, j) == doctest::Approx(i == j ? 0.0 : dot).epsilon(1e-12));
    }
  }
}

TEST_CASE("identity dictionary reduces to nonnegative soft thresholding") {
  const auto a = admm_solve(vec({3, -1}), RowMatrix::Identity(2, 2), exact(1.0, 0.0));
  CHECK(a.converged);
  CHECK(a.omega[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(a.omega[1] == 0.0);

  const auto b = admm_solve(vec({0.5, -0.2}), RowMatrix::Identity(2, 2), exact(0.0, 0.0));
  CHECK(b.omega[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(b.omega[1] == 0.0);
}

TEST_CASE("identity dictionary matches max(T - alpha, 0) on random targets") {
  testing::Random rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.integer(1, 10);
    const Vector t = rng.vector(n);
    const double alpha = rng.uniform(0.0, 0.5);
    const double beta = rng.uniform(0.0, 0.5);  // G_off vanishes for E = I
    const auto sol = admm_solve(t, RowMatrix::Identity(n, n), exact(alpha, beta));
    const Vector expect = (t.array() - alpha).cwiseMax(0.0);
    CHECK((sol.omega - expect).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("beta = 0 with orthonormal columns matches the closed form") {
  testing::Random rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrix q = Eigen::HouseholderQR<Eigen::MatrixXd>(rng.matrix(10, 10)).householderQ();
    const RowMatrix e = q.leftCols(6);
    const Vector t = rng.vector(10);
    const auto sol = admm_solve(t, e, exact(0.1, 0.0));
    const Vector expect = ((e.transpose() * t).array() - 0.1).cwiseMax(0.0);
    CHECK((sol.omega - expect).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("convex instances agree with the active-set enumeration") {
  testing::Random rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const RowMatrix e = rng.unit_columns(8, 6);
    const Vector t = rng.vector(8);
    const auto sol = admm_solve(t, e, exact(0.05, 0.0));
    const auto ref = oracle::sparse_enumeration(t, e, 0.05, 0.0);
    REQUIRE_FALSE(ref.unbounded);
    CHECK(std::abs(sol.objective - ref.objective) <= 1e-6 * std::max(1.0, std::abs(ref.objective)));
    CHECK(sol.objective == doctest::Approx(oracle::sparse_objective(t, e, sol.omega, 0.05, 0.0)));
  }
}

TEST_CASE("correlated nonnegative dictionaries agree with the enumeration") {
  // Nonnegative columns keep G_off >= 0, so the penalty is copositive.
  testing::Random rng(24);
  for (int trial = 0; trial < 40; ++trial) {
    RowMatrix e = rng.matrix(8, 6).cwiseAbs();
    for (Index c = 0; c < 6; ++c) e.col(c).normalize();
    const Vector t = rng.vector(8).cwiseAbs();
    const auto ref = oracle::sparse_enumeration(t, e, 0.05, 0.1);
    REQUIRE_FALSE(ref.unbounded);
    const auto sol = admm_solve(t, e, exact(0.05, 0.1));
    CHECK(sol.converged);
    CHECK(sol.objective <= ref.objective + 1e-6 * std::max(1.0, std::abs(ref.objective)));
    CHECK(sol.objective >= ref.objective - 1e-9 * std::max(1.0, std::abs(ref.objective)));
  }
}

TEST_CASE("anti-correlated phrases make the objective unbounded") {
  RowMatrix e(2, 2);
  e << 1, -1, 0, 0;
  CHECK(oracle::sparse_enumeration(vec({1, 0}), e, 0.05, 0.1).unbounded);
  CHECK(code_of([&] { admm_solve(vec({1, 0}), e, exact(0.05, 0.1)); }) ==
        ErrorCode::kUnboundedObjective);
  // Without the redundancy penalty the same dictionary is harmless.
  const auto sol = admm_solve(vec({1, 0}), e, exact(0.05, 0.0));
  CHECK(sol.omega[0] == doctest::Approx(0.95).epsilon(1e-8));
  CHECK(sol.omega[1] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("rho is floored above the most negative eigenvalue") {
  // Nonnegative columns keep the problem bounded while beta = 2 makes Q
  // strongly indefinite.
  testing::Random rng(25);
  RowMatrix e = rng.matrix(4, 12).cwiseAbs();
  for (Index c = 0; c < 12; ++c) e.col(c).normalize();
  const double beta = 2.0;
  const Eigen::MatrixXd q = Eigen::MatrixXd(e.transpose() * e) + 2.0 * beta * gram_offdiag(e);
  const double lambda_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q).eigenvalues()[0];
  REQUIRE(lambda_min < -1.0);

  Config cfg;
  cfg.beta = beta;
  cfg.rho = 0.01;
  cfg.max_iter = 5;
  const auto sol = admm_solve(rng.vector(4).cwiseAbs(), e, cfg);
  CHECK(sol.min_eigen_estimate == doctest::Approx(lambda_min).epsilon(1e-3));
  CHECK(sol.rho >= 1.1 * -lambda_min * (1.0 - 1e-3));
}

TEST_CASE("negative curvature on a mix of three phrases is reported as unbounded") {
  // Three phrases at 120 degrees sum to zero, so their equal mix has
  // curvature -2 beta sum(x_i^2) while every pair stays copositive for
  // beta <= 0.5.
  RowMatrix e(2, 3);
  const double pi = std::acos(-1.0);
  for (int k = 0; k < 3; ++k) {
    e(0, k) = std::cos(2.0 * pi * k / 3.0);
    e(1, k) = std::sin(2.0 * pi * k / 3.0);
  }
  const double pair = -0.5 * (1.0 + 2.0 * 0.4);
  REQUIRE(pair > -1.0);
  CHECK_NOTHROW(admm_solve(vec({1, 0}), e, exact(0.05, 0.0)));
  CHECK(oracle::sparse_enumeration(vec({1, 0}), e, 0.05, 0.4).unbounded);
  CHECK(code_of([&] { admm_solve(vec({1, 0}), e, exact(0.05, 0.4)); }) ==
        ErrorCode::kUnboundedObjective);
}

TEST_CASE("woodbury path agrees with the dense factorization") {
  testing::Random rng(26);
  for (int trial = 0; trial < 10; ++trial) {
    RowMatrix e = rng.matrix(6, 20).cwiseAbs();
    for (Index c = 0; c < 20; ++c) e.col(c).normalize();
    const Vector t = rng.vector(6).cwiseAbs();
    Config dense = exact(0.05, 0.1);
    Config lowrank = dense;
    lowrank.dense_limit = 0;
    const auto a = admm_solve(t, e, dense);
    const auto b = admm_solve(t, e, lowrank);
    CHECK(a.converged);
    CHECK(b.converged);
    CHECK(std::abs(a.objective - b.objective) <= 1e-7 * std::max(1.0, std::abs(a.objective)));
  }
}

TEST_CASE("invariants: nonnegative, no worse than zero, deterministic") {
  testing::Random rng(27);
  for (int trial = 0; trial < 30; ++trial) {
    RowMatrix e = rng.matrix(10, 15).cwiseAbs();
    for (Index c = 0; c < 15; ++c) e.col(c).normalize();
    const Vector t = rng.vector(10);
    Config cfg;
    cfg.max_iter = trial % 3 == 0 ? 2 : 10000;
    const auto a = admm_solve(t, e, cfg);
    const auto b = admm_solve(t, e, cfg);
    CHECK((a.omega.array() >= 0.0).all());
    CHECK(a.objective <= 0.5 * t.squaredNorm() + 1e-12);
    CHECK(std::isfinite(a.objective));
    CHECK(std::memcmp(a.omega.data(), b.omega.data(), sizeof(double) * 15) == 0);
    if (cfg.max_iter == 2) CHECK_FALSE(a.converged);
  }
}

TEST_CASE("redundancy penalty splits less mass across duplicate phrases") {
  RowMatrix e(3, 3);
  e << 1, 1, 0,
       0, 0, 1,
       0, 0, 0;
  const Vector t = vec({1.0, 0.3, 0.0});
  const auto loose = admm_solve(t, e, exact(0.05, 0.0));
  const auto tight = admm_solve(t, e, exact(0.05, 1.0));
  const auto shared = [](const Vector& w) {
    return (w[0] > kPositiveThreshold && w[1] > kPositiveThreshold) ? std::min(w[0], w[1]) : 0.0;
  };
  REQUIRE(shared(loose.omega) > 0.0);
  CHECK(shared(tight.omega) < shared(loose.omega));
}

TEST_CASE("default alpha follows the largest correlation") {
  const RowMatrix e = RowMatrix::Identity(3, 3);
  CHECK(resolve_alpha(vec({0.5, 2.0, -1.0}), e, Config{}) == doctest::Approx(0.2));
  CHECK(resolve_alpha(vec({-0.5, -2.0, -1.0}), e, Config{}) == doctest::Approx(1e-13));
  Config fixed;
  fixed.alpha = 0.7;
  CHECK(resolve_alpha(vec({1, 1, 1}), e, fixed) == 0.7);
  CHECK(admm_solve(vec({0.5, 2.0, -1.0}), e, Config{}).alpha == doctest::Approx(0.2));
}

TEST_CASE("config validation") {
  const RowMatrix e = RowMatrix::Identity(2, 2);
  const Vector t = vec({1, 1});
  Config c;
  c.alpha = -1.0;
  CHECK_THROWS_AS(admm_solve(t, e, c), Error);
  c = {};
  c.beta = -0.1;
  CHECK_THROWS_AS(admm_solve(t, e, c), Error);
  c = {};
  c.rho = 0.0;
  CHECK_THROWS_AS(admm_solve(t, e, c), Error);
  c = {};
  c.top_k = 0;
  CHECK_THROWS_AS(admm_solve(t, e, c), Error);
  CHECK(code_of([&] { admm_solve(vec({1, 1, 1}), e, Config{}); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("top_k_phrases examples") {
  const VocabularyBank bank({"red", "cube", "ball"}, RowMatrix::Identity(3, 3));
  CHECK(top_k_phrases(with_omega(Vector::Zero(3)), bank, 5).empty());

  const auto ranked = top_k_phrases(with_omega(vec({0.2, 0, 0.7})), bank, 5);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].phrase == "ball");
  CHECK(ranked[0].weight == 0.7);
  CHECK(ranked[1].phrase == "red");
  CHECK(ranked[1].index == 0);

  const auto ties = top_k_phrases(with_omega(vec({0.5, 0.5, 0.5})), bank, 2);
  REQUIRE(ties.size() == 2);
  CHECK(ties[0].index == 0);
  CHECK(ties[1].index == 1);

  CHECK(top_k_phrases(with_omega(vec({1e-10, 0, 0})), bank, 5).empty());
}

TEST_CASE("top_k_indices matches a sort oracle") {
  testing::Random rng(28);
  for (int trial = 0; trial < 50; ++trial) {
    Vector w(12);
    for (Index i = 0; i < 12; ++i) w[i] = std::max(0.0, std::round(rng.normal() * 4.0) / 4.0);
    const int k = rng.integer(1, 12);
    std::vector<Index> expect;
    for (Index i = 0; i < 12; ++i) {
      if (w[i] > kPositiveThreshold) expect.push_back(i);
    }
    std::sort(expect.begin(), expect.end(), [&](Index a, Index b) {
      return w[a] != w[b] ? w[a] > w[b] : a < b;
    });
    if (expect.size() > static_cast<std::size_t>(k)) expect.resize(static_cast<std::size_t>(k));
    CHECK(top_k_indices(w, k) == expect);
  }
}

TEST_CASE("vocabulary validation and loading") {
  CHECK(code_of([] { VocabularyBank({"a"}, RowMatrix::Identity(2, 2)); }) ==
        ErrorCode::kLengthMismatch);
  CHECK(code_of([] { VocabularyBank({"a", "a"}, RowMatrix::Identity(2, 2)); }) ==
        ErrorCode::kInvariantViolation);
  CHECK(code_of([] { VocabularyBank({"a", "b"}, 2.0 * RowMatrix::Identity(2, 2)); }) ==
        ErrorCode::kInvariantViolation);
  CHECK_THROWS_AS(VocabularyBank({}, RowMatrix::Zero(2, 0)), Error);

  testing::TempDir dir("vocab");
  io::TensorBundle b;
  b.tensors["text"] = io::Tensor({2, 3}, {1, 0, 0.6f, 0, 1, 0.8f}, io::Role::kClipTextEmbedding);
  io::write_bundle(b, dir / "v");
  {
    std::ofstream out(dir / "phrases.txt", std::ios::binary);
    out << "a red cube\r\nball\nyellow\n";
  }
  const auto bank = VocabularyBank::load(dir / "v", dir / "phrases.txt");
  CHECK(bank.size() == 3);
  CHECK(bank.dim() == 2);
  CHECK(bank.phrases()[0] == "a red cube");
  CHECK(bank.embeddings()(1, 2) == doctest::Approx(0.8));
  CHECK(code_of([&] { VocabularyBank::load(dir / "v", dir / "none.txt"); }) ==
        ErrorCode::kMissingFile);
}
