#pragma once

// Nonnegative sparse coding of a semantic vector over a phrase vocabulary:
//
//   min_{w >= 0}  1/2 ||T - E w||^2 + alpha * sum(w) + beta * w' G_off w
//
// where G_off is the vocabulary Gram matrix with its diagonal zeroed. Solved
// with ADMM on the split w = z, z >= 0.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "textcam/types.hpp"

namespace textcam::sparse {

using Index = Eigen::Index;

// Column norms of a vocabulary must be within this of 1.
inline constexpr double kUnitNormTolerance = 1e-4;
// Vocabularies up to this size are searched for a nonnegative direction of
// negative curvature before solving, which proves the objective unbounded.
inline constexpr Index kCurvatureSearchLimit = 512;
// Coefficients above this count as selected.
inline constexpr double kPositiveThreshold = 1e-9;

class VocabularyBank {
 public:
  // `embeddings` is [D, N]; column i embeds phrases[i].
  VocabularyBank(std::vector<std::string> phrases, RowMatrix embeddings);

  // Bundle directory holding one clip_text_embedding tensor [D, N], plus a
  // UTF-8 file with one phrase per line.
  static VocabularyBank load(const std::filesystem::path& bundle_dir,
                             const std::filesystem::path& phrase_file);

  const std::vector<std::string>& phrases() const noexcept { return phrases_; }
  const RowMatrix& embeddings() const noexcept { return embeddings_; }
  Index size() const noexcept { return embeddings_.cols(); }
  Index dim() const noexcept { return embeddings_.rows(); }

 private:
  std::vector<std::string> phrases_;
  RowMatrix embeddings_;
};

std::vector<std::string> read_phrase_file(const std::filesystem::path& path);

// (1 - I) .* E'E
RowMatrix gram_offdiag(const RowMatrix& embeddings);

struct Config {
  std::optional<double> alpha;  // unset: 0.1 * max(max(E'T), 1e-12)
  double beta = 0.1;
  double rho = 1.0;
  double tol = 1e-6;
  int max_iter = 10000;
  int top_k = 5;
  // Re-solve the equality-constrained problem on the final support and keep
  // it when it is a strictly better KKT point.
  bool polish = true;
  // Vocabularies larger than this use a Woodbury solve instead of a dense
  // N x N factorization.
  Index dense_limit = 2048;
};

struct Solution {
  Vector omega;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  double alpha = 0.0;      // resolved L1 weight
  double rho = 0.0;        // penalty after the definiteness floor
  double min_eigen_estimate = 0.0;  // estimate of lambda_min(E'E + 2 beta G_off)
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

double resolve_alpha(const Vector& target, const RowMatrix& embeddings, const Config& cfg);

double objective(const Vector& target, const RowMatrix& embeddings, const Vector& omega,
                 double alpha, double beta);

void validate(const Config& cfg);

Solution admm_solve(const Vector& target, const RowMatrix& embeddings, const Config& cfg);
Solution admm_solve(const Vector& target, const VocabularyBank& bank, const Config& cfg);

struct RankedPhrase {
  std::string phrase;
  Index index = 0;
  double weight = 0.0;
};

// Indices of the k largest coefficients above kPositiveThreshold, by
// descending weight then ascending index.
std::vector<Index> top_k_indices(const Vector& omega, int k);

std::vector<RankedPhrase> top_k_phrases(const Solution& solution, const VocabularyBank& bank,
                                        int k);

}  // namespace textcam::sparse
