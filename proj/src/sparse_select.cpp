#include "textcam/sparse_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>

#include "textcam/error.hpp"
#include "textcam/tensor_io.hpp"

namespace textcam::sparse {

namespace {

// Q = E'E + 2 beta G_off = (1 + 2 beta) E'E - 2 beta diag(E'E), applied
// without forming the N x N matrix.
struct QuadraticForm {
  const RowMatrix& e;
  double gram_scale;  // 1 + 2 beta
  double diag_scale;  // 2 beta
  Vector diag;        // squared column norms

  QuadraticForm(const RowMatrix& embeddings, double beta)
      : e(embeddings),
        gram_scale(1.0 + 2.0 * beta),
        diag_scale(2.0 * beta),
        diag(embeddings.colwise().squaredNorm().transpose()) {}

  Vector apply(const Vector& v) const {
    return gram_scale * (e.transpose() * (e * v)) - diag_scale * diag.cwiseProduct(v);
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd q = gram_scale * (e.transpose() * e);
    q.diagonal() -= diag_scale * diag;
    return q;
  }

  Eigen::MatrixXd principal(const std::vector<Index>& idx) const {
    RowMatrix cols(e.rows(), static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) cols.col(static_cast<Index>(k)) = e.col(idx[k]);
    Eigen::MatrixXd q = gram_scale * (cols.transpose() * cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      q(static_cast<Index>(k), static_cast<Index>(k)) -= diag_scale * diag[idx[k]];
    }
    return q;
  }
};

// Shifted power iteration on sigma*I - Q with sigma bounding lambda_max(Q)
// from above; the dominant eigenvalue gives sigma - lambda_min(Q).
double estimate_min_eigen(const QuadraticForm& q) {
  const Index n = q.diag.size();
  const double sigma = q.gram_scale * q.diag.sum() + 1.0;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
  v.normalize();
  double mu = 0.0;
  for (int it = 0; it < 300; ++it) {
    Vector next = sigma * v - q.apply(v);
    mu = v.dot(next);
    const double norm = next.norm();
    if (!(norm > 0.0)) break;
    v = next / norm;
  }
  return sigma - mu;
}

// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, shift = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumulative += u[k];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[k] - candidate > 0.0) shift = candidate;
  }
  return (v.array() - shift).cwiseMax(0.0);
}

// Searches for x >= 0 with x'Qx < 0, which makes the objective unbounded
// below along x. Exact for two-phrase directions; larger supports come from
// projected gradient descent of x'Qx on the simplex, started from the best
// pair of every phrase.
std::optional<Vector> negative_curvature_direction(const QuadraticForm& form) {
  const Eigen::MatrixXd q = form.dense();
  const Index n = q.rows();
  const double scale = std::max(q.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const double tol = -1e-10 * scale;
  if (q.diagonal().minCoeff() < tol) return Vector(Vector::Unit(n, 0));

  const double lipschitz = q.cwiseAbs().rowwise().sum().maxCoeff();
  for (Index i = 0; i < n; ++i) {
    Index j = i;
    for (Index c = 0; c < n; ++c) {
      if (c != i && (j == i || q(i, c) < q(i, j))) j = c;
    }
    Vector x = Vector::Zero(n);
    if (j == i) {
      x[i] = 1.0;
    } else {
      // Minimizer of the 2x2 form on the segment between vertices i and j.
      const double a = q(i, i), b = q(i, j), c = q(j, j);
      const double curvature = a - 2.0 * b + c;
      const double t = curvature > 0.0 ? std::clamp((c - b) / curvature, 0.0, 1.0) : (a < c ? 1.0 : 0.0);
      x[i] = t;
      x[j] = 1.0 - t;
    }
    for (int it = 0; it < 200; ++it) {
      if (x.dot(q * x) < tol) return x;
      const Vector next = project_simplex(x - (2.0 / lipschitz) * (q * x));
      if ((next - x).lpNorm<Eigen::Infinity>() < 1e-13) break;
      x = next;
    }
    if (x.dot(q * x) < tol) return x;
  }
  return std::nullopt;
}

// Factorization of Q + rho*I reused across iterations.
class ShiftedSolver {
 public:
  ShiftedSolver(const QuadraticForm& q, Index dense_limit) : q_(q), dense_(q.diag.size() <= dense_limit) {}

  bool dense() const { return dense_; }

  // Returns false when Q + rho*I is not positive definite.
  bool factor(double rho) {
    if (dense_) {
      Eigen::MatrixXd m = q_.dense();
      m.diagonal().array() += rho;
      llt_.compute(m);
      return llt_.info() == Eigen::Success;
    }
    // (Q + rho I) = Lambda + gamma E'E with Lambda = diag(rho - 2 beta d_i).
    lambda_inv_ = (rho - q_.diag_scale * q_.diag.array()).matrix();
    if ((lambda_inv_.array() <= 0.0).any()) return false;
    lambda_inv_ = lambda_inv_.cwiseInverse();
    Eigen::MatrixXd cap = q_.e * lambda_inv_.asDiagonal() * q_.e.transpose();
    cap.diagonal().array() += 1.0 / q_.gram_scale;
    llt_.compute(cap);
    return llt_.info() == Eigen::Success;
  }

  Vector solve(const Vector& b) const {
    if (dense_) return llt_.solve(b);
    const Vector scaled = lambda_inv_.cwiseProduct(b);
    const Vector inner = llt_.solve(q_.e * scaled);
    return scaled - lambda_inv_.cwiseProduct(q_.e.transpose() * inner);
  }

 private:
  const QuadraticForm& q_;
  bool dense_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Vector lambda_inv_;
};

// Objective with G_off expanded as ||E w||^2 - sum d_i w_i^2.
double objective_fast(const Vector& target, const RowMatrix& e, const Vector& diag,
                      const Vector& omega, double alpha, double beta) {
  const Vector ew = e * omega;
  const double fit = 0.5 * (target - ew).squaredNorm();
  const double offdiag = ew.squaredNorm() - diag.dot(omega.cwiseAbs2());
  return fit + alpha * omega.sum() + beta * offdiag;
}

}  // namespace

VocabularyBank::VocabularyBank(std::vector<std::string> phrases, RowMatrix embeddings)
    : phrases_(std::move(phrases)), embeddings_(std::move(embeddings)) {
  if (embeddings_.cols() < 1 || embeddings_.rows() < 1) {
    throw Error(ErrorCode::kInvariantViolation, "vocabulary needs at least one phrase");
  }
  if (static_cast<Index>(phrases_.size()) != embeddings_.cols()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(phrases_.size()) + " phrases for " +
                    std::to_string(embeddings_.cols()) + " embedding columns");
  }
  if (!embeddings_.allFinite()) {
    throw Error(ErrorCode::kNonFiniteValue, "vocabulary embeddings are not finite");
  }
  std::set<std::string> seen;
  for (const auto& p : phrases_) {
    if (p.empty()) throw Error(ErrorCode::kInvariantViolation, "empty phrase in vocabulary");
    if (!seen.insert(p).second) {
      throw Error(ErrorCode::kInvariantViolation, "duplicate phrase '" + p + "'");
    }
  }
  for (Index i = 0; i < embeddings_.cols(); ++i) {
    const double norm = embeddings_.col(i).norm();
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw Error(ErrorCode::kInvariantViolation,
                  "embedding of '" + phrases_[static_cast<std::size_t>(i)] +
                      "' has norm " + std::to_string(norm) + ", expected unit norm");
    }
  }
}

std::vector<std::string> read_phrase_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open phrase file " + path.string());
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    phrases.push_back(line);
  }
  return phrases;
}

VocabularyBank VocabularyBank::load(const std::filesystem::path& bundle_dir,
                                    const std::filesystem::path& phrase_file) {
  const io::TensorBundle bundle = io::read_bundle(bundle_dir);
  const auto names = bundle.names_with_role(io::Role::kClipTextEmbedding);
  if (names.empty()) {
    throw Error(ErrorCode::kMissingFile,
                "vocabulary bundle has no clip_text_embedding tensor: " + bundle_dir.string());
  }
  if (names.size() > 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "vocabulary bundle has several clip_text_embedding tensors");
  }
  const io::Tensor& t = bundle.at(names.front());
  if (t.rank() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "text embeddings must be a [D, N] matrix");
  }
  RowMatrix e(t.dim(0), t.dim(1));
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<double>(t.data[static_cast<std::size_t>(i)]);
  return VocabularyBank(read_phrase_file(phrase_file), std::move(e));
}

RowMatrix gram_offdiag(const RowMatrix& embeddings) {
  RowMatrix g = embeddings.transpose() * embeddings;
  g.diagonal().setZero();
  return g;
}

void validate(const Config& cfg) {
  if (cfg.alpha && !(*cfg.alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  if (!(cfg.beta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta must be >= 0");
  if (!(cfg.rho > 0.0)) throw Error(ErrorCode::kInvalidArgument, "rho must be > 0");
  if (!(cfg.tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tol must be > 0");
  if (cfg.max_iter < 1) throw Error(ErrorCode::kInvalidArgument, "max_iter must be >= 1");
  if (cfg.top_k < 1) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 1");
}

double resolve_alpha(const Vector& target, const RowMatrix& embeddings, const Config& cfg) {
  if (cfg.alpha) return *cfg.alpha;
  const Vector corr = embeddings.transpose() * target;
  return 0.1 * std::max(corr.maxCoeff(), 1e-12);
}

double objective(const Vector& target, const RowMatrix& embeddings, const Vector& omega,
                 double alpha, double beta) {
  const Vector residual = target - embeddings * omega;
  const RowMatrix g_off = gram_offdiag(embeddings);
  return 0.5 * residual.squaredNorm() + alpha * omega.sum() + beta * omega.dot(g_off * omega);
}

Solution admm_solve(const Vector& target, const RowMatrix& embeddings, const Config& cfg) {
  validate(cfg);
  const Index n = embeddings.cols();
  if (target.size() != embeddings.rows()) {
    throw Error(ErrorCode::kShapeMismatch,
                "target has length " + std::to_string(target.size()) +
                    " but embeddings have dimension " + std::to_string(embeddings.rows()));
  }
  if (n < 1) throw Error(ErrorCode::kShapeMismatch, "empty vocabulary");
  if (!target.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "target is not finite");

  Solution sol;
  sol.alpha = resolve_alpha(target, embeddings, cfg);
  const QuadraticForm q(embeddings, cfg.beta);
  const Vector linear = (embeddings.transpose() * target).array() - sol.alpha;
  auto f = [&](const Vector& w) {
    return objective_fast(target, embeddings, q.diag, w, sol.alpha, cfg.beta);
  };

  sol.min_eigen_estimate = estimate_min_eigen(q);
  if (sol.min_eigen_estimate < 0.0 && n <= kCurvatureSearchLimit &&
      negative_curvature_direction(q)) {
    throw Error(ErrorCode::kUnboundedObjective,
                "the objective is unbounded below on w >= 0: some nonnegative mix of "
                "anti-correlated phrases has negative curvature (beta > 0)");
  }
  double rho = std::max(cfg.rho, 1.1 * std::max(0.0, -sol.min_eigen_estimate));
  ShiftedSolver solver(q, cfg.dense_limit);
  if (!solver.dense()) rho = std::max(rho, 1.1 * q.diag_scale * q.diag.maxCoeff());

  const double zero_objective = 0.5 * target.squaredNorm();
  const double divergence_floor = -1e10 * (1.0 + zero_objective);
  const double blowup = 1e8 * (1.0 + linear.cwiseAbs().maxCoeff());
  const double stop = cfg.tol * std::sqrt(static_cast<double>(n));

  Vector z;
  Vector best;
  double best_objective = zero_objective;
  // Nonconvex ADMM can oscillate without bound when rho sits just above
  // -lambda_min. A runaway iterate is only reported as unboundedness when its
  // direction has negative curvature; otherwise rho is doubled and the solve
  // restarts.
  for (int restart = 0;; ++restart) {
    bool factored = false;
    for (int attempt = 0; attempt < 8 && !factored; ++attempt) {
      factored = solver.factor(rho);
      if (!factored) rho *= 2.0;
    }
    if (!factored) {
      throw Error(ErrorCode::kIndefiniteSystem, "Q + rho*I stayed indefinite after raising rho");
    }
    sol.rho = rho;

    z = Vector::Zero(n);
    Vector u = Vector::Zero(n);
    best = z;
    best_objective = zero_objective;
    sol.converged = false;
    bool diverged = false;
    for (int it = 1; it <= cfg.max_iter; ++it) {
      const Vector w = solver.solve(linear + rho * (z - u));
      const Vector z_prev = z;
      z = (w + u).cwiseMax(0.0);
      u += w - z;
      sol.iterations = it;
      sol.primal_residual = (w - z).norm();
      sol.dual_residual = rho * (z - z_prev).norm();

      const double fz = f(z);
      if (!z.allFinite() || !std::isfinite(fz) || fz < divergence_floor ||
          z.cwiseAbs().maxCoeff() > blowup) {
        if (z.allFinite() && z.norm() > 0.0) {
          const Vector d = z / z.norm();
          if (d.dot(q.apply(d)) < 0.0) {
            throw Error(ErrorCode::kUnboundedObjective,
                        "the objective is unbounded below on w >= 0 "
                        "(anti-correlated phrases with beta > 0)");
          }
        }
        diverged = true;
        break;
      }
      if (fz < best_objective) {
        best_objective = fz;
        best = z;
      }
      if (sol.primal_residual <= stop && sol.dual_residual <= stop) {
        sol.converged = true;
        break;
      }
    }
    if (!diverged) break;
    if (restart >= 30) {
      throw Error(ErrorCode::kUnboundedObjective,
                  "ADMM iterates diverged for every penalty tried");
    }
    rho *= 2.0;
  }
  sol.omega = sol.converged ? z : best;

  if (sol.converged && cfg.polish) {
    std::vector<Index> support;
    for (Index i = 0; i < n; ++i) {
      if (sol.omega[i] > kPositiveThreshold) support.push_back(i);
    }
    Vector candidate = Vector::Zero(n);
    bool ok = true;
    if (!support.empty()) {
      const Eigen::MatrixXd q_ss = q.principal(support);
      Vector rhs(static_cast<Index>(support.size()));
      for (std::size_t k = 0; k < support.size(); ++k) rhs[static_cast<Index>(k)] = linear[support[k]];
      Eigen::LDLT<Eigen::MatrixXd> ldlt(q_ss);
      ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
      if (ok) {
        const Vector x = ldlt.solve(rhs);
        ok = x.allFinite() && (x.array() > 0.0).all();
        for (std::size_t k = 0; ok && k < support.size(); ++k) candidate[support[k]] = x[static_cast<Index>(k)];
      }
    }
    if (ok) {
      const Vector grad = q.apply(candidate) - linear;
      const double kkt_tol = 1e-8 * (1.0 + linear.cwiseAbs().maxCoeff());
      for (Index i = 0; ok && i < n; ++i) {
        if (candidate[i] == 0.0 && grad[i] < -kkt_tol) ok = false;
      }
    }
    if (ok) {
      const double current = f(sol.omega);
      if (f(candidate) <= current + 1e-12 * (1.0 + std::abs(current))) {
        sol.omega = candidate;
        sol.polished = true;
      }
    }
  }

  sol.objective = f(sol.omega);
  if (sol.objective > zero_objective) {
    sol.omega.setZero();
    sol.objective = zero_objective;
  }
  return sol;
}

Solution admm_solve(const Vector& target, const VocabularyBank& bank, const Config& cfg) {
  return admm_solve(target, bank.embeddings(), cfg);
}

std::vector<Index> top_k_indices(const Vector& omega, int k) {
  std::vector<Index> idx;
  for (Index i = 0; i < omega.size(); ++i) {
    if (omega[i] > kPositiveThreshold) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return omega[a] > omega[b]; });
  if (k >= 0 && idx.size() > static_cast<std::size_t>(k)) idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<RankedPhrase> top_k_phrases(const Solution& solution, const VocabularyBank& bank,
                                        int k) {
  if (solution.omega.size() != bank.size()) {
    throw Error(ErrorCode::kShapeMismatch, "solution length differs from vocabulary size");
  }
  std::vector<RankedPhrase> out;
  for (Index i : top_k_indices(solution.omega, k)) {
    out.push_back({bank.phrases()[static_cast<std::size_t>(i)], i, solution.omega[i]});
  }
  return out;
}

}  // namespace textcam::sparse
