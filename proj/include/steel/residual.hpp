#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"
#include "steel/kernel.hpp"

namespace steel {

using QFunction = std::function<double(const Vector& s, const Vector& a)>;
using PolicyFunction = std::function<Vector(const Vector& s)>;

QFunction as_q_function(const ParamQ& q);
PolicyFunction as_policy_function(const ParamPolicy& policy);

/// Bellman residuals Y_it = r_it + gamma Q(s'_it, pi(s'_it)) - Q(s_it, a_it),
/// ordered like the dataset rows (and therefore like its Gram matrix).
struct ResidualVector {
  Vector values;
  std::string provenance;

  Index size() const { return values.size(); }
};

ResidualVector residual_vector(const TransitionDataset& dataset, const PolicyFunction& policy,
                               const QFunction& q, double gamma);
ResidualVector residual_vector(const TransitionDataset& dataset, const ParamPolicy& policy,
                               const ParamQ& q, double gamma);

/// Cholesky factorization of K + ridge * I. On failure the diagonal jitter
/// escalates by x10 from 1e-12 * trace / n up to 1e-6 * trace / n.
class RidgeSolver {
 public:
  RidgeSolver(const Matrix& k, double ridge);

  Vector solve(const Vector& rhs) const;
  Matrix solve(const Matrix& rhs) const;
  double ridge() const { return ridge_; }
  double jitter() const { return jitter_; }

 private:
  Eigen::LLT<Matrix> llt_;
  double ridge_ = 0.0;
  double jitter_ = 0.0;
};

/// Effective ridge used throughout: the per-sample averaged squared loss
/// makes the normal equations (K + n zeta I) alpha = Y.
inline double effective_ridge(Index n, double zeta) { return static_cast<double>(n) * zeta; }

/// Kernel ridge regression of residuals on state-action points.
struct KrrFit {
  Vector alpha;
  double zeta = 0.0;
  Points points;
  KernelSpec spec;
};

KrrFit krr_fit(const GramMatrix& gram, const Vector& y, double zeta);
double krr_eval(const KrrFit& fit, const VectorRef& z);

/// |T_hat Y|_H^2 = Y^T (K + n zeta I)^-1 K (K + n zeta I)^-1 Y.
double rkhs_norm_sq(const GramMatrix& gram, const Vector& y, double zeta);

/// Supremum over the RKHS ball of radius C of the empirical weighted mean of
/// Y, i.e. (C / n) sqrt(Y^T K Y).
double wball_sup(const GramMatrix& gram, const Vector& y, double radius);

/// supW + lambda2Mass * mmd * rkhsNorm.
double ope_error_bound(double sup_w, double lambda2_mass, double mmd, double rkhs_norm);

/// Gram matrix over the dataset's state-action points plus the cached
/// factorization of the ridge system. The two quadratic forms used by the
/// optimizer are exposed with their gradients in Y.
class KernelContext {
 public:
  KernelContext(GramMatrix gram, double zeta);

  const GramMatrix& gram() const { return gram_; }
  const Matrix& k() const { return gram_.entries; }
  double zeta() const { return zeta_; }
  Index size() const { return gram_.size(); }
  const RidgeSolver& solver() const { return *solver_; }

  /// M = (K + n zeta I)^-1 K (K + n zeta I)^-1, built on first use.
  const Matrix& smoother() const;

  /// (1/n^2) Y^T K Y.
  double wball_sq(const Vector& y) const;
  /// Y^T M Y.
  double rkhs_sq(const Vector& y) const;

 private:
  GramMatrix gram_;
  double zeta_;
  std::shared_ptr<RidgeSolver> solver_;
  mutable std::shared_ptr<Matrix> smoother_;
  std::shared_ptr<std::mutex> smoother_mutex_ = std::make_shared<std::mutex>();
};

/// Convenience: builds a KernelContext over the dataset's (s, a) rows.
KernelContext make_kernel_context(const TransitionDataset& dataset, const KernelSpec& spec,
                                  double zeta);

}  // namespace steel
