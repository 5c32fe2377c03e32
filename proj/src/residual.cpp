#include "steel/residual.hpp"

#include <cmath>
#include <mutex>

namespace steel {

QFunction as_q_function(const ParamQ& q) {
  return [q](const Vector& s, const Vector& a) { return q.eval(s, a); };
}

PolicyFunction as_policy_function(const ParamPolicy& policy) {
  return [policy](const Vector& s) { return policy.act(s); };
}

ResidualVector residual_vector(const TransitionDataset& dataset, const PolicyFunction& policy,
                               const QFunction& q, double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, "residual_vector: gamma must lie in [0, 1)");
  const Index n = dataset.size();
  ResidualVector out;
  out.values.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Vector s = row_vec(dataset.states, i);
    const Vector a = row_vec(dataset.actions, i);
    double y = dataset.rewards(i) - q(s, a);
    if (gamma > 0.0) {
      const Vector s_next = row_vec(dataset.next_states, i);
      const Vector a_next = policy(s_next);
      require(a_next.size() == dataset.action_dim(), "residual_vector: policy action dim mismatch");
      y += gamma * q(s_next, a_next);
    }
    out.values(i) = y;
  }
  return out;
}

ResidualVector residual_vector(const TransitionDataset& dataset, const ParamPolicy& policy,
                               const ParamQ& q, double gamma) {
  require(q.state_dim() == dataset.state_dim() && q.action_dim() == dataset.action_dim(),
          "residual_vector: Q dims do not match the dataset");
  require(policy.state_dim() == dataset.state_dim() &&
              policy.action_dim() == dataset.action_dim(),
          "residual_vector: policy dims do not match the dataset");
  auto out = residual_vector(dataset, as_policy_function(policy), as_q_function(q), gamma);
  out.provenance = "param_policy/param_q";
  return out;
}

RidgeSolver::RidgeSolver(const Matrix& k, double ridge) : ridge_(ridge) {
  require(k.rows() == k.cols() && k.rows() > 0, "RidgeSolver: matrix must be square");
  require(ridge >= 0.0 && std::isfinite(ridge), "RidgeSolver: ridge must be >= 0");
  const Index n = k.rows();
  Matrix a = k;
  a.diagonal().array() += ridge;
  llt_.compute(a);
  if (llt_.info() == Eigen::Success) return;
  const double scale = k.trace() / static_cast<double>(n);
  for (double factor = 1e-12; factor <= 1e-6 * 1.0000001; factor *= 10.0) {
    jitter_ = factor * scale;
    Matrix b = a;
    b.diagonal().array() += jitter_;
    llt_.compute(b);
    if (llt_.info() == Eigen::Success) return;
  }
  throw Error("RidgeSolver: Cholesky failed after jitter escalation");
}

Vector RidgeSolver::solve(const Vector& rhs) const { return llt_.solve(rhs); }
Matrix RidgeSolver::solve(const Matrix& rhs) const { return llt_.solve(rhs); }

KrrFit krr_fit(const GramMatrix& gram, const Vector& y, double zeta) {
  require(zeta > 0.0, "krr_fit: zeta must be positive");
  require(y.size() == gram.size(), "krr_fit: residual length does not match the Gram matrix");
  RidgeSolver solver(gram.entries, effective_ridge(gram.size(), zeta));
  KrrFit fit;
  fit.alpha = solver.solve(y);
  fit.zeta = zeta;
  fit.points = gram.points;
  fit.spec = gram.spec;
  return fit;
}

double krr_eval(const KrrFit& fit, const VectorRef& z) {
  require(z.size() == fit.points.cols(), "krr_eval: dimension mismatch");
  double total = 0.0;
  for (Index i = 0; i < fit.points.rows(); ++i) {
    total += fit.alpha(i) * kernel_eval(fit.spec, row_vec(fit.points, i), z);
  }
  return total;
}

double rkhs_norm_sq(const GramMatrix& gram, const Vector& y, double zeta) {
  require(zeta > 0.0, "rkhs_norm_sq: zeta must be positive");
  require(y.size() == gram.size(), "rkhs_norm_sq: length mismatch");
  RidgeSolver solver(gram.entries, effective_ridge(gram.size(), zeta));
  const Vector alpha = solver.solve(y);
  return std::max(0.0, alpha.dot(gram.entries * alpha));
}

double wball_sup(const GramMatrix& gram, const Vector& y, double radius) {
  require(radius > 0.0, "wball_sup: radius must be positive");
  require(y.size() == gram.size(), "wball_sup: length mismatch");
  const double quad = std::max(0.0, y.dot(gram.entries * y));
  return radius / static_cast<double>(gram.size()) * std::sqrt(quad);
}

double ope_error_bound(double sup_w, double lambda2_mass, double mmd, double rkhs_norm) {
  require(sup_w >= 0 && lambda2_mass >= 0 && mmd >= 0 && rkhs_norm >= 0,
          "ope_error_bound: inputs must be nonnegative");
  require(lambda2_mass <= 1.0, "ope_error_bound: lambda2 mass must be <= 1");
  return sup_w + lambda2_mass * mmd * rkhs_norm;
}

KernelContext::KernelContext(GramMatrix gram, double zeta)
    : gram_(std::move(gram)), zeta_(zeta) {
  require(zeta > 0.0, "KernelContext: zeta must be positive");
  solver_ = std::make_shared<RidgeSolver>(gram_.entries, effective_ridge(gram_.size(), zeta_));
}

const Matrix& KernelContext::smoother() const {
  std::lock_guard<std::mutex> lock(*smoother_mutex_);
  if (!smoother_) {
    const Index n = size();
    const Matrix inv = solver_->solve(Matrix(Matrix::Identity(n, n)));
    // inv * K = I - ridge * inv, so M needs a single matrix product.
    Matrix m = inv - (solver_->ridge() + solver_->jitter()) * (inv * inv);
    m = 0.5 * (m + m.transpose()).eval();
    smoother_ = std::make_shared<Matrix>(std::move(m));
  }
  return *smoother_;
}

double KernelContext::wball_sq(const Vector& y) const {
  const double n = static_cast<double>(size());
  return std::max(0.0, y.dot(gram_.entries * y)) / (n * n);
}

double KernelContext::rkhs_sq(const Vector& y) const {
  const Vector alpha = solver_->solve(y);
  return std::max(0.0, alpha.dot(gram_.entries * alpha));
}

KernelContext make_kernel_context(const TransitionDataset& dataset, const KernelSpec& spec,
                                  double zeta) {
  return KernelContext(gram(spec, dataset.state_actions()), zeta);
}

}  // namespace steel
