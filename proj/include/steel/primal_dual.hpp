#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"

namespace steel {

/// A constraint c(Y) - target <= 0 on the Bellman residual vector Y and the
/// learning rate of its multiplier. `evaluate` returns c(Y) and, when `grad`
/// is non-null, writes dc/dY into it. A zero learning rate pins the
/// multiplier at its initial value.
///
/// Quadratic constraints c(Y) = quad_scale * Y^T Q Y may also expose the
/// symmetric PSD matrix Q; the optimizer then preconditions theta steps with
/// the exact curvature and evaluates the constraint from cached forms.
struct ConstraintTerm {
  std::string name;
  std::function<double(const Vector& y, Vector* grad)> evaluate;
  double target = 0.0;
  double dual_lr = 0.0;
  std::shared_ptr<const Matrix> quad_form;
  double quad_scale = 1.0;
};

ConstraintTerm quadratic_constraint(std::string name, std::shared_ptr<const Matrix> q,
                                    double scale, double target, double dual_lr);

struct PrimalDualSettings {
  double gamma = 0.0;
  double lr_q = 1.0;
  double lr_pi = 1.0;
  int inner_q_steps = 5;
  int max_outer_iters = 300;
  double tol = 1e-6;
  double rho_max = 1e4;
  int polish_steps = 200;
  bool update_policy = true;
  bool precondition = true;
  /// Largest change of any Q value (batch, initial or next-state rows) a
  /// single theta step may make, as a fraction of the clip bound.
  double max_q_step_fraction = 0.1;
};

struct TraceEntry {
  double lagrangian = 0.0;
  double objective = 0.0;
  std::vector<double> constraints;  // c_j(Y) - target_j
  std::vector<double> rho;
};

/// Value and gradients of
///   L = (1 - gamma) mean_nu Q(s0, pi(s0)) + sum_j rho_j (c_j(Y) - target_j).
struct LagrangianParts {
  double value = 0.0;
  double objective = 0.0;
  Vector constraint_values;  // c_j(Y) - target_j
  Vector residuals;
  Vector grad_theta;
  Vector grad_psi;
  Vector grad_rho;
};

/// Lagrangian over a fixed batch, initial-state sample and constraint set.
/// Batch features phi(s, a) are cached at construction; features at
/// policy-chosen actions are cached per policy parameter vector.
class LagrangianModel {
 public:
  LagrangianModel(const TransitionDataset& data, const Points& init_states, double gamma,
                  ParamQ q_template, ParamPolicy policy_template,
                  std::vector<ConstraintTerm> constraints);

  /// Without clipping Y = r - G theta with G = F_b - gamma F_n, and each
  /// quadratic constraint is s (c0 - 2 theta^T b + theta^T A theta) with
  /// A = G^T Q G, b = G^T Q r, c0 = r^T Q r. Clipped rows enter as a
  /// low-rank correction through Q r and Q G. Entries of non-quadratic
  /// constraints are left empty.
  struct QuadraticForms {
    std::vector<Matrix> a;
    std::vector<Vector> b;
    std::vector<double> c0;
    std::vector<Vector> qr;
    std::vector<Matrix> qg;
  };

  struct PolicyCache {
    Vector psi;
    Points init_actions;
    Matrix init_features;  // m x p (scaled by a_0 when Q is action-scaled)
    Points next_actions;
    Matrix next_features;  // n x p, empty when gamma == 0
    std::shared_ptr<const QuadraticForms> quad;  // set by attach_quadratics
  };

  PolicyCache policy_cache(const Vector& psi) const;
  /// Precomputes the quadratic forms for this policy (O(n^2 p) per
  /// constraint). Only needed when gamma > 0; otherwise they are shared.
  void attach_quadratics(PolicyCache& cache) const;

  LagrangianParts evaluate(const Vector& theta, const PolicyCache& cache, const Vector& rho,
                           bool want_theta_grad, bool want_psi_grad) const;
  LagrangianParts evaluate(const Vector& theta, const Vector& psi, const Vector& rho,
                           bool want_theta_grad = true, bool want_psi_grad = true) const;

  /// Per-constraint theta curvature 2 s_j G^T Q_j G with dY/dtheta = -G,
  /// ignoring clipping. Empty matrices for non-quadratic constraints.
  std::vector<Matrix> curvature_parts(const PolicyCache& cache) const;

  /// max |phi . dir| over every row whose Q value enters the Lagrangian.
  double max_q_change(const PolicyCache& cache, const Vector& dir) const;

  Index num_params() const { return q_.num_params(); }
  Index num_constraints() const { return static_cast<Index>(constraints_.size()); }
  const std::vector<ConstraintTerm>& constraints() const { return constraints_; }
  const ParamQ& q_template() const { return q_; }
  const ParamPolicy& policy_template() const { return policy_; }
  double gamma() const { return gamma_; }

 private:
  QuadraticForms quadratic_forms(const Matrix* next_features) const;
  Vector q_values(const Matrix& features, const Vector& theta, std::vector<char>* active) const;

  TransitionDataset data_;
  Points init_states_;
  double gamma_;
  ParamQ q_;
  ParamPolicy policy_;
  std::vector<ConstraintTerm> constraints_;
  Matrix batch_features_;  // n x p
  std::vector<Matrix> quad_batch_;  // Q_j * batch_features_
  QuadraticForms static_quad_;      // gamma == 0 only
};

struct PrimalDualOutcome {
  Vector theta;
  Vector psi;
  Vector rho;
  std::vector<TraceEntry> trace;
  double lagrangian = 0.0;
  Index best_iteration = 0;
  bool converged = false;
};

/// Alternating primal-dual iterations: a few descent steps on theta, one
/// projected ascent step per multiplier, one ascent step on psi. Steps on
/// theta and psi start at the configured learning rate and backtrack until
/// the Lagrangian moves in the right direction. The outer iterate with the
/// largest Lagrangian is returned after a final descent polish on theta.
PrimalDualOutcome primal_dual_optimize(const LagrangianModel& model, Vector theta, Vector psi,
                                       Vector rho, const PrimalDualSettings& settings);

}  // namespace steel
