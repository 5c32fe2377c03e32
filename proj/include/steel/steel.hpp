#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"
#include "steel/kernel.hpp"
#include "steel/primal_dual.hpp"
#include "steel/residual.hpp"

namespace steel {

struct SteelConfig {
  double gamma = 0.0;
  double zeta = 1e-3;
  /// Radii of the two uncertainty sets; unset means the default schedule.
  std::optional<double> eps1;
  std::optional<double> eps2;
  double kappa1 = 1.0;
  double kappa2 = 1.0;
  double w_radius = 1.0;  // C, radius of the weight-function ball

  double lr_q = 1.0;
  double lr_pi = 1.0;
  double lr_rho1 = 1.0;
  double lr_rho2 = 1.0;
  int inner_q_steps = 5;
  int max_outer_iters = 300;
  double tol = 1e-6;
  double rho_max = 1e4;
  int polish_steps = 200;
  bool precondition = true;

  Index nystrom_cap = 2000;
  std::uint64_t seed = 0;
  Points init_states;              // draws from nu
  std::optional<double> bandwidth; // kernel bandwidth; median heuristic when unset
  bool two_phase_c = false;

  ParamQ q_class;
  ParamPolicy policy_class;
  std::optional<Vector> init_theta;
  std::optional<Vector> init_psi;

  void validate() const;
};

struct DualVars {
  double rho1 = 0.0;
  double rho2 = 0.0;
};

struct SteelResult {
  ParamPolicy policy;
  ParamQ q;
  DualVars duals;
  std::vector<TraceEntry> trace;
  double pessimistic_value = 0.0;
  Index best_iteration = 0;
  bool converged = false;
  double eps1 = 0.0;
  double eps2 = 0.0;
  double w_radius = 1.0;
  double bandwidth = 0.0;
  Index n_used = 0;

  nlohmann::json to_json() const;
};

/// eps1 = kappa1 log(n) / sqrt(n), eps2 = kappa2 (log(n) / sqrt(n))^(1/3).
std::pair<double, double> default_radii(Index n, double kappa1 = 1.0, double kappa2 = 1.0);

/// (1 - gamma) mean over the initial-state sample of Q(s0, pi(s0)).
double policy_value_estimate(const QFunction& q, const PolicyFunction& policy,
                             const Points& init_states, double gamma);
double policy_value_estimate(const ParamQ& q, const ParamPolicy& policy, const Points& init_states,
                             double gamma);

/// Unsquared uncertainty-set statistics: (C / n) sqrt(Y^T K Y) and
/// sqrt(Y^T M Y). Membership in the i-th set means value <= eps_i.
double omega1_value(const TransitionDataset& data, const GramMatrix& gram,
                    const PolicyFunction& policy, const QFunction& q, double gamma, double c);
double omega2_value(const TransitionDataset& data, const GramMatrix& gram,
                    const PolicyFunction& policy, const QFunction& q, double gamma, double zeta);

/// Dataset after the Nystrom cap, with its kernel and factorized ridge system.
struct PreparedBatch {
  TransitionDataset data;
  KernelSpec spec;
  std::shared_ptr<const KernelContext> kernel;
};

/// Applies the cap (seeded uniform subsample without replacement, rows kept
/// in their original order) and builds the kernel context.
PreparedBatch prepare_batch(const TransitionDataset& dataset, const SteelConfig& cfg);

/// The two squared constraints with targets eps1^2 and eps2^2:
///   (C^2 / n^2) Y^T K Y <= eps1^2,   Y^T M Y <= eps2^2.
std::vector<ConstraintTerm> steel_constraints(const PreparedBatch& batch, double eps1, double eps2,
                                              double c, double lr_rho1, double lr_rho2);

/// Lagrangian value and gradients at (theta, psi, rho) on a prepared batch,
/// using the radii and C from the config (default schedule when unset).
LagrangianParts lagrangian(const PreparedBatch& batch, const Vector& theta, const Vector& psi,
                           const DualVars& rho, const SteelConfig& cfg);

/// Runs the primal-dual optimizer for an arbitrary constraint set on a
/// prepared batch, starting from the config's initial parameters and the
/// given multipliers (zero when unset).
PrimalDualOutcome run_primal_dual(const PreparedBatch& batch, const SteelConfig& cfg,
                                  std::vector<ConstraintTerm> constraints,
                                  std::optional<Vector> init_rho = std::nullopt);

SteelResult steel_optimize(const TransitionDataset& dataset, const SteelConfig& cfg);
/// Same, on a batch already prepared with `prepare_batch(dataset, cfg)`.
SteelResult steel_optimize(const PreparedBatch& batch, const SteelConfig& cfg);

}  // namespace steel
