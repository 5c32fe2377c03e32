#pragma once

#include <cstdint>
#include <optional>

#include "json.hpp"

#include "steel/steel.hpp"
#include "steel/visitation.hpp"

namespace steel {

struct AdaptiveConfig {
  SteelConfig steel;
  double wmax = 20.0;
  Index grid_points = 4096;
  /// Stage-0 radius. When unset: stage0_eps2_factor times |T_hat r|_H (the
  /// residual norm at Q = 0) if a factor is given, else the eps2 of the
  /// STEEL config. Large factors admit Q = -clip and make stage 0 vacuous.
  std::optional<double> stage0_eps2;
  std::optional<double> stage0_eps2_factor;
  /// KDE bandwidth; default is the kernel bandwidth times n^(-1/(d+4)).
  std::optional<double> kde_bandwidth;

  void validate() const;
};

/// Lebesgue-decomposition estimate of the target visitation measure against
/// the batch. The weight function is the truncated KDE ratio
///   omega(z) = min(d_target(z) / d_batch(z), wmax).
struct DecompositionEstimate {
  double lambda1_mass = 0.0;
  double lambda2_mass = 1.0;
  double delta_hat = 0.0;
  WeightedSample lambda1_sample;  // batch points weighted by omega
  WeightedSample lambda2_sample;  // target points, singular-part weights
  Points batch_points;
  WeightedSample target;
  double kde_bandwidth = 0.0;
  double wmax = 20.0;

  double batch_density(const VectorRef& z) const;
  double target_density(const VectorRef& z) const;
  double omega(const VectorRef& z) const;

  nlohmann::json to_json() const;
};

/// Stage 0: the optimizer with rho1 pinned at 0 and a large eps2.
SteelResult stage0(const PreparedBatch& batch, const AdaptiveConfig& cfg);
SteelResult stage0(const TransitionDataset& dataset, const AdaptiveConfig& cfg);
/// The stage-0 radius actually used on this batch.
double stage0_radius(const PreparedBatch& batch, const AdaptiveConfig& cfg);

DecompositionEstimate estimate_decomposition(const PreparedBatch& batch, const ParamPolicy& policy,
                                             double gamma, const Points& init_states,
                                             const AdaptiveConfig& cfg);

struct Epsilon0 {
  double raw = 0.0;
  double value = 0.0;  // max(raw, floor)
  double floor = 0.0;
  double weighted_term = 0.0;   // lambda1 * omega-weighted residual mean
  double batch_term = 0.0;      // lambda2 * batch residual mean
  double rkhs_term = 0.0;       // lambda2 * delta * |T_hat Y|
};

/// Right-hand side of the adaptive constraint at (policy, q), floored at
/// 1e-6 R_max / (1 - gamma).
Epsilon0 epsilon0(const PreparedBatch& batch, const ParamPolicy& policy, const ParamQ& q,
                  const DecompositionEstimate& decomp, double gamma);

/// Adaptive constraint value lambda1 w^T Y + lambda2 mean(Y) +
/// lambda2 delta |T_hat Y|_H at (policy, q).
double adaptive_constraint_value(const PreparedBatch& batch, const ParamPolicy& policy,
                                 const ParamQ& q, const DecompositionEstimate& decomp,
                                 double gamma);

ConstraintTerm adaptive_constraint(const PreparedBatch& batch, const DecompositionEstimate& decomp,
                                   double eps0, double dual_lr);

struct AdaptiveResult {
  SteelResult stage0;
  DecompositionEstimate decomposition;
  Epsilon0 eps0;
  SteelResult result;

  nlohmann::json to_json() const;
};

AdaptiveResult adaptive_steel(const TransitionDataset& dataset, const AdaptiveConfig& cfg);

}  // namespace steel
