#pragma once

#include <functional>
#include <optional>

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"
#include "steel/steel.hpp"

namespace steel {

/// The pessimistic learner on single-step data: steel_optimize on the
/// one-step trajectories. The config's gamma must be 0.
SteelResult bandit_steel(const BanditDataset& data, const SteelConfig& cfg);

/// Ridge least squares of the rewards on the Q-class features:
/// theta = (F^T F + n ridge I)^-1 F^T r.
ParamQ fit_reward_regression(const BanditDataset& data, const ParamQ& reward_class,
                             double ridge = 1e-10);

struct PolicySearchSettings {
  double lr_pi = 1.0;
  int max_iters = 300;
  double tol = 1e-8;
  std::optional<Vector> init_psi;
};

struct RegressionResult {
  ParamPolicy policy;
  ParamQ reward;
};

/// Fits r_hat by ridge regression and returns the policy maximizing
/// mean over the initial states of r_hat(s, pi(s)), found by the same
/// backtracking gradient ascent the pessimistic learner uses.
RegressionResult regression_baseline(const BanditDataset& data, const ParamQ& reward_class,
                                     const ParamPolicy& policy_class, const Points& init_states,
                                     const PolicySearchSettings& settings = {},
                                     double ridge = 1e-10);

/// Density of action a at state s.
using PropensityFn = std::function<double(const Vector& a, const Vector& s)>;

/// a | s ~ N(W [s; 1], diag(std^2)), fitted by least squares with a
/// homoscedastic residual variance per action coordinate.
struct GaussianPropensity {
  Matrix weights;  // (dS + 1) x dA
  Vector std;

  double operator()(const Vector& a, const Vector& s) const;
};

GaussianPropensity fit_gaussian_propensity(const BanditDataset& data);

/// Median heuristic on the actions times n^(-1 / (4 + dA)).
double default_smoothing_bandwidth(const BanditDataset& data, std::uint64_t seed = 0);

/// V_hat(pi) = (1/n) sum_i K_h(a_i - pi(s_i)) r_i / p(a_i | s_i) with a
/// gaussian product kernel; propensities below 1e-12 are clipped there.
class KernelSmoothingObjective {
 public:
  KernelSmoothingObjective(const BanditDataset& data, const PropensityFn& propensity,
                           double bandwidth);

  double value(const ParamPolicy& policy) const;
  Vector gradient(const ParamPolicy& policy) const;
  Index clipped_propensities() const { return clipped_; }
  double bandwidth() const { return h_; }

 private:
  double kernel(const Vector& diff) const;

  BanditDataset data_;
  Vector weights_;  // r_i / p_i
  double h_;
  Index clipped_ = 0;
};

struct KernelSmoothingResult {
  ParamPolicy policy;
  double bandwidth = 0.0;
  Index clipped_propensities = 0;
  double value_estimate = 0.0;
};

/// Maximizes V_hat by backtracking gradient ascent. Without a propensity
/// the gaussian fit above is used; without a bandwidth the default rule.
KernelSmoothingResult kernel_smoothing_baseline(const BanditDataset& data,
                                                const ParamPolicy& policy_class,
                                                std::optional<PropensityFn> propensity = {},
                                                std::optional<double> bandwidth = {},
                                                const PolicySearchSettings& settings = {});

/// Linear demand surrogate d(s, a) = clip(c^T [s; a s], 0, 1) fitted by
/// least squares of the acceptance indicator.
struct DemandSurrogate {
  Vector coef;

  double demand(const VectorRef& s, double price) const;
  /// Mean over states of price * demand at the policy's price.
  double revenue(const ParamPolicy& policy, const Points& states) const;
};

DemandSurrogate fit_demand_surrogate(const Points& states, const Vector& prices,
                                     const Vector& accepted, double ridge = 1e-8);

}  // namespace steel
