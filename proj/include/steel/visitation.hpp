#pragma once

#include <cstdint>

#include "steel/data.hpp"
#include "steel/funcapprox.hpp"

namespace steel {

/// s' = W^T [s; a; 1] + eta, eta ~ N(0, diag(noise_std^2)), fitted per
/// state coordinate by ridge least squares.
struct LinearTransitionModel {
  Matrix weights;   // (dS + dA + 1) x dS
  Vector noise_std; // dS

  Vector mean_next(const VectorRef& s, const VectorRef& a) const;
};

LinearTransitionModel fit_linear_transition_model(const TransitionDataset& data,
                                                  double ridge = 1e-6);

/// Weighted (s, a) sample.
struct WeightedSample {
  Points points;
  Vector weights;  // nonnegative, sums to one
};

/// Horizon ceil(log(0.01) / log(gamma)); 1 when gamma == 0.
int visitation_horizon(double gamma);

/// Sample from the discounted visitation of `policy`: for gamma == 0 the
/// points (s0, pi(s0)) with equal weights; otherwise model rollouts from
/// every initial state, step t weighted by (1 - gamma) gamma^t and the
/// truncated weights renormalized.
WeightedSample visitation_sample(const Points& init_states, const ParamPolicy& policy,
                                 double gamma, const LinearTransitionModel* model,
                                 std::uint64_t seed);

}  // namespace steel
