#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"

#include "steel/common.hpp"

namespace steel {

enum class FeatureKind { polynomial, random_fourier };

/// Deterministic smooth feature map R^d -> R^p.
///
/// polynomial(degree): every monomial of total degree <= degree, constant
/// term first, in graded order.
/// random_fourier(m, bandwidth, seed): sqrt(2/m) cos(W x + b) with W ~ N(0,
/// 1/bandwidth^2) and b ~ U[0, 2pi), frozen at construction from the seed.
class FeatureMap {
 public:
  FeatureMap() = default;

  static FeatureMap polynomial(Index input_dim, int degree);
  static FeatureMap random_fourier(Index input_dim, Index num_features, double bandwidth,
                                   std::uint64_t seed);

  FeatureKind kind() const { return kind_; }
  Index input_dim() const { return input_dim_; }
  Index output_dim() const { return output_dim_; }
  int degree() const { return degree_; }
  double bandwidth() const { return bandwidth_; }
  std::uint64_t seed() const { return seed_; }

  Vector features(const VectorRef& x) const;
  /// p x d Jacobian of the features with respect to the input.
  Matrix jacobian(const VectorRef& x) const;

  /// Features of every row of a point set, one row per point (n x p).
  Matrix features_rows(const Points& x) const;

  nlohmann::json to_json() const;
  static FeatureMap from_json(const nlohmann::json& j);

  bool operator==(const FeatureMap& other) const;

 private:
  FeatureKind kind_ = FeatureKind::polynomial;
  Index input_dim_ = 0;
  Index output_dim_ = 0;
  int degree_ = 0;
  double bandwidth_ = 1.0;
  std::uint64_t seed_ = 0;
  Eigen::MatrixXi exponents_;  // p x d, polynomial only
  Matrix frequencies_;         // m x d, random Fourier only
  Vector phases_;              // m
};

struct QGradient {
  Vector d_theta;
  Vector d_action;
};

/// Clipped linear-in-features Q-function over (s, a):
///   Q(s, a) = clip(scale(a) * theta . phi(s, a), -c, c)
/// with scale(a) = a_0 when `action_scaled` (demand-structured reward) and 1
/// otherwise.
class ParamQ {
 public:
  ParamQ() = default;
  ParamQ(FeatureMap map, Index state_dim, Index action_dim, double clip_bound,
         bool action_scaled = false);

  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }
  Index num_params() const { return map_.output_dim(); }
  double clip_bound() const { return clip_bound_; }
  bool action_scaled() const { return action_scaled_; }
  const FeatureMap& feature_map() const { return map_; }

  const Vector& theta() const { return theta_; }
  void set_theta(const Vector& theta);

  /// Unclipped value scale(a) * theta . phi(s, a).
  double raw(const VectorRef& s, const VectorRef& a) const;
  double eval(const VectorRef& s, const VectorRef& a) const;
  /// Gradients of the clipped value; both are zero at or beyond the clip band.
  QGradient grad(const VectorRef& s, const VectorRef& a) const;

  /// d raw / d theta, i.e. scale(a) * phi(s, a).
  Vector param_features(const VectorRef& s, const VectorRef& a) const;

  nlohmann::json to_json() const;
  static ParamQ from_json(const nlohmann::json& j);

 private:
  void check_dims(const VectorRef& s, const VectorRef& a) const;

  FeatureMap map_;
  Index state_dim_ = 0;
  Index action_dim_ = 0;
  double clip_bound_ = 1.0;
  bool action_scaled_ = false;
  Vector theta_;
};

/// Deterministic policy squashed into a box:
///   pi(s)_j = lo_j + (hi_j - lo_j) * sigmoid(psi_j . phi(s)).
/// Parameters flatten column-major: coordinate j owns psi(:, j).
class ParamPolicy {
 public:
  ParamPolicy() = default;
  ParamPolicy(FeatureMap map, Vector lo, Vector hi);

  Index state_dim() const { return map_.input_dim(); }
  Index action_dim() const { return lo_.size(); }
  Index num_params() const { return psi_.size(); }
  const FeatureMap& feature_map() const { return map_; }
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }

  const Matrix& psi() const { return psi_; }
  Vector params() const;
  void set_params(const Vector& flat);
  void set_psi(const Matrix& psi);

  Vector act(const VectorRef& s) const;
  Points act_rows(const Points& states) const;

  /// d pi / d psi as a dA x (p * dA) matrix.
  Matrix jacobian(const VectorRef& s) const;
  /// Vector-Jacobian product: (d pi / d psi)^T * upstream, flattened.
  Vector vjp(const VectorRef& s, const VectorRef& upstream) const;

  nlohmann::json to_json() const;
  static ParamPolicy from_json(const nlohmann::json& j);

 private:
  FeatureMap map_;
  Vector lo_, hi_;
  Matrix psi_;
};

/// max_i |(f(x + h e_i) - f(x - h e_i)) / (2h) - grad_i(x)|.
double finite_diff_check(const std::function<double(const Vector&)>& f,
                         const std::function<Vector(const Vector&)>& grad, const Vector& point,
                         double h);

inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

}  // namespace steel
