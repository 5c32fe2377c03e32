#include "steel/visitation.hpp"

#include <cmath>
#include <random>

namespace steel {

Vector LinearTransitionModel::mean_next(const VectorRef& s, const VectorRef& a) const {
  Vector x(s.size() + a.size() + 1);
  x << s, a, 1.0;
  require(x.size() == weights.rows(), "transition model: dimension mismatch");
  return weights.transpose() * x;
}

LinearTransitionModel fit_linear_transition_model(const TransitionDataset& data, double ridge) {
  data.validate();
  require(ridge >= 0.0, "transition model: ridge must be >= 0");
  const Index n = data.size();
  const Index ds = data.state_dim();
  const Index da = data.action_dim();
  Matrix x(n, ds + da + 1);
  x.leftCols(ds) = data.states;
  x.middleCols(ds, da) = data.actions;
  x.col(ds + da).setOnes();
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += ridge * static_cast<double>(n);
  Eigen::LDLT<Matrix> ldlt(gram);
  require(ldlt.info() == Eigen::Success, "transition model: normal equations failed");
  const Matrix target = data.next_states;
  LinearTransitionModel model;
  model.weights = ldlt.solve(x.transpose() * target);
  const Matrix resid = target - x * model.weights;
  model.noise_std = (resid.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  return model;
}

int visitation_horizon(double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  if (gamma == 0.0) return 1;
  return static_cast<int>(std::ceil(std::log(0.01) / std::log(gamma)));
}

WeightedSample visitation_sample(const Points& init_states, const ParamPolicy& policy,
                                 double gamma, const LinearTransitionModel* model,
                                 std::uint64_t seed) {
  require(init_states.rows() > 0, "visitation_sample: empty initial sample");
  const Index ds = init_states.cols();
  const Index da = policy.action_dim();
  WeightedSample out;
  if (gamma == 0.0) {
    out.points = hconcat(init_states, policy.act_rows(init_states));
    out.weights = Vector::Constant(init_states.rows(), 1.0 / static_cast<double>(init_states.rows()));
    return out;
  }
  require(model != nullptr, "visitation_sample: a transition model is required when gamma > 0");
  const int horizon = visitation_horizon(gamma);
  const Index m = init_states.rows();
  out.points.resize(m * horizon, ds + da);
  out.weights.resize(m * horizon);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Index row = 0;
  for (Index i = 0; i < m; ++i) {
    Vector s = row_vec(init_states, i);
    double w = 1.0 - gamma;
    for (int t = 0; t < horizon; ++t) {
      const Vector a = policy.act(s);
      out.points.row(row).head(ds) = s.transpose();
      out.points.row(row).tail(da) = a.transpose();
      out.weights(row) = w;
      ++row;
      Vector next = model->mean_next(s, a);
      for (Index k = 0; k < ds; ++k) next(k) += model->noise_std(k) * normal(rng);
      s = next;
      w *= gamma;
    }
  }
  out.weights /= out.weights.sum();
  return out;
}

}  // namespace steel
