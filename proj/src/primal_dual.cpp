#include "steel/primal_dual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace steel {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 40;
constexpr int kConvergenceWindow = 10;

Matrix param_feature_rows(const ParamQ& q, const Points& states, const Points& actions) {
  Matrix out(states.rows(), q.num_params());
  for (Index i = 0; i < states.rows(); ++i) {
    out.row(i) = q.param_features(row_vec(states, i), row_vec(actions, i)).transpose();
  }
  return out;
}

// Multiplier-weighted sum skipping inactive multipliers, so an infinite
// target with rho == 0 contributes nothing instead of NaN.
double weighted_constraint_sum(const Vector& rho, const Vector& cv) {
  double total = 0.0;
  for (Index j = 0; j < rho.size(); ++j) {
    if (rho(j) != 0.0) total += rho(j) * cv(j);
  }
  return total;
}

}  // namespace

ConstraintTerm quadratic_constraint(std::string name, std::shared_ptr<const Matrix> q,
                                    double scale, double target, double dual_lr) {
  require(q && q->rows() == q->cols(), "quadratic_constraint: square matrix required");
  ConstraintTerm term;
  term.name = std::move(name);
  term.target = target;
  term.dual_lr = dual_lr;
  term.quad_form = q;
  term.quad_scale = scale;
  term.evaluate = [q, scale](const Vector& y, Vector* grad) {
    const Vector qy = (*q) * y;
    if (grad) *grad = 2.0 * scale * qy;
    return scale * y.dot(qy);
  };
  return term;
}

LagrangianModel::LagrangianModel(const TransitionDataset& data, const Points& init_states,
                                 double gamma, ParamQ q_template, ParamPolicy policy_template,
                                 std::vector<ConstraintTerm> constraints)
    : data_(data),
      init_states_(init_states),
      gamma_(gamma),
      q_(std::move(q_template)),
      policy_(std::move(policy_template)),
      constraints_(std::move(constraints)) {
  data_.validate();
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(init_states_.rows() > 0, "initial state sample is empty");
  require(init_states_.cols() == data_.state_dim(), "initial states have the wrong dimension");
  require(q_.state_dim() == data_.state_dim() && q_.action_dim() == data_.action_dim(),
          "Q class dims do not match the dataset");
  require(policy_.state_dim() == data_.state_dim() &&
              policy_.action_dim() == data_.action_dim(),
          "policy class dims do not match the dataset");
  batch_features_ = param_feature_rows(q_, data_.states, data_.actions);
  for (const auto& term : constraints_) {
    require(static_cast<bool>(term.evaluate), "constraint '" + term.name + "' has no evaluator");
    if (term.quad_form) {
      require(term.quad_form->rows() == data_.size(),
              "constraint '" + term.name + "' has the wrong size");
      quad_batch_.push_back((*term.quad_form) * batch_features_);
    } else {
      quad_batch_.emplace_back();
    }
  }
  if (gamma_ == 0.0) static_quad_ = quadratic_forms(nullptr);
}

LagrangianModel::QuadraticForms LagrangianModel::quadratic_forms(
    const Matrix* next_features) const {
  const std::size_t nc = constraints_.size();
  QuadraticForms out;
  out.a.resize(nc);
  out.b.resize(nc);
  out.c0.assign(nc, 0.0);
  out.qr.resize(nc);
  out.qg.resize(nc);
  for (std::size_t j = 0; j < nc; ++j) {
    const auto& term = constraints_[j];
    if (!term.quad_form) continue;
    const Matrix& q = *term.quad_form;
    // Q G reuses the cached Q F_b.
    Matrix g = batch_features_;
    Matrix qg = quad_batch_[j];
    if (next_features && gamma_ > 0.0) {
      g -= gamma_ * (*next_features);
      qg.noalias() -= gamma_ * (q * (*next_features));
    }
    const Matrix a = g.transpose() * qg;
    out.a[j] = 0.5 * (a + a.transpose());
    out.qr[j] = q * data_.rewards;
    out.b[j] = qg.transpose() * data_.rewards;
    out.c0[j] = data_.rewards.dot(out.qr[j]);
    out.qg[j] = std::move(qg);
  }
  return out;
}

void LagrangianModel::attach_quadratics(PolicyCache& cache) const {
  if (gamma_ == 0.0) return;
  cache.quad = std::make_shared<const QuadraticForms>(quadratic_forms(&cache.next_features));
}

std::vector<Matrix> LagrangianModel::curvature_parts(const PolicyCache& cache) const {
  QuadraticForms local;
  const QuadraticForms* forms = &static_quad_;
  if (gamma_ > 0.0) {
    if (!cache.quad) local = quadratic_forms(&cache.next_features);
    forms = cache.quad ? cache.quad.get() : &local;
  }
  std::vector<Matrix> parts(constraints_.size());
  for (std::size_t j = 0; j < constraints_.size(); ++j) {
    if (!constraints_[j].quad_form) continue;
    parts[j] = 2.0 * constraints_[j].quad_scale * forms->a[j];
  }
  return parts;
}

double LagrangianModel::max_q_change(const PolicyCache& cache, const Vector& dir) const {
  double out = (batch_features_ * dir).cwiseAbs().maxCoeff();
  out = std::max(out, (cache.init_features * dir).cwiseAbs().maxCoeff());
  if (gamma_ > 0.0) out = std::max(out, (cache.next_features * dir).cwiseAbs().maxCoeff());
  return out;
}

LagrangianModel::PolicyCache LagrangianModel::policy_cache(const Vector& psi) const {
  ParamPolicy pi = policy_;
  pi.set_params(psi);
  PolicyCache cache;
  cache.psi = psi;
  cache.init_actions = pi.act_rows(init_states_);
  cache.init_features = param_feature_rows(q_, init_states_, cache.init_actions);
  if (gamma_ > 0.0) {
    cache.next_actions = pi.act_rows(data_.next_states);
    cache.next_features = param_feature_rows(q_, data_.next_states, cache.next_actions);
  }
  return cache;
}

Vector LagrangianModel::q_values(const Matrix& features, const Vector& theta,
                                 std::vector<char>* active) const {
  Vector raw = features * theta;
  const double c = q_.clip_bound();
  if (active) active->assign(static_cast<std::size_t>(raw.size()), 0);
  for (Index i = 0; i < raw.size(); ++i) {
    if (std::abs(raw(i)) < c) {
      if (active) (*active)[static_cast<std::size_t>(i)] = 1;
    } else {
      raw(i) = std::clamp(raw(i), -c, c);
    }
  }
  return raw;
}

LagrangianParts LagrangianModel::evaluate(const Vector& theta, const PolicyCache& cache,
                                          const Vector& rho, bool want_theta_grad,
                                          bool want_psi_grad) const {
  require(theta.size() == q_.num_params(), "Lagrangian: theta length mismatch");
  require(rho.size() == num_constraints(), "Lagrangian: rho length mismatch");
  const Index n = data_.size();
  const Index m = init_states_.rows();
  const double discount_weight = 1.0 - gamma_;

  std::vector<char> active_batch, active_init, active_next;
  const Vector q_batch = q_values(batch_features_, theta, &active_batch);
  const Vector q_init = q_values(cache.init_features, theta, &active_init);
  Vector q_next;
  LagrangianParts out;
  out.residuals = data_.rewards - q_batch;
  if (gamma_ > 0.0) {
    q_next = q_values(cache.next_features, theta, &active_next);
    out.residuals += gamma_ * q_next;
  }
  out.objective = discount_weight * q_init.mean();

  // Quadratic constraints come from the cached forms plus a correction on
  // the clipped rows C: Y = Y0 + delta with Y0 = r - G theta unclipped.
  const QuadraticForms* forms = gamma_ > 0.0 ? cache.quad.get() : &static_quad_;
  // The psi gradient needs dL/dY explicitly when next-state actions matter.
  const bool need_dy = want_psi_grad && gamma_ > 0.0;
  std::vector<Index> clipped;
  Vector delta_c;
  Matrix e_c;  // rows of G that clipping removes from dY/dtheta
  if (forms && !need_dy) {
    for (Index i = 0; i < n; ++i) {
      const bool cb = !active_batch[static_cast<std::size_t>(i)];
      const bool cn = gamma_ > 0.0 && !active_next[static_cast<std::size_t>(i)];
      if (cb || cn) clipped.push_back(i);
    }
    if (4 * static_cast<Index>(clipped.size()) > n) forms = nullptr;
  }
  const bool use_forms = forms && !need_dy;
  if (use_forms && !clipped.empty()) {
    const Index nc = static_cast<Index>(clipped.size());
    delta_c.resize(nc);
    e_c = Matrix::Zero(nc, theta.size());
    for (Index k = 0; k < nc; ++k) {
      const Index i = clipped[static_cast<std::size_t>(k)];
      const double raw_b = batch_features_.row(i).dot(theta);
      double d = raw_b - q_batch(i);
      if (!active_batch[static_cast<std::size_t>(i)]) e_c.row(k) = batch_features_.row(i);
      if (gamma_ > 0.0) {
        const double raw_n = cache.next_features.row(i).dot(theta);
        d -= gamma_ * (raw_n - q_next(i));
        if (!active_next[static_cast<std::size_t>(i)]) {
          e_c.row(k) -= gamma_ * cache.next_features.row(i);
        }
      }
      delta_c(k) = d;
    }
  }

  const bool need_upstream = want_theta_grad || want_psi_grad;
  out.constraint_values.resize(num_constraints());
  Vector upstream = Vector::Zero(n);
  Vector direct_theta;
  for (Index j = 0; j < num_constraints(); ++j) {
    const auto& term = constraints_[static_cast<std::size_t>(j)];
    const auto sj = static_cast<std::size_t>(j);
    const bool use_grad = need_upstream && rho(j) != 0.0;
    if (use_forms && term.quad_form) {
      const Vector at = forms->a[sj] * theta;
      double quad = forms->c0[sj] - 2.0 * theta.dot(forms->b[sj]) + theta.dot(at);
      // G^T Q Y, built up alongside the value.
      Vector gqy = forms->b[sj] - at;
      if (!clipped.empty()) {
        const Index nc = static_cast<Index>(clipped.size());
        const Matrix& q = *term.quad_form;
        Vector qy0_c(nc), qdelta_c(nc);
        Matrix qg_c(nc, theta.size());
        for (Index k = 0; k < nc; ++k) {
          const Index i = clipped[static_cast<std::size_t>(k)];
          qg_c.row(k) = forms->qg[sj].row(i);
          qy0_c(k) = forms->qr[sj](i) - qg_c.row(k).dot(theta);
          double acc = 0.0;
          for (Index l = 0; l < nc; ++l) acc += q(i, clipped[static_cast<std::size_t>(l)]) * delta_c(l);
          qdelta_c(k) = acc;
        }
        quad += 2.0 * delta_c.dot(qy0_c) + delta_c.dot(qdelta_c);
        // dY/dtheta = -(G - E_C) on the clipped rows.
        gqy += qg_c.transpose() * delta_c;
        gqy -= e_c.transpose() * (qy0_c + qdelta_c);
      }
      out.constraint_values(j) = term.quad_scale * std::max(0.0, quad) - term.target;
      if (use_grad && want_theta_grad) {
        const Vector g = (-2.0 * term.quad_scale * rho(j)) * gqy;
        if (direct_theta.size() == 0) direct_theta = g; else direct_theta += g;
      }
      continue;
    }
    Vector grad;
    const double c = term.evaluate(out.residuals, use_grad ? &grad : nullptr);
    out.constraint_values(j) = c - term.target;
    if (use_grad) upstream += rho(j) * grad;
  }
  out.value = out.objective + weighted_constraint_sum(rho, out.constraint_values);
  out.grad_rho = out.constraint_values;

  if (want_theta_grad) {
    Vector w_init(m), w_batch(n);
    for (Index j = 0; j < m; ++j) {
      w_init(j) = active_init[static_cast<std::size_t>(j)] ? discount_weight / static_cast<double>(m)
                                                            : 0.0;
    }
    for (Index i = 0; i < n; ++i) {
      w_batch(i) = active_batch[static_cast<std::size_t>(i)] ? -upstream(i) : 0.0;
    }
    out.grad_theta = cache.init_features.transpose() * w_init +
                     batch_features_.transpose() * w_batch;
    if (gamma_ > 0.0) {
      Vector w_next(n);
      for (Index i = 0; i < n; ++i) {
        w_next(i) = active_next[static_cast<std::size_t>(i)] ? gamma_ * upstream(i) : 0.0;
      }
      out.grad_theta += cache.next_features.transpose() * w_next;
    }
    if (direct_theta.size() > 0) out.grad_theta += direct_theta;
  }

  if (want_psi_grad) {
    ParamQ q = q_;
    q.set_theta(theta);
    ParamPolicy pi = policy_;
    pi.set_params(cache.psi);
    out.grad_psi = Vector::Zero(pi.num_params());
    for (Index j = 0; j < m; ++j) {
      if (!active_init[static_cast<std::size_t>(j)]) continue;
      const Vector s = row_vec(init_states_, j);
      const QGradient g = q.grad(s, row_vec(cache.init_actions, j));
      out.grad_psi += (discount_weight / static_cast<double>(m)) * pi.vjp(s, g.d_action);
    }
    if (gamma_ > 0.0) {
      for (Index i = 0; i < n; ++i) {
        if (!active_next[static_cast<std::size_t>(i)] || upstream(i) == 0.0) continue;
        const Vector s = row_vec(data_.next_states, i);
        const QGradient g = q.grad(s, row_vec(cache.next_actions, i));
        out.grad_psi += (gamma_ * upstream(i)) * pi.vjp(s, g.d_action);
      }
    }
  }
  return out;
}

LagrangianParts LagrangianModel::evaluate(const Vector& theta, const Vector& psi,
                                          const Vector& rho, bool want_theta_grad,
                                          bool want_psi_grad) const {
  return evaluate(theta, policy_cache(psi), rho, want_theta_grad, want_psi_grad);
}

namespace {

// Preconditioner sum_j rho_j H_j plus a small relative damping. Returns
// false when no quadratic constraint is active.
bool build_preconditioner(const std::vector<Matrix>& parts, const Vector& rho,
                          Eigen::LDLT<Matrix>& out) {
  Matrix h;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].size() == 0 || rho(static_cast<Index>(j)) <= 0.0) continue;
    if (h.size() == 0) h = Matrix::Zero(parts[j].rows(), parts[j].cols());
    h += rho(static_cast<Index>(j)) * parts[j];
  }
  if (h.size() == 0) return false;
  const double scale = h.trace() / static_cast<double>(h.rows());
  if (!(scale > 0.0) || !std::isfinite(scale)) return false;
  h.diagonal().array() += 1e-8 * scale;
  out.compute(h);
  return out.info() == Eigen::Success;
}

// Backtracking descent on theta for fixed (psi, rho), optionally along the
// preconditioned direction. Updates theta and the step size and returns the
// last evaluation (with theta gradient).
LagrangianParts descend_theta(const LagrangianModel& model,
                              const LagrangianModel::PolicyCache& cache, const Vector& rho,
                              const Eigen::LDLT<Matrix>* precond, Vector& theta,
                              double max_step, double max_q_change, double& step, int steps,
                              LagrangianParts parts) {
  for (int s = 0; s < steps; ++s) {
    Vector dir = precond ? Vector(precond->solve(parts.grad_theta)) : parts.grad_theta;
    double slope = parts.grad_theta.dot(dir);
    if (!(slope > 0.0) || !std::isfinite(slope)) {
      dir = parts.grad_theta;
      slope = dir.squaredNorm();
    }
    if (!(slope > 0.0)) break;
    // Preconditioned steps start from the full Newton step; plain gradient
    // steps reuse the last accepted length.
    double eta = precond ? max_step : std::min(max_step, 2.0 * step);
    if (!precond) {
      // Without curvature the model is linear in theta and a long step
      // can park every Q value in the clipped region.
      const double reach = model.max_q_change(cache, dir);
      if (reach > 0.0) eta = std::min(eta, max_q_change / reach);
    }
    bool accepted = false;
    for (int b = 0; b < kMaxBacktracks; ++b) {
      const Vector trial = theta - eta * dir;
      LagrangianParts tp = model.evaluate(trial, cache, rho, true, false);
      if (std::isfinite(tp.value) && tp.value <= parts.value - kArmijo * eta * slope) {
        theta = trial;
        parts = std::move(tp);
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    step = eta;
    if (!accepted) break;
  }
  return parts;
}

}  // namespace

PrimalDualOutcome primal_dual_optimize(const LagrangianModel& model, Vector theta, Vector psi,
                                       Vector rho, const PrimalDualSettings& s) {
  require(s.inner_q_steps >= 0 && s.max_outer_iters >= 1, "invalid iteration budget");
  require(s.lr_q >= 0 && s.lr_pi >= 0 && s.rho_max > 0, "invalid learning rates");
  require(s.max_q_step_fraction > 0, "invalid Q step safeguard");
  require((rho.array() >= 0).all(), "multipliers must start nonnegative");
  rho = rho.cwiseMin(s.rho_max);

  PrimalDualOutcome out;
  double q_step = s.lr_q;
  double pi_step = s.lr_pi;
  auto cache = model.policy_cache(psi);
  model.attach_quadratics(cache);
  std::vector<Matrix> curvature;
  if (s.precondition && s.lr_q > 0.0) curvature = model.curvature_parts(cache);
  Eigen::LDLT<Matrix> precond;
  const double q_cap = s.max_q_step_fraction * model.q_template().clip_bound();
  double best = -std::numeric_limits<double>::infinity();
  Vector best_theta = theta, best_psi = psi, best_rho = rho;

  for (int k = 0; k < s.max_outer_iters; ++k) {
    LagrangianParts parts = model.evaluate(theta, cache, rho, true, false);
    if (s.lr_q > 0.0) {
      const bool use_pc = s.precondition && build_preconditioner(curvature, rho, precond);
      parts = descend_theta(model, cache, rho, use_pc ? &precond : nullptr, theta, s.lr_q,
                            q_cap, q_step, s.inner_q_steps, std::move(parts));
    }
    if (!std::isfinite(parts.value)) {
      throw Error("primal-dual: non-finite Lagrangian at iteration " + std::to_string(k));
    }

    TraceEntry entry;
    entry.lagrangian = parts.value;
    entry.objective = parts.objective;
    entry.constraints.assign(parts.constraint_values.data(),
                             parts.constraint_values.data() + parts.constraint_values.size());
    entry.rho.assign(rho.data(), rho.data() + rho.size());
    out.trace.push_back(std::move(entry));
    if (parts.value > best) {
      best = parts.value;
      best_theta = theta;
      best_psi = psi;
      best_rho = rho;
      out.best_iteration = k;
    }

    const auto& trace = out.trace;
    if (static_cast<int>(trace.size()) > kConvergenceWindow) {
      const double now = trace.back().lagrangian;
      const double then = trace[trace.size() - 1 - kConvergenceWindow].lagrangian;
      if (std::abs(now - then) <= s.tol * std::max(1.0, std::abs(now))) {
        out.converged = true;
        break;
      }
    }

    for (Index j = 0; j < rho.size(); ++j) {
      const double lr = model.constraints()[static_cast<std::size_t>(j)].dual_lr;
      if (lr <= 0.0) continue;
      const double next = rho(j) + lr * parts.constraint_values(j);
      rho(j) = std::isnan(next) ? 0.0 : std::clamp(next, 0.0, s.rho_max);
    }

    if (s.update_policy && s.lr_pi > 0.0) {
      const LagrangianParts pp = model.evaluate(theta, cache, rho, false, true);
      const double gnorm2 = pp.grad_psi.squaredNorm();
      if (gnorm2 > 0.0 && std::isfinite(gnorm2)) {
        double eta = std::min(s.lr_pi, 2.0 * pi_step);
        for (int b = 0; b < kMaxBacktracks; ++b) {
          const Vector trial = psi + eta * pp.grad_psi;
          auto trial_cache = model.policy_cache(trial);
          const double tv = model.evaluate(theta, trial_cache, rho, false, false).value;
          if (std::isfinite(tv) && tv >= pp.value + kArmijo * eta * gnorm2) {
            psi = trial;
            cache = std::move(trial_cache);
            model.attach_quadratics(cache);
            if (s.precondition && s.lr_q > 0.0 && model.gamma() > 0.0) {
              curvature = model.curvature_parts(cache);
            }
            break;
          }
          eta *= 0.5;
        }
        pi_step = eta;
      }
    }
  }

  // Polish theta at the selected (psi, rho) so the reported value is the
  // inner minimum rather than a lagging iterate.
  theta = best_theta;
  psi = best_psi;
  rho = best_rho;
  cache = model.policy_cache(psi);
  model.attach_quadratics(cache);
  LagrangianParts parts = model.evaluate(theta, cache, rho, true, false);
  if (s.lr_q > 0.0 && s.polish_steps > 0) {
    bool use_pc = false;
    if (s.precondition) {
      if (model.gamma() > 0.0) curvature = model.curvature_parts(cache);
      use_pc = build_preconditioner(curvature, rho, precond);
    }
    double step = s.lr_q;
    for (int p = 0; p < s.polish_steps; ++p) {
      const double before = parts.value;
      parts = descend_theta(model, cache, rho, use_pc ? &precond : nullptr, theta, s.lr_q,
                            q_cap, step, 1, std::move(parts));
      if (before - parts.value <= 1e-13 * std::max(1.0, std::abs(before))) break;
    }
  }
  if (!std::isfinite(parts.value)) throw Error("primal-dual: non-finite Lagrangian after polish");
  out.theta = theta;
  out.psi = psi;
  out.rho = rho;
  out.lagrangian = parts.value;
  return out;
}

}  // namespace steel
