#include "steel/funcapprox.hpp"

#include <algorithm>
#include <numbers>
#include <random>

namespace steel {

namespace {

void enumerate_exponents(Index dim, int remaining, std::vector<int>& current,
                         std::vector<std::vector<int>>& out) {
  if (static_cast<Index>(current.size()) == dim) {
    if (remaining == 0) out.push_back(current);
    return;
  }
  for (int e = remaining; e >= 0; --e) {
    current.push_back(e);
    enumerate_exponents(dim, remaining - e, current, out);
    current.pop_back();
  }
}

inline double ipow(double x, int e) {
  double r = 1.0;
  for (int k = 0; k < e; ++k) r *= x;
  return r;
}

}  // namespace

FeatureMap FeatureMap::polynomial(Index input_dim, int degree) {
  require(input_dim >= 1, "polynomial features need input_dim >= 1");
  require(degree >= 0, "polynomial degree must be >= 0");
  std::vector<std::vector<int>> all;
  for (int total = 0; total <= degree; ++total) {
    std::vector<int> current;
    enumerate_exponents(input_dim, total, current, all);
  }
  FeatureMap map;
  map.kind_ = FeatureKind::polynomial;
  map.input_dim_ = input_dim;
  map.degree_ = degree;
  map.output_dim_ = static_cast<Index>(all.size());
  map.exponents_.resize(map.output_dim_, input_dim);
  for (Index k = 0; k < map.output_dim_; ++k) {
    for (Index j = 0; j < input_dim; ++j) {
      map.exponents_(k, j) = all[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
    }
  }
  return map;
}

FeatureMap FeatureMap::random_fourier(Index input_dim, Index num_features, double bandwidth,
                                      std::uint64_t seed) {
  require(input_dim >= 1, "random Fourier features need input_dim >= 1");
  require(num_features >= 1, "random Fourier features need m >= 1");
  require(std::isfinite(bandwidth) && bandwidth > 0, "random Fourier bandwidth must be > 0");
  FeatureMap map;
  map.kind_ = FeatureKind::random_fourier;
  map.input_dim_ = input_dim;
  map.output_dim_ = num_features;
  map.bandwidth_ = bandwidth;
  map.seed_ = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / bandwidth);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  map.frequencies_.resize(num_features, input_dim);
  map.phases_.resize(num_features);
  for (Index k = 0; k < num_features; ++k) {
    for (Index j = 0; j < input_dim; ++j) map.frequencies_(k, j) = normal(rng);
    map.phases_(k) = uniform(rng);
  }
  return map;
}

Vector FeatureMap::features(const VectorRef& x) const {
  require(x.size() == input_dim_, "feature map: dimension mismatch");
  Vector phi(output_dim_);
  if (kind_ == FeatureKind::polynomial) {
    for (Index k = 0; k < output_dim_; ++k) {
      double v = 1.0;
      for (Index j = 0; j < input_dim_; ++j) v *= ipow(x(j), exponents_(k, j));
      phi(k) = v;
    }
  } else {
    const double amp = std::sqrt(2.0 / static_cast<double>(output_dim_));
    phi = amp * (frequencies_ * x + phases_).array().cos().matrix();
  }
  return phi;
}

Matrix FeatureMap::jacobian(const VectorRef& x) const {
  require(x.size() == input_dim_, "feature map: dimension mismatch");
  Matrix jac(output_dim_, input_dim_);
  if (kind_ == FeatureKind::polynomial) {
    for (Index k = 0; k < output_dim_; ++k) {
      for (Index i = 0; i < input_dim_; ++i) {
        const int ei = exponents_(k, i);
        if (ei == 0) {
          jac(k, i) = 0.0;
          continue;
        }
        double v = static_cast<double>(ei) * ipow(x(i), ei - 1);
        for (Index j = 0; j < input_dim_; ++j) {
          if (j != i) v *= ipow(x(j), exponents_(k, j));
        }
        jac(k, i) = v;
      }
    }
  } else {
    const double amp = std::sqrt(2.0 / static_cast<double>(output_dim_));
    const Vector s = (frequencies_ * x + phases_).array().sin().matrix();
    jac = -amp * s.asDiagonal() * frequencies_;
  }
  return jac;
}

Matrix FeatureMap::features_rows(const Points& x) const {
  require(x.cols() == input_dim_, "feature map: dimension mismatch");
  Matrix out(x.rows(), output_dim_);
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = features(row_vec(x, i)).transpose();
  return out;
}

nlohmann::json FeatureMap::to_json() const {
  nlohmann::json j;
  j["input_dim"] = input_dim_;
  if (kind_ == FeatureKind::polynomial) {
    j["kind"] = "polynomial";
    j["degree"] = degree_;
  } else {
    j["kind"] = "random_fourier";
    j["num_features"] = output_dim_;
    j["bandwidth"] = bandwidth_;
    j["seed"] = seed_;
  }
  return j;
}

FeatureMap FeatureMap::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const Index input_dim = j.at("input_dim").get<Index>();
  if (kind == "polynomial") return polynomial(input_dim, j.at("degree").get<int>());
  if (kind == "random_fourier") {
    return random_fourier(input_dim, j.at("num_features").get<Index>(),
                          j.at("bandwidth").get<double>(), j.at("seed").get<std::uint64_t>());
  }
  throw Error("unknown feature map kind '" + kind + "'");
}

bool FeatureMap::operator==(const FeatureMap& other) const {
  return kind_ == other.kind_ && input_dim_ == other.input_dim_ &&
         output_dim_ == other.output_dim_ && degree_ == other.degree_ &&
         bandwidth_ == other.bandwidth_ && seed_ == other.seed_;
}

ParamQ::ParamQ(FeatureMap map, Index state_dim, Index action_dim, double clip_bound,
               bool action_scaled)
    : map_(std::move(map)),
      state_dim_(state_dim),
      action_dim_(action_dim),
      clip_bound_(clip_bound),
      action_scaled_(action_scaled) {
  require(state_dim >= 1 && action_dim >= 1, "ParamQ: dims must be positive");
  require(map_.input_dim() == state_dim + action_dim,
          "ParamQ: feature map input must be state_dim + action_dim");
  require(clip_bound > 0, "ParamQ: clip bound must be positive");
  require(!action_scaled || action_dim == 1, "ParamQ: action scaling needs a scalar action");
  theta_ = Vector::Zero(map_.output_dim());
}

void ParamQ::set_theta(const Vector& theta) {
  require(theta.size() == num_params(), "ParamQ: parameter length mismatch");
  theta_ = theta;
}

void ParamQ::check_dims(const VectorRef& s, const VectorRef& a) const {
  require(s.size() == state_dim_ && a.size() == action_dim_, "ParamQ: dimension mismatch");
}

Vector ParamQ::param_features(const VectorRef& s, const VectorRef& a) const {
  check_dims(s, a);
  Vector phi = map_.features(concat(s, a));
  if (action_scaled_) phi *= a(0);
  return phi;
}

double ParamQ::raw(const VectorRef& s, const VectorRef& a) const {
  return theta_.dot(param_features(s, a));
}

double ParamQ::eval(const VectorRef& s, const VectorRef& a) const {
  return std::clamp(raw(s, a), -clip_bound_, clip_bound_);
}

QGradient ParamQ::grad(const VectorRef& s, const VectorRef& a) const {
  check_dims(s, a);
  const Vector z = concat(s, a);
  const Vector phi = map_.features(z);
  const double scale = action_scaled_ ? a(0) : 1.0;
  const double value = scale * theta_.dot(phi);
  QGradient g;
  if (std::abs(value) >= clip_bound_) {
    g.d_theta = Vector::Zero(num_params());
    g.d_action = Vector::Zero(action_dim_);
    return g;
  }
  g.d_theta = scale * phi;
  const Matrix jac = map_.jacobian(z);
  g.d_action = scale * (jac.rightCols(action_dim_).transpose() * theta_);
  if (action_scaled_) g.d_action(0) += theta_.dot(phi);
  return g;
}

nlohmann::json ParamQ::to_json() const {
  nlohmann::json j;
  j["kind"] = "param_q";
  j["features"] = map_.to_json();
  j["dims"] = {{"state", state_dim_}, {"action", action_dim_}};
  j["clip_bound"] = clip_bound_;
  j["action_scaled"] = action_scaled_;
  j["weights"] = std::vector<double>(theta_.data(), theta_.data() + theta_.size());
  return j;
}

ParamQ ParamQ::from_json(const nlohmann::json& j) {
  ParamQ q(FeatureMap::from_json(j.at("features")), j.at("dims").at("state").get<Index>(),
           j.at("dims").at("action").get<Index>(), j.at("clip_bound").get<double>(),
           j.value("action_scaled", false));
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    q.set_theta(Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())));
  }
  return q;
}

ParamPolicy::ParamPolicy(FeatureMap map, Vector lo, Vector hi)
    : map_(std::move(map)), lo_(std::move(lo)), hi_(std::move(hi)) {
  require(lo_.size() >= 1 && lo_.size() == hi_.size(), "ParamPolicy: bad action box");
  require((hi_.array() > lo_.array()).all(), "ParamPolicy: action box must have hi > lo");
  psi_ = Matrix::Zero(map_.output_dim(), lo_.size());
}

Vector ParamPolicy::params() const {
  return Eigen::Map<const Vector>(psi_.data(), psi_.size());
}

void ParamPolicy::set_params(const Vector& flat) {
  require(flat.size() == psi_.size(), "ParamPolicy: parameter length mismatch");
  psi_ = Eigen::Map<const Matrix>(flat.data(), psi_.rows(), psi_.cols());
}

void ParamPolicy::set_psi(const Matrix& psi) {
  require(psi.rows() == psi_.rows() && psi.cols() == psi_.cols(),
          "ParamPolicy: psi shape mismatch");
  psi_ = psi;
}

Vector ParamPolicy::act(const VectorRef& s) const {
  const Vector phi = map_.features(s);
  const Vector u = psi_.transpose() * phi;
  Vector a(action_dim());
  for (Index j = 0; j < action_dim(); ++j) a(j) = lo_(j) + (hi_(j) - lo_(j)) * sigmoid(u(j));
  return a;
}

Points ParamPolicy::act_rows(const Points& states) const {
  Points out(states.rows(), action_dim());
  for (Index i = 0; i < states.rows(); ++i) out.row(i) = act(row_vec(states, i)).transpose();
  return out;
}

Matrix ParamPolicy::jacobian(const VectorRef& s) const {
  const Vector phi = map_.features(s);
  const Vector u = psi_.transpose() * phi;
  const Index p = map_.output_dim();
  Matrix jac = Matrix::Zero(action_dim(), num_params());
  for (Index j = 0; j < action_dim(); ++j) {
    const double sg = sigmoid(u(j));
    jac.row(j).segment(j * p, p) = ((hi_(j) - lo_(j)) * sg * (1.0 - sg)) * phi.transpose();
  }
  return jac;
}

Vector ParamPolicy::vjp(const VectorRef& s, const VectorRef& upstream) const {
  require(upstream.size() == action_dim(), "ParamPolicy::vjp: upstream length mismatch");
  const Vector phi = map_.features(s);
  const Vector u = psi_.transpose() * phi;
  const Index p = map_.output_dim();
  Vector out(num_params());
  for (Index j = 0; j < action_dim(); ++j) {
    const double sg = sigmoid(u(j));
    out.segment(j * p, p) = (upstream(j) * (hi_(j) - lo_(j)) * sg * (1.0 - sg)) * phi;
  }
  return out;
}

nlohmann::json ParamPolicy::to_json() const {
  nlohmann::json j;
  j["kind"] = "param_policy";
  j["features"] = map_.to_json();
  j["dims"] = {{"state", state_dim()}, {"action", action_dim()}};
  j["action_lo"] = std::vector<double>(lo_.data(), lo_.data() + lo_.size());
  j["action_hi"] = std::vector<double>(hi_.data(), hi_.data() + hi_.size());
  const Vector flat = params();
  j["weights"] = std::vector<double>(flat.data(), flat.data() + flat.size());
  return j;
}

ParamPolicy ParamPolicy::from_json(const nlohmann::json& j) {
  const auto lo = j.at("action_lo").get<std::vector<double>>();
  const auto hi = j.at("action_hi").get<std::vector<double>>();
  ParamPolicy p(FeatureMap::from_json(j.at("features")),
                Eigen::Map<const Vector>(lo.data(), static_cast<Index>(lo.size())),
                Eigen::Map<const Vector>(hi.data(), static_cast<Index>(hi.size())));
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<double>>();
    p.set_params(Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())));
  }
  return p;
}

double finite_diff_check(const std::function<double(const Vector&)>& f,
                         const std::function<Vector(const Vector&)>& grad, const Vector& point,
                         double h) {
  require(h > 0, "finite_diff_check: h must be positive");
  const Vector g = grad(point);
  require(g.size() == point.size(), "finite_diff_check: gradient length mismatch");
  double worst = 0.0;
  Vector x = point;
  for (Index i = 0; i < point.size(); ++i) {
    x(i) = point(i) + h;
    const double up = f(x);
    x(i) = point(i) - h;
    const double down = f(x);
    x(i) = point(i);
    worst = std::max(worst, std::abs((up - down) / (2.0 * h) - g(i)));
  }
  return worst;
}

}  // namespace steel
