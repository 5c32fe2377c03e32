#include "steel/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace steel {

namespace {

inline double gaussian_from_sq(double sq_dist, double bandwidth) {
  return std::exp(-sq_dist / (2.0 * bandwidth * bandwidth));
}

void check_points(const Points& p, const char* what) {
  require(p.rows() > 0, std::string(what) + ": empty sample");
  require(p.allFinite(), std::string(what) + ": non-finite input");
}

double sum_cross(const Points& a, const Points& b, const KernelSpec& spec) {
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) {
      total += gaussian_from_sq((a.row(i) - b.row(j)).squaredNorm(), spec.bandwidth);
    }
  }
  return total;
}

// Sum over i != j of k(p_i, p_j), computed over the upper triangle.
double sum_offdiag(const Points& p, const KernelSpec& spec) {
  double total = 0.0;
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = i + 1; j < p.rows(); ++j) {
      total += gaussian_from_sq((p.row(i) - p.row(j)).squaredNorm(), spec.bandwidth);
    }
  }
  return 2.0 * total;
}

}  // namespace

void KernelSpec::validate() const {
  require(std::isfinite(bandwidth) && bandwidth > 0.0,
          "kernel bandwidth must be positive and finite");
}

double kernel_eval(const KernelSpec& spec, const VectorRef& x, const VectorRef& y) {
  require(x.size() == y.size(), "kernel_eval: dimension mismatch");
  require(x.allFinite() && y.allFinite(), "kernel_eval: non-finite input");
  return gaussian_from_sq((x - y).squaredNorm(), spec.bandwidth);
}

GramMatrix gram(const KernelSpec& spec, const Points& points) {
  spec.validate();
  check_points(points, "gram");
  const Index n = points.rows();
  GramMatrix g;
  g.spec = spec;
  g.points = points;
  g.entries.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    g.entries(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double v =
          gaussian_from_sq((points.row(i) - points.row(j)).squaredNorm(), spec.bandwidth);
      g.entries(i, j) = v;
      g.entries(j, i) = v;
    }
  }
  return g;
}

Matrix cross_gram(const KernelSpec& spec, const Points& a, const Points& b) {
  spec.validate();
  require(a.cols() == b.cols(), "cross_gram: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (Index j = 0; j < b.rows(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      out(i, j) = gaussian_from_sq((a.row(i) - b.row(j)).squaredNorm(), spec.bandwidth);
    }
  }
  return out;
}

double median_heuristic(const Points& points, std::uint64_t seed, Index max_points) {
  require(points.rows() >= 2, "median_heuristic: need at least two points");
  require(points.allFinite(), "median_heuristic: non-finite input");
  std::vector<Index> idx(static_cast<std::size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (points.rows() > max_points) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_points));
    std::sort(idx.begin(), idx.end());
  }
  std::vector<double> dists;
  dists.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      dists.push_back((points.row(idx[i]) - points.row(idx[j])).norm());
    }
  }
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower =
        *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0)) {
    // More than half the pairs coincide; fall back to the largest distance
    // unless the whole sample is a single point.
    const double largest = *std::max_element(dists.begin(), dists.end());
    if (!(largest > 0.0)) throw Error("median_heuristic: degenerate sample");
    median = largest;
  }
  return median;
}

double mmd2(const Points& a, const Points& b, const KernelSpec& spec, MmdEstimator estimator) {
  spec.validate();
  check_points(a, "mmd2");
  check_points(b, "mmd2");
  require(a.cols() == b.cols(), "mmd2: dimension mismatch");
  const double m = static_cast<double>(a.rows());
  const double n = static_cast<double>(b.rows());
  const double cross = sum_cross(a, b, spec) / (m * n);
  if (estimator == MmdEstimator::biased) {
    if (a.rows() == b.rows() && a == b) return 0.0;
    // Diagonals contribute exactly 1 each for the gaussian kernel.
    const double aa = (sum_offdiag(a, spec) + m) / (m * m);
    const double bb = (sum_offdiag(b, spec) + n) / (n * n);
    return std::max(0.0, aa - 2.0 * cross + bb);
  }
  require(a.rows() >= 2 && b.rows() >= 2, "mmd2: unbiased estimator needs >= 2 points per sample");
  const double aa = sum_offdiag(a, spec) / (m * (m - 1.0));
  const double bb = sum_offdiag(b, spec) / (n * (n - 1.0));
  return aa - 2.0 * cross + bb;
}

double mmd2_weighted(const Points& a, const Vector& weights_a, const Points& b,
                     const Vector& weights_b, const KernelSpec& spec) {
  spec.validate();
  check_points(a, "mmd2_weighted");
  check_points(b, "mmd2_weighted");
  require(a.cols() == b.cols(), "mmd2_weighted: dimension mismatch");
  require(weights_a.size() == a.rows() && weights_b.size() == b.rows(),
          "mmd2_weighted: weight length mismatch");
  require((weights_a.array() >= 0).all() && (weights_b.array() >= 0).all(),
          "mmd2_weighted: negative weight");
  const double sa = weights_a.sum();
  const double sb = weights_b.sum();
  require(sa > 0 && sb > 0, "mmd2_weighted: weights sum to zero");
  const Vector wa = weights_a / sa;
  const Vector wb = weights_b / sb;
  const double aa = wa.dot(cross_gram(spec, a, a) * wa);
  const double bb = wb.dot(cross_gram(spec, b, b) * wb);
  const double ab = wa.dot(cross_gram(spec, a, b) * wb);
  return std::max(0.0, aa - 2.0 * ab + bb);
}

double mean_embedding_eval(const Points& sample, const KernelSpec& spec, const VectorRef& z) {
  spec.validate();
  check_points(sample, "mean_embedding_eval");
  require(sample.cols() == z.size(), "mean_embedding_eval: dimension mismatch");
  double total = 0.0;
  for (Index i = 0; i < sample.rows(); ++i) {
    total += gaussian_from_sq((row_vec(sample, i) - z).squaredNorm(), spec.bandwidth);
  }
  return total / static_cast<double>(sample.rows());
}

bool passes_psd_check(const GramMatrix& g) {
  const Index n = g.size();
  Matrix jittered = g.entries;
  jittered.diagonal().array() += 1e-10 * static_cast<double>(n);
  Eigen::LLT<Matrix> llt(jittered);
  return llt.info() == Eigen::Success;
}

}  // namespace steel
