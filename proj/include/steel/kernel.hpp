#pragma once

#include <cstdint>

#include "steel/common.hpp"

namespace steel {

enum class KernelFamily { gaussian };

/// Kernel family plus bandwidth. Only the gaussian kernel ships, which is
/// bounded by one on the diagonal.
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double bandwidth = 1.0;

  void validate() const;
};

/// Dense Gram matrix together with the points it was built from.
struct GramMatrix {
  Matrix entries;
  Points points;
  KernelSpec spec;

  Index size() const { return entries.rows(); }
};

enum class MmdEstimator { biased, unbiased };

/// k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
double kernel_eval(const KernelSpec& spec, const VectorRef& x, const VectorRef& y);

GramMatrix gram(const KernelSpec& spec, const Points& points);

/// Rectangular kernel matrix with entries k(a_i, b_j).
Matrix cross_gram(const KernelSpec& spec, const Points& a, const Points& b);

/// Median pairwise Euclidean distance over a seeded subsample of at most
/// `max_points` rows. Throws "degenerate sample" when every pair coincides.
double median_heuristic(const Points& points, std::uint64_t seed = 0,
                        Index max_points = 1000);

/// Squared MMD between two samples. The biased V-statistic is always >= 0;
/// the unbiased U-statistic drops within-sample diagonals and may go negative.
double mmd2(const Points& a, const Points& b, const KernelSpec& spec,
            MmdEstimator estimator = MmdEstimator::biased);

/// Biased squared MMD between two weighted samples. Weights are normalized
/// internally and must be nonnegative with positive sum.
double mmd2_weighted(const Points& a, const Vector& weights_a, const Points& b,
                     const Vector& weights_b, const KernelSpec& spec);

/// Empirical mean embedding (1/n) sum_i k(z_i, z).
double mean_embedding_eval(const Points& sample, const KernelSpec& spec,
                           const VectorRef& z);

/// PSD check: Cholesky of the Gram matrix after adding 1e-10 * n jitter.
bool passes_psd_check(const GramMatrix& gram);

}  // namespace steel
