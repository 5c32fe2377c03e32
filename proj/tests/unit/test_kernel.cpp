#include <cmath>
#include <random>

#include "doctest.h"

#include "steel/kernel.hpp"

using namespace steel;

namespace {

Points random_points(Index n, Index d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Points p(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) p(i, j) = g(rng);
  return p;
}

double naive_k(const Points& a, Index i, const Points& b, Index j, double sigma) {
  double d2 = 0.0;
  for (Index c = 0; c < a.cols(); ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

// Quadruple-loop oracle: every pair sum spelled out.
double naive_mmd2(const Points& a, const Points& b, double sigma, bool unbiased) {
  const Index n = a.rows(), m = b.rows();
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (!unbiased || i != j) aa += naive_k(a, i, a, j, sigma);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j)
      if (!unbiased || i != j) bb += naive_k(b, i, b, j, sigma);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) ab += naive_k(a, i, b, j, sigma);
  const double na = unbiased ? n * (n - 1.0) : n * double(n);
  const double nb = unbiased ? m * (m - 1.0) : m * double(m);
  return aa / na + bb / nb - 2.0 * ab / (double(n) * m);
}

}  // namespace

TEST_CASE("kernel_eval basics") {
  KernelSpec k{KernelFamily::gaussian, 1.3};
  Vector x(3), y(3);
  x << 0.1, -2.0, 0.5;
  CHECK(kernel_eval(k, x, x) == 1.0);
  y = x;
  y(0) += 1.3;
  CHECK(kernel_eval(k, x, y) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(kernel_eval(k, x, y) == doctest::Approx(0.606531).epsilon(1e-6));

  const Points p = random_points(200, 3, 1);
  for (Index i = 0; i < 100; ++i) {
    const Vector a = row_vec(p, 2 * i), b = row_vec(p, 2 * i + 1);
    CHECK(kernel_eval(k, a, b) == kernel_eval(k, b, a));
  }
}

TEST_CASE("kernel_eval rejects bad input") {
  KernelSpec k;
  Vector x = Vector::Zero(2), y = Vector::Zero(3);
  CHECK_THROWS_AS(kernel_eval(k, x, y), Error);
  y = Vector::Zero(2);
  y(1) = std::nan("");
  CHECK_THROWS_AS(kernel_eval(k, x, y), Error);
  KernelSpec bad{KernelFamily::gaussian, -1.0};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("gram matrices") {
  KernelSpec k{KernelFamily::gaussian, 0.7};
  Points one(1, 2);
  one << 3.0, 4.0;
  CHECK(gram(k, one).entries(0, 0) == 1.0);

  Points twin(2, 2);
  twin << 1.0, 2.0, 1.0, 2.0;
  CHECK(gram(k, twin).entries == Matrix::Ones(2, 2));

  const Points p = random_points(5, 3, 7);
  const GramMatrix g = gram(k, p);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j)
      CHECK(g.entries(i, j) == doctest::Approx(naive_k(p, i, p, j, 0.7)).epsilon(1e-14));
  CHECK((g.entries - g.entries.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(passes_psd_check(g));

  CHECK_THROWS_AS(gram(k, Points(0, 2)), Error);
}

TEST_CASE("gram of many close points passes the PSD check") {
  const Points p = random_points(300, 2, 3, 0.01);
  CHECK(passes_psd_check(gram(KernelSpec{KernelFamily::gaussian, 2.0}, p)));
}

TEST_CASE("median heuristic") {
  Points p(3, 1);
  p << 0.0, 1.0, 2.0;
  CHECK(median_heuristic(p) == 1.0);
  Points two(2, 1);
  two << 0.0, 3.0;
  CHECK(median_heuristic(two) == 3.0);

  const Points g = random_points(50, 2, 11);
  std::vector<double> d;
  for (Index i = 0; i < 50; ++i)
    for (Index j = i + 1; j < 50; ++j) d.push_back((g.row(i) - g.row(j)).norm());
  std::sort(d.begin(), d.end());
  const double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  const double sigma = median_heuristic(g);
  CHECK(sigma == doctest::Approx(med).epsilon(1e-12));
  CHECK(sigma >= 0.5);
  CHECK(sigma <= 3.0);

  CHECK_THROWS_WITH_AS(median_heuristic(Points::Ones(4, 2)), doctest::Contains("degenerate sample"),
                       Error);
}

TEST_CASE("median heuristic subsample is seeded") {
  const Points g = random_points(1500, 2, 5);
  CHECK(median_heuristic(g, 3) == median_heuristic(g, 3));
}

TEST_CASE("mmd2 against the naive oracle") {
  KernelSpec k{KernelFamily::gaussian, 0.9};
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Points a = random_points(20, 2, 100 + s);
    Points b = random_points(20, 2, 200 + s);
    b.array() += 0.3;
    for (bool unbiased : {false, true}) {
      const auto est = unbiased ? MmdEstimator::unbiased : MmdEstimator::biased;
      const double oracle = naive_mmd2(a, b, 0.9, unbiased);
      CHECK(std::abs(mmd2(a, b, k, est) - oracle) <= 1e-12 * std::abs(oracle));
      CHECK(mmd2(a, b, k, est) == doctest::Approx(mmd2(b, a, k, est)).epsilon(1e-14));
    }
    CHECK(mmd2(a, a, k) == 0.0);
    CHECK(mmd2(a, b, k) >= 0.0);
  }
}

TEST_CASE("mmd2 two-point formula and size checks") {
  KernelSpec k{KernelFamily::gaussian, 1.5};
  Points a(1, 1), b(1, 1);
  a << 0.0;
  b << 2.0;
  CHECK(mmd2(a, b, k) == doctest::Approx(2.0 - 2.0 * std::exp(-4.0 / (2.0 * 2.25))).epsilon(1e-14));
  CHECK_THROWS_AS(mmd2(a, b, k, MmdEstimator::unbiased), Error);
  CHECK_THROWS_AS(mmd2(Points(0, 1), b, k), Error);
}

TEST_CASE("weighted mmd2 reduces to the unweighted one") {
  KernelSpec k{KernelFamily::gaussian, 1.0};
  const Points a = random_points(15, 2, 1), b = random_points(12, 2, 2);
  CHECK(mmd2_weighted(a, Vector::Constant(15, 3.0), b, Vector::Ones(12), k) ==
        doctest::Approx(mmd2(a, b, k)).epsilon(1e-13));
  CHECK_THROWS_AS(mmd2_weighted(a, -Vector::Ones(15), b, Vector::Ones(12), k), Error);
}

TEST_CASE("mean embedding") {
  KernelSpec k{KernelFamily::gaussian, 0.8};
  Points z(1, 2);
  z << 0.4, -0.1;
  const Vector zv = row_vec(z, 0);
  CHECK(mean_embedding_eval(z, k, zv) == 1.0);
  Points zz(2, 2);
  zz << 0.4, -0.1, 0.4, -0.1;
  CHECK(mean_embedding_eval(zz, k, zv) == 1.0);

  const Points s = random_points(10, 2, 9);
  Vector q(2);
  q << 0.3, 0.2;
  double direct = 0.0;
  for (Index i = 0; i < 10; ++i) direct += kernel_eval(k, row_vec(s, i), q);
  CHECK(std::abs(mean_embedding_eval(s, k, q) - direct / 10.0) <= 1e-14);

  // Affine in the empirical measure.
  const Points t = random_points(10, 2, 10);
  Points both(20, 2);
  both << s, t;
  CHECK(std::abs(mean_embedding_eval(both, k, q) -
                 0.5 * (mean_embedding_eval(s, k, q) + mean_embedding_eval(t, k, q))) <= 1e-14);
  CHECK_THROWS_AS(mean_embedding_eval(s, k, Vector::Zero(3)), Error);
}
