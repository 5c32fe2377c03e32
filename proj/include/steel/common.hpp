#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace steel {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point sets are stored one point per row. Row-major so that a row can be
/// viewed as a contiguous vector without copying.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorRef = Eigen::Ref<const Vector>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

inline bool all_finite(const VectorRef& v) { return v.allFinite(); }

/// Row i of a point set as a column vector view.
inline auto row_vec(const Points& p, Index i) { return p.row(i).transpose(); }

/// Concatenates (s, a) into a single state-action point.
inline Vector concat(const VectorRef& s, const VectorRef& a) {
  Vector z(s.size() + a.size());
  z << s, a;
  return z;
}

/// Horizontal concatenation of two point sets with equal row counts.
inline Points hconcat(const Points& left, const Points& right) {
  require(left.rows() == right.rows(), "hconcat: row count mismatch");
  Points out(left.rows(), left.cols() + right.cols());
  out << left, right;
  return out;
}

}  // namespace steel
