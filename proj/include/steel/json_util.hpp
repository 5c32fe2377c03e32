#pragma once

#include <vector>

#include "json.hpp"

#include "steel/common.hpp"

namespace steel {

inline nlohmann::json vector_to_json(const VectorRef& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto raw = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(raw.data(), static_cast<Index>(raw.size()));
}

/// Row-major nested arrays.
inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) out.push_back(vector_to_json(m.row(i).transpose()));
  return out;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  require(j.is_array(), "expected a nested array");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto row = j.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
    require(static_cast<Index>(row.size()) == cols, "ragged matrix in JSON");
    for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace steel
