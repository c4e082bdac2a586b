#pragma once

#include <cstdint>
#include <vector>

#include "crispedge/errors.hpp"
#include "crispedge/tensor.hpp"

namespace crispedge {

/// Row-major 2-D map.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ShapeError("negative grid size");
    data_.assign(static_cast<std::size_t>(rows) * cols, fill);
  }
  Grid(int rows, int cols, std::vector<T> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("grid value count mismatch");
  }

  [[nodiscard]] int rows() const { return rows_; }
  [[nodiscard]] int cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] bool same_shape(const Grid& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  [[nodiscard]] bool contains(int r, int c) const { return r >= 0 && r < rows_ && c >= 0 && c < cols_; }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::vector<T>& values() { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Edge probabilities in [0,1].
using ProbabilityMap = Grid<double>;
/// Binary boundary map, each value 0 or 1.
using BoundaryMap = Grid<std::uint8_t>;

inline Tensor to_tensor(const ProbabilityMap& m) {
  return Tensor(Shape{1, 1, m.rows(), m.cols()}, m.values());
}

inline Tensor to_tensor(const BoundaryMap& m) {
  Tensor t(Shape{1, 1, m.rows(), m.cols()});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i];
  return t;
}

/// Plane (n, c) of `t` as a map.
inline ProbabilityMap plane_to_map(const Tensor& t, int n = 0, int c = 0) {
  const Shape& s = t.shape();
  const double* p = t.plane(n, c);
  return ProbabilityMap(s.h, s.w, std::vector<double>(p, p + s.plane()));
}

inline std::size_t count_nonzero(const BoundaryMap& m) {
  std::size_t k = 0;
  for (auto v : m.values()) k += v != 0;
  return k;
}

}  // namespace crispedge
