#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace maskdiff {

// Row-major dense matrix owning its storage. Eigen maps are used for the
// heavy products; everything else is plain loops.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

  T& operator()(int r, int c) { return v[std::size_t(r) * cols + c]; }
  const T& operator()(int r, int c) const { return v[std::size_t(r) * cols + c]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  std::size_t size() const { return v.size(); }

  using EMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<EMatrix>;
  using CMap = Eigen::Map<const EMatrix>;

  Map map() { return Map(v.data(), rows, cols); }
  CMap map() const { return CMap(v.data(), rows, cols); }
};

template <class T>
using MatMap = typename Mat<T>::Map;
template <class T>
using MatCMap = typename Mat<T>::CMap;

template <class T>
MatMap<T> map_of(T* p, int rows, int cols) {
  return MatMap<T>(p, rows, cols);
}

template <class T>
MatCMap<T> cmap_of(const T* p, int rows, int cols) {
  return MatCMap<T>(p, rows, cols);
}

}  // namespace maskdiff
