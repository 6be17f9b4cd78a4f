#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fusenas {

#ifdef FUSENAS_REAL32
using real = float;
#else
using real = double;
#endif

// Dense row-major tensor. Rank 1 for vectors, rank 2 [T, C] for temporal
// data (time-major, channels contiguous per step).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<real> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, real fill);

  std::size_t size() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }

  real& at(std::size_t t, std::size_t c) { return v[t * shape[1] + c]; }
  real at(std::size_t t, std::size_t c) const { return v[t * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void zero();

  static std::size_t count(const std::vector<std::size_t>& s);
  static std::string shape_str(const std::vector<std::size_t>& s);
};

}  // namespace fusenas
