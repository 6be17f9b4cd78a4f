#include "fusenas/tensor.hpp"

#include <cmath>

namespace fusenas {

std::size_t Tensor::count(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), v(count(shape), real(0)) {}

Tensor::Tensor(std::vector<std::size_t> s, real fill) : shape(std::move(s)), v(count(shape), fill) {}

bool Tensor::all_finite() const {
  for (real x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::zero() {
  for (real& x : v) x = 0;
}

std::string Tensor::shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace fusenas
