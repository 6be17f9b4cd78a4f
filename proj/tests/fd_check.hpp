#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance suites.
// Every analytic gradient is compared against a central-difference estimate
// of the same scalar loss; the loss is a fixed random weighting of the
// outputs so that all output positions receive distinct upstream gradients.

#include <cmath>
#include <string>
#include <vector>

#include "fusenas/graph.hpp"
#include "fusenas/layers.hpp"
#include "fusenas/rng.hpp"

namespace fdtest {

using fusenas::Chain;
using fusenas::ComputeGraph;
using fusenas::DetRng;
using fusenas::Param;
using fusenas::Tensor;
using fusenas::real;

struct FdResult {
  double max_rel = 0;
  std::string worst;
};

inline double rel_err(double a, double n) {
  return std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-4);
}

inline Tensor random_tensor(const std::vector<std::size_t>& shape, DetRng& rng) {
  Tensor t(shape);
  for (real& v : t.v) v = static_cast<real>(rng.uniform(-1.0, 1.0));
  return t;
}

inline std::vector<double> random_weights(std::size_t n, DetRng& rng) {
  std::vector<double> c(n);
  for (double& v : c) v = rng.uniform(-1.5, 1.5);
  return c;
}

inline double dot_loss(const Tensor& y, const std::vector<double>& c) {
  double s = 0;
  for (std::size_t i = 0; i < y.v.size(); ++i) s += c[i] * static_cast<double>(y.v[i]);
  return s;
}

// Chain variant: checks every parameter entry and every input entry.
inline FdResult fd_check_chain(Chain& ch, const std::vector<std::size_t>& in_shape,
                               std::uint64_t seed, double eps = 1e-4) {
  DetRng rng(fusenas::derive_seed(seed, fusenas::seed_tag("fd")));
  ch.init_params(rng);
  Tensor x = random_tensor(in_shape, rng);

  DetRng unused(0);
  auto fwd = [&] { return ch.forward(x, false, unused); };
  const Tensor y0 = fwd();
  const std::vector<double> c = random_weights(y0.v.size(), rng);

  std::vector<Param*> params;
  ch.collect_params(params);
  for (Param* p : params) p->grad.zero();
  const Tensor y = fwd();
  Tensor gy(y.shape);
  for (std::size_t i = 0; i < gy.v.size(); ++i) gy.v[i] = static_cast<real>(c[i]);
  const Tensor gx = ch.backward(gy);

  FdResult r;
  auto probe = [&](real& slot, double analytic, const std::string& name) {
    const real keep = slot;
    slot = static_cast<real>(keep + eps);
    const double up = dot_loss(fwd(), c);
    slot = static_cast<real>(keep - eps);
    const double dn = dot_loss(fwd(), c);
    slot = keep;
    const double numeric = (up - dn) / (2 * eps);
    const double e = rel_err(analytic, numeric);
    if (e > r.max_rel) {
      r.max_rel = e;
      r.worst = name;
    }
  };

  for (Param* p : params)
    for (std::size_t i = 0; i < p->value.v.size(); ++i)
      probe(p->value.v[i], static_cast<double>(p->grad.v[i]),
            p->name + "[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < x.v.size(); ++i)
    probe(x.v[i], static_cast<double>(gx.v[i]), "input[" + std::to_string(i) + "]");
  return r;
}

// Full compiled network, head included.
inline FdResult fd_check_graph(ComputeGraph& g, std::uint64_t seed, double eps = 1e-4) {
  DetRng rng(fusenas::derive_seed(seed, fusenas::seed_tag("fd")));
  g.init_params(rng);
  Tensor x = random_tensor(g.input_shape, rng);

  DetRng unused(0);
  auto fwd = [&] { return g.forward(x, false, unused); };
  const Tensor y0 = fwd();
  const std::vector<double> c = random_weights(y0.v.size(), rng);

  g.zero_grads();
  const Tensor y = fwd();
  Tensor gy(y.shape);
  for (std::size_t i = 0; i < gy.v.size(); ++i) gy.v[i] = static_cast<real>(c[i]);
  const Tensor gx = g.backward(gy);

  FdResult r;
  auto probe = [&](real& slot, double analytic, const std::string& name) {
    const real keep = slot;
    slot = static_cast<real>(keep + eps);
    const double up = dot_loss(fwd(), c);
    slot = static_cast<real>(keep - eps);
    const double dn = dot_loss(fwd(), c);
    slot = keep;
    const double numeric = (up - dn) / (2 * eps);
    const double e = rel_err(analytic, numeric);
    if (e > r.max_rel) {
      r.max_rel = e;
      r.worst = name;
    }
  };

  for (Param* p : g.params())
    for (std::size_t i = 0; i < p->value.v.size(); ++i)
      probe(p->value.v[i], static_cast<double>(p->grad.v[i]),
            p->name + "[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < x.v.size(); ++i)
    probe(x.v[i], static_cast<double>(gx.v[i]), "input[" + std::to_string(i) + "]");
  return r;
}

}  // namespace fdtest
