#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "raincast/ops.hpp"
#include "raincast/rng.hpp"

// Shared finite-difference harness for gradient tests. Everything runs at
// double precision; network code under test is templated so the same graphs
// can be built with Tensor<double>.

namespace gradtest {

using DT = raincast::Tensor<double>;
using DV = raincast::Var<double>;

// Random tensor with entries of magnitude in [lo, hi] and random sign; the
// lower bound keeps values away from kinks (relu, abs) and from division
// or square-root trouble at zero.
inline DT rand_tensor(raincast::Shape s, std::uint64_t seed, double lo = 0.1,
                      double hi = 1.0, bool signed_values = true) {
  auto g = raincast::make_rng(raincast::seed_stream(9100, seed));
  DT t(s);
  for (double& v : t.data) {
    const double mag = lo + (hi - lo) * raincast::uniform01(g);
    const bool flip = signed_values && raincast::uniform01(g) < 0.5;
    v = flip ? -mag : mag;
  }
  return t;
}

inline double rel_err(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

// Central-difference gradient check of a scalar-valued graph builder against
// existing leaf variables (for example a network's own parameters). The
// builder is re-run after each perturbation, so anything it does internally
// (including nested grad calls with create_graph) is part of the function
// under test. Large parameters are probed on a stride to keep runtimes sane.
template <class F>
void gradcheck_vars(F&& f, std::vector<DV> params, double tol = 1e-6,
                    double h = 1e-5) {
  DV out = f(params);
  REQUIRE(out.shape().numel() == 1);
  const std::vector<DV> gs = raincast::grad(out, params);

  auto eval = [&]() { return f(params).value().data[0]; };
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& data = params[i].mutable_value().data;
    const std::size_t n = data.size();
    const std::size_t stride = n <= 200 ? 1 : n / 64;
    for (std::size_t j = 0; j < n; j += stride) {
      const double keep = data[j];
      data[j] = keep + h;
      const double lp = eval();
      data[j] = keep - h;
      const double lm = eval();
      data[j] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = gs[i].value().data[j];
      INFO("param " << i << " elem " << j << " analytic " << an << " fd " << fd);
      CHECK(rel_err(an, fd) < tol);
    }
  }
}

// Same check, building fresh leaf variables from the given tensors.
template <class F>
void gradcheck(F&& f, std::vector<DT> init, double tol = 1e-6, double h = 1e-5) {
  std::vector<DV> params;
  params.reserve(init.size());
  for (DT& t : init) params.push_back(DV::param(std::move(t)));
  gradcheck_vars(std::forward<F>(f), std::move(params), tol, h);
}

inline double dot(const DT& a, const DT& b) {
  REQUIRE(a.shape == b.shape);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace gradtest
