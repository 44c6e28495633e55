#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "irwgan/error.hpp"

namespace irwgan {

// Flat trainable parameter storage: values with a paired gradient slot and
// per-parameter Adam moments. Layers address ranges of this vector.
template <class S>
struct ParamVector {
  std::vector<S> values;
  std::vector<S> grads;
  std::vector<S> m;
  std::vector<S> v;

  std::size_t size() const { return values.size(); }

  void resize(std::size_t n) {
    values.assign(n, S(0));
    grads.assign(n, S(0));
    m.assign(n, S(0));
    v.assign(n, S(0));
  }

  void zero_grads() { std::fill(grads.begin(), grads.end(), S(0)); }

  bool grads_finite() const {
    for (S g : grads)
      if (!std::isfinite(static_cast<double>(g))) return false;
    return true;
  }
};

}  // namespace irwgan
