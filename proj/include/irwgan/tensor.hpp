#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "irwgan/error.hpp"

namespace irwgan {

// allocator whose default-construct is a no-op, so vector(n) skips the
// zero fill for buffers that are fully overwritten anyway
template <class T>
struct UninitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// Dense row-major tensor. Batched image blocks use {n, c, h, w},
// per-sample vectors {n}, feature matrices {n, d}.
template <class S>
struct Tensor {
  using DataVec = std::vector<S, UninitAllocator<S>>;

  std::vector<int> shape;
  DataVec data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    data.resize(count(shape));
    std::fill(data.begin(), data.end(), S(0));
  }
  Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)) {
    require(values.size() == count(shape), "tensor data length does not match shape");
    data.assign(values.begin(), values.end());
  }

  // allocated but not zero-filled; every element must be written
  static Tensor uninit(std::vector<int> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data.resize(count(t.shape));
    return t;
  }

  static std::size_t count(const std::vector<int>& shp) {
    std::size_t n = 1;
    for (int d : shp) {
      require(d >= 0, "negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  // {n, c, h, w} indexing
  S& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const S& at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace irwgan
