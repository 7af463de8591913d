#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ma {

#define MA_CHECK(cond, msg)                                             \
  do {                                                                  \
    if (!(cond)) {                                                      \
      std::ostringstream ma_oss_;                                       \
      ma_oss_ << "check failed: " << #cond << " (" << msg << ") at "    \
              << __FILE__ << ":" << __LINE__;                           \
      throw std::runtime_error(ma_oss_.str());                          \
    }                                                                   \
  } while (0)

// Allocator that default-initializes on resize (a no-op for float/double),
// letting hot paths skip the zero-fill when every element gets overwritten.
template <typename S>
struct DefaultInitAlloc : std::allocator<S> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) > 0)
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    else
      ::new (static_cast<void*>(p)) U;
  }
};

// Dense row-major n-d array with value semantics. All layouts are contiguous;
// axis meaning is documented at each call site.
template <typename S>
struct Tensor {
  using Storage = std::vector<S, DefaultInitAlloc<S>>;

  std::vector<int> dims;
  Storage v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    v.resize(size_t(count(dims)));
    std::fill(v.begin(), v.end(), S(0));
  }
  Tensor(std::vector<int> d, std::vector<S> data) : dims(std::move(d)) {
    MA_CHECK(int64_t(data.size()) == count(dims), "data size mismatches shape");
    v.assign(data.begin(), data.end());
  }

  static int64_t count(const std::vector<int>& d) {
    int64_t n = 1;
    for (int x : d) n *= x;
    return n;
  }

  // Storage left default-initialized; use only when every element is written.
  static Tensor uninit(std::vector<int> d) {
    Tensor t;
    t.dims = std::move(d);
    t.v.resize(size_t(count(t.dims)));
    return t;
  }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, S value) {
    Tensor t(std::move(d));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  int64_t numel() const { return int64_t(v.size()); }
  bool empty() const { return v.empty(); }
  int ndim() const { return int(dims.size()); }
  int dim(int i) const { return dims[size_t(i)]; }

  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  S& operator[](int64_t i) { return v[size_t(i)]; }
  const S& operator[](int64_t i) const { return v[size_t(i)]; }

  // Row-major index helpers for the common ranks.
  S& at2(int i, int j) { return v[size_t(i) * dims[1] + j]; }
  const S& at2(int i, int j) const { return v[size_t(i) * dims[1] + j]; }
  S& at3(int i, int j, int k) { return v[(size_t(i) * dims[1] + j) * dims[2] + k]; }
  const S& at3(int i, int j, int k) const { return v[(size_t(i) * dims[1] + j) * dims[2] + k]; }
  S& at4(int i, int j, int k, int l) {
    return v[((size_t(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }
  const S& at4(int i, int j, int k, int l) const {
    return v[((size_t(i) * dims[1] + j) * dims[2] + k) * dims[3] + l];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  Tensor reshaped(std::vector<int> d) const {
    MA_CHECK(count(d) == numel(), "reshape changes element count");
    Tensor t;
    t.dims = std::move(d);
    t.v = v;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t.dims = dims;
    t.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) t.v[i] = T(v[i]);
    return t;
  }

  std::string shape_str() const {
    std::ostringstream oss;
    oss << "[";
    for (size_t i = 0; i < dims.size(); ++i) oss << (i ? "x" : "") << dims[i];
    oss << "]";
    return oss.str();
  }
};

}  // namespace ma
