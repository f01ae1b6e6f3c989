#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddm {

// Dense rank-4 tensor in NCHW layout. Lower-rank data (biases, per-channel
// stats, scalars) uses trailing singleton dims.
template <typename S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw std::invalid_argument("tensor: negative dim");
  }

  static Tensor scalar(S value) {
    Tensor t(1, 1, 1, 1);
    t.v[0] = value;
    return t;
  }
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  S& at(int i, int j, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }
  const S& at(int i, int j, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }

  // Pointer to the start of one (sample, channel) plane.
  S* plane(int i, int j) { return v.data() + (static_cast<std::size_t>(i) * c + j) * h * w; }
  const S* plane(int i, int j) const {
    return v.data() + (static_cast<std::size_t>(i) * c + j) * h * w;
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(S value) { std::fill(v.begin(), v.end(), value); }
  void zero() { fill(S(0)); }

  std::string shape_str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(n, c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace ddm
