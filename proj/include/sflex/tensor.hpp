#pragma once

#include <cassert>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sflex {

// Dense row-major double tensor. Image-like data is NCHW throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessors
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }

  double& at(int n, int c, int y, int x) {
    return data_[idx(n, c, y, x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[idx(n, c, y, x)];
  }

  size_t idx(int n, int c, int y, int x) const {
    assert(ndim() == 4);
    return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor clone() const { return *this; }

  // Flat views keep the buffer, only reinterpret the shape.
  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel()) throw std::runtime_error("reshape: numel mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::runtime_error("negative dim");
      n *= d;
    }
    return n;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Slice of the batch dimension: rows [b0, b1) of an NCHW (or N-first) tensor.
inline Tensor batch_slice(const Tensor& t, int b0, int b1) {
  std::vector<int> shp = t.shape();
  int64_t per = t.numel() / shp[0];
  shp[0] = b1 - b0;
  Tensor out(shp);
  std::memcpy(out.data(), t.data() + per * b0, sizeof(double) * static_cast<size_t>(per) * (b1 - b0));
  return out;
}

inline Tensor batch_concat(const Tensor& a, const Tensor& b) {
  std::vector<int> shp = a.shape();
  if (std::vector<int>(shp.begin() + 1, shp.end()) !=
      std::vector<int>(b.shape().begin() + 1, b.shape().end()))
    throw std::runtime_error("batch_concat: trailing dims differ");
  shp[0] = a.dim(0) + b.dim(0);
  Tensor out(shp);
  std::memcpy(out.data(), a.data(), sizeof(double) * static_cast<size_t>(a.numel()));
  std::memcpy(out.data() + a.numel(), b.data(), sizeof(double) * static_cast<size_t>(b.numel()));
  return out;
}

// Channel-dim concat for NCHW tensors.
inline Tensor channel_concat(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw std::runtime_error("channel_concat: spatial/batch dims differ");
  Tensor out({a.n(), a.c() + b.c(), a.h(), a.w()});
  size_t plane = static_cast<size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    std::memcpy(out.data() + out.idx(n, 0, 0, 0), a.data() + a.idx(n, 0, 0, 0),
                sizeof(double) * plane * a.c());
    std::memcpy(out.data() + out.idx(n, a.c(), 0, 0), b.data() + b.idx(n, 0, 0, 0),
                sizeof(double) * plane * b.c());
  }
  return out;
}

inline Tensor channel_slice(const Tensor& t, int c0, int c1) {
  Tensor out({t.n(), c1 - c0, t.h(), t.w()});
  size_t plane = static_cast<size_t>(t.h()) * t.w();
  for (int n = 0; n < t.n(); ++n)
    std::memcpy(out.data() + out.idx(n, 0, 0, 0), t.data() + t.idx(n, c0, 0, 0),
                sizeof(double) * plane * (c1 - c0));
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return 1e300;
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = std::abs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace sflex
