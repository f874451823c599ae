#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflex/kernels.hpp"
#include "sflex/rng.hpp"
#include "sflex/tensor.hpp"

// Layer wrappers that own parameters and the activation caches backward
// passes need. Training is single-writer: one forward builds the caches the
// matching backward consumes.

namespace sflex {

struct Param {
  std::string name;
  Tensor v;
  Tensor g;

  void setup(std::string n, std::vector<int> shape) {
    name = std::move(n);
    v = Tensor(shape);
    g = Tensor(std::move(shape));
  }
};

// named per-channel running statistic
struct StatBuf {
  std::string name;
  std::vector<double> v;
};

struct ParamRefs {
  std::vector<Param*> params;
  std::vector<StatBuf*> stats;
  void add(Param& p) { params.push_back(&p); }
  void add(StatBuf& s) { stats.push_back(&s); }
};

inline void init_he_normal(Param& p, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / fan_in);
  for (int64_t i = 0; i < p.v.numel(); ++i) p.v[i] = rng.gaussian(0.0, std);
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int k, int stride, int pad, int dilation,
         int groups, bool bias)
      : cin_(cin), cout_(cout), k_(k), has_bias_(bias) {
    geom_ = kern::ConvGeom{stride, pad, dilation, groups};
    w.setup(name + ".w", {cout, cin / groups, k, k});
    if (bias) b.setup(name + ".b", {cout});
  }

  void init(Rng& rng) { init_he_normal(w, cin_ / geom_.groups * k_ * k_, rng); }
  void init_zero() {
    w.v.zero();
    if (has_bias_) b.v.zero();
  }

  Tensor forward(const Tensor& x, bool train) {
    if (train) {
      x_cache_ = x;
      cached_ = true;
    }
    return kern::conv2d(x, w.v, has_bias_ ? &b.v : nullptr, geom_);
  }

  Tensor backward(const Tensor& gy) {
    if (!cached_) throw std::runtime_error("conv backward without forward: " + w.name);
    Tensor gx(x_cache_.shape());
    kern::conv2d_backward(x_cache_, w.v, geom_, gy, &gx, &w.g, has_bias_ ? &b.g : nullptr);
    cached_ = false;
    return gx;
  }

  void collect(ParamRefs& r) {
    r.add(w);
    if (has_bias_) r.add(b);
  }

  const kern::ConvGeom& geom() const { return geom_; }
  bool has_bias() const { return has_bias_; }
  int cin() const { return cin_; }
  int cout() const { return cout_; }
  int ksize() const { return k_; }

  Param w, b;

 private:
  kern::ConvGeom geom_;
  int cin_ = 0, cout_ = 0, k_ = 0;
  bool has_bias_ = false;
  Tensor x_cache_;
  bool cached_ = false;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, int c) : c_(c) {
    gamma.setup(name + ".gamma", {c});
    beta.setup(name + ".beta", {c});
    for (int i = 0; i < c; ++i) gamma.v[i] = 1.0;
    rmean.name = name + ".running_mean";
    rmean.v.assign(c, 0.0);
    rvar.name = name + ".running_var";
    rvar.v.assign(c, 1.0);
  }

  // x carries exactly cact channels (the active prefix of this layer)
  Tensor forward(const Tensor& x, bool train, int cact = -1) {
    const int ca = cact < 0 ? c_ : cact;
    if (x.c() != ca) throw std::runtime_error("bn channel mismatch: " + gamma.name);
    if (train) {
      cact_ = ca;
      return kern::bn_forward_train(x, gamma.v.data(), beta.v.data(), rmean.v.data(),
                                    rvar.v.data(), momentum, eps, &cache_);
    }
    return kern::bn_forward_eval(x, gamma.v.data(), beta.v.data(), rmean.v.data(),
                                 rvar.v.data(), eps);
  }

  Tensor backward(const Tensor& gy) {
    if (cache_.cact != cact_ || cact_ == 0)
      throw std::runtime_error("bn backward without forward: " + gamma.name);
    Tensor gx = kern::bn_backward(gy, cache_, gamma.v.data(), gamma.g.data(), beta.g.data());
    cact_ = 0;
    return gx;
  }

  void collect(ParamRefs& r) {
    r.add(gamma);
    r.add(beta);
    r.add(rmean);
    r.add(rvar);
  }

  int channels() const { return c_; }

  Param gamma, beta;
  StatBuf rmean, rvar;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  int c_ = 0;
  kern::BnCache cache_;
  int cact_ = 0;
};

class ReluOp {
 public:
  Tensor forward(const Tensor& x, bool train) {
    Tensor y = kern::relu(x);
    if (train) y_cache_ = y;
    return y;
  }
  Tensor backward(const Tensor& gy) { return kern::relu_backward(y_cache_, gy); }

 private:
  Tensor y_cache_;
};

// weight slicing for elastic width: prefixes along output or input channels
Tensor slice_out_channels(const Tensor& w, int keep);
Tensor slice_in_channels(const Tensor& w, int keep);
void add_out_channel_grad(Tensor& gfull, const Tensor& gsub);
void add_in_channel_grad(Tensor& gfull, const Tensor& gsub);

// reorder dimension `axis` (0 or 1) of a 4-d tensor by `order`
Tensor permute_channels(const Tensor& t, int axis, const std::vector<int>& order);

}  // namespace sflex
