#include "sflex/elastic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sflex {

namespace {

void crop_center(const double* src, int kfull, double* dst, int k) {
  const int off = (kfull - k) / 2;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) dst[y * k + x] = src[(y + off) * kfull + (x + off)];
}

void matvec(const double* m, const double* v, double* out, int n) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += m[i * n + j] * v[j];
    out[i] = acc;
  }
}

// out = m^T v
void matvec_t(const double* m, const double* v, double* out, int n) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += m[j * n + i] * v[j];
    out[i] = acc;
  }
}

// m += a b^T
void outer_acc(double* m, const double* a, const double* b, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m[i * n + j] += a[i] * b[j];
}

void set_identity(Tensor& m, int n) {
  m.zero();
  for (int i = 0; i < n; ++i) m[int64_t(i) * n + i] = 1.0;
}

}  // namespace

ElasticKernel::ElasticKernel(std::string name, int channels) : channels_(channels) {
  full.setup(name + ".w7", {channels, 1, 7, 7});
  t75.setup(name + ".t75", {25, 25});
  t53.setup(name + ".t53", {9, 9});
  set_identity(t75.v, 25);
  set_identity(t53.v, 9);
}

void ElasticKernel::init(Rng& rng) {
  init_he_normal(full, 7 * 7, rng);
  set_identity(t75.v, 25);
  set_identity(t53.v, 9);
}

Tensor ElasticKernel::derive(int k, int keep) const {
  if (keep < 1 || keep > channels_) throw std::invalid_argument("derive: bad channel count");
  if (k == 7) return slice_out_channels(full.v, keep);
  if (k != 5 && k != 3) throw std::invalid_argument("derive: kernel size must be 3, 5 or 7");
  Tensor out({keep, 1, k, k});
  double c5[25], v5[25], c3[9], v3[9];
  for (int ch = 0; ch < keep; ++ch) {
    crop_center(full.v.data() + int64_t(ch) * 49, 7, c5, 5);
    matvec(t75.v.data(), c5, v5, 25);
    if (k == 5) {
      std::copy(v5, v5 + 25, out.data() + int64_t(ch) * 25);
      continue;
    }
    crop_center(v5, 5, c3, 3);
    matvec(t53.v.data(), c3, v3, 9);
    std::copy(v3, v3 + 9, out.data() + int64_t(ch) * 9);
  }
  return out;
}

void ElasticKernel::accumulate_grad(const Tensor& gk, int k, int keep) {
  if (gk.dim(0) != keep || gk.dim(2) != k) throw std::invalid_argument("accumulate_grad shape");
  if (k == 7) {
    add_out_channel_grad(full.g, gk);
    return;
  }
  double c5[25], v5[25], gv5[25], gc5[25], c3[9], gc3[9];
  for (int ch = 0; ch < keep; ++ch) {
    crop_center(full.v.data() + int64_t(ch) * 49, 7, c5, 5);
    if (k == 5) {
      const double* g5 = gk.data() + int64_t(ch) * 25;
      outer_acc(t75.g.data(), g5, c5, 25);
      matvec_t(t75.v.data(), g5, gc5, 25);
    } else {
      matvec(t75.v.data(), c5, v5, 25);
      crop_center(v5, 5, c3, 3);
      const double* g3 = gk.data() + int64_t(ch) * 9;
      outer_acc(t53.g.data(), g3, c3, 9);
      matvec_t(t53.v.data(), g3, gc3, 9);
      std::fill(gv5, gv5 + 25, 0.0);
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) gv5[(y + 1) * 5 + (x + 1)] = gc3[y * 3 + x];
      outer_acc(t75.g.data(), gv5, c5, 25);
      matvec_t(t75.v.data(), gv5, gc5, 25);
    }
    double* g7 = full.g.data() + int64_t(ch) * 49;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) g7[(y + 1) * 7 + (x + 1)] += gc5[y * 5 + x];
  }
}

void ElasticKernel::collect(ParamRefs& r) {
  r.add(full);
  r.add(t75);
  r.add(t53);
}

void ElasticKernel::permute(const std::vector<int>& order) {
  // transforms are shared across channels, only the bank moves
  full.v = permute_channels(full.v, 0, order);
  full.g = permute_channels(full.g, 0, order);
}

std::vector<int> rank_channels(const Tensor& w) {
  const int c = w.dim(0);
  const int64_t row = w.numel() / c;
  std::vector<double> mass(c, 0.0);
  for (int i = 0; i < c; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < row; ++j) acc += std::abs(w[i * row + j]);
    mass[i] = acc;
  }
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mass[a] > mass[b]; });
  return order;
}

ElasticBlock::ElasticBlock(std::string name, int cin, int cout, int stride, int max_width)
    : cin_(cin), cout_(cout), stride_(stride), max_width_(max_width) {
  const int e_max = max_width * cin;
  expand = Conv2d(name + ".expand", cin, e_max, 1, 1, 0, 1, 1, false);
  bn1 = BatchNorm(name + ".bn1", e_max);
  dw = ElasticKernel(name + ".dw", e_max);
  bn2 = BatchNorm(name + ".bn2", e_max);
  project = Conv2d(name + ".project", e_max, cout, 1, 1, 0, 1, 1, false);
  bn3 = BatchNorm(name + ".bn3", cout);
}

void ElasticBlock::init(Rng& rng) {
  expand.init(rng);
  dw.init(rng);
  project.init(rng);
}

void ElasticBlock::collect(ParamRefs& r) {
  expand.collect(r);
  bn1.collect(r);
  dw.collect(r);
  bn2.collect(r);
  project.collect(r);
  bn3.collect(r);
}

Tensor ElasticBlock::forward(const Tensor& x, int k, int width, bool train) {
  const int keep = width * cin_;
  if (width < 1 || keep > expand.cout())
    throw std::invalid_argument("block width out of range");
  if (x.c() != cin_) throw std::invalid_argument("block input channels");

  Tensor we = slice_out_channels(expand.w.v, keep);
  Tensor a = kern::conv2d(x, we, nullptr, expand.geom());
  Tensor h1 = relu1_.forward(bn1.forward(a, train, keep), train);

  Tensor dwk = dw.derive(k, keep);
  kern::ConvGeom dg{stride_, k / 2, 1, keep};
  Tensor c = kern::conv2d(h1, dwk, nullptr, dg);
  Tensor h2 = relu2_.forward(bn2.forward(c, train, keep), train);

  Tensor wp = slice_in_channels(project.w.v, keep);
  Tensor y = bn3.forward(kern::conv2d(h2, wp, nullptr, project.geom()), train);

  const bool skip = has_skip();
  if (skip) {
    if (!y.same_shape(x)) throw std::runtime_error("skip shape mismatch");
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  }
  if (train) {
    cache_.k = k;
    cache_.keep = keep;
    cache_.skip = skip;
    cache_.x = x;
    cache_.h1 = h1;
    cache_.h2 = h2;
    cache_.dwk = dwk;
    cache_.live = true;
  }
  return y;
}

Tensor ElasticBlock::backward(const Tensor& gy) {
  if (!cache_.live) throw std::runtime_error("block backward without forward");
  const int keep = cache_.keep, k = cache_.k;

  Tensor gd = bn3.backward(gy);
  Tensor wp = slice_in_channels(project.w.v, keep);
  Tensor gh2(cache_.h2.shape());
  Tensor gwp(wp.shape());
  kern::conv2d_backward(cache_.h2, wp, project.geom(), gd, &gh2, &gwp, nullptr);
  add_in_channel_grad(project.w.g, gwp);

  Tensor gc = bn2.backward(relu2_.backward(gh2));
  kern::ConvGeom dg{stride_, k / 2, 1, keep};
  Tensor gh1(cache_.h1.shape());
  Tensor gdwk(cache_.dwk.shape());
  kern::conv2d_backward(cache_.h1, cache_.dwk, dg, gc, &gh1, &gdwk, nullptr);
  dw.accumulate_grad(gdwk, k, keep);

  Tensor ga = bn1.backward(relu1_.backward(gh1));
  Tensor we = slice_out_channels(expand.w.v, keep);
  Tensor gx(cache_.x.shape());
  Tensor gwe(we.shape());
  kern::conv2d_backward(cache_.x, we, expand.geom(), ga, &gx, &gwe, nullptr);
  add_out_channel_grad(expand.w.g, gwe);

  if (cache_.skip)
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
  cache_.live = false;
  return gx;
}

std::vector<ElasticBlock::PermutedParam> ElasticBlock::permuted_params() const {
  return {{expand.w.name, 0}, {dw.full.name, 0},        {project.w.name, 1},
          {bn1.gamma.name, 0}, {bn1.beta.name, 0},      {bn2.gamma.name, 0},
          {bn2.beta.name, 0}};
}

std::vector<int> ElasticBlock::sort_expanded_channels() {
  std::vector<int> order = rank_channels(expand.w.v);
  expand.w.v = permute_channels(expand.w.v, 0, order);
  expand.w.g = permute_channels(expand.w.g, 0, order);
  dw.permute(order);
  project.w.v = permute_channels(project.w.v, 1, order);
  project.w.g = permute_channels(project.w.g, 1, order);
  auto perm_flat = [&](double* v, int n) {
    std::vector<double> tmp(n);
    for (int i = 0; i < n; ++i) tmp[i] = v[order[i]];
    std::copy(tmp.begin(), tmp.end(), v);
  };
  for (BatchNorm* bn : {&bn1, &bn2}) {
    const int n = bn->channels();
    perm_flat(bn->gamma.v.data(), n);
    perm_flat(bn->gamma.g.data(), n);
    perm_flat(bn->beta.v.data(), n);
    perm_flat(bn->beta.g.data(), n);
    perm_flat(bn->rmean.v.data(), n);
    perm_flat(bn->rvar.v.data(), n);
  }
  return order;
}

}  // namespace sflex
