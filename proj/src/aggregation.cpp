#include "sflex/aggregation.hpp"

#include <stdexcept>

#include "sflex/kernels.hpp"

namespace sflex {

ISAModule::ISAModule(const std::string& name, int channels) {
  conv1 = Conv2d(name + ".conv1", channels, channels, 1, 1, 0, 1, 1, false);
  bn1 = BatchNorm(name + ".bn1", channels);
  off_conv = Conv2d(name + ".off", channels, 18, 3, 1, 1, 1, 1, true);
  dweight.setup(name + ".dconv.w", {channels, channels, 3, 3});
  bn2 = BatchNorm(name + ".bn2", channels);
  conv2 = Conv2d(name + ".conv2", channels, channels, 1, 1, 0, 1, 1, true);
}

void ISAModule::init(Rng& rng) {
  conv1.init(rng);
  off_conv.init_zero();
  init_he_normal(dweight, dweight.v.dim(1) * 9, rng);
  conv2.init_zero();
}

void ISAModule::collect(ParamRefs& r) {
  conv1.collect(r);
  bn1.collect(r);
  off_conv.collect(r);
  r.add(dweight);
  bn2.collect(r);
  conv2.collect(r);
}

Tensor ISAModule::forward(const Tensor& x, bool train) {
  Tensor h1 = relu1_.forward(bn1.forward(conv1.forward(x, train), train), train);
  Tensor off = off_conv.forward(h1, train);
  Tensor d = kern::deform_conv3x3(h1, dweight.v, nullptr, off);
  Tensor h2 = relu2_.forward(bn2.forward(d, train), train);
  Tensor y = conv2.forward(h2, train);
  if (!y.same_shape(x)) throw std::runtime_error("isa shape drift");
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  if (train) {
    h1_ = h1;
    off_ = off;
    live_ = true;
  }
  return y;
}

Tensor ISAModule::backward(const Tensor& gy) {
  if (!live_) throw std::runtime_error("isa backward without forward");
  Tensor gh2 = conv2.backward(gy);
  Tensor gd = bn2.backward(relu2_.backward(gh2));
  Tensor gh1(h1_.shape());
  Tensor goff(off_.shape());
  kern::deform_conv3x3_backward(h1_, dweight.v, off_, gd, &gh1, &dweight.g, nullptr, &goff);
  Tensor gh1b = off_conv.backward(goff);
  for (int64_t i = 0; i < gh1.numel(); ++i) gh1[i] += gh1b[i];
  Tensor gx = conv1.backward(bn1.backward(relu1_.backward(gh1)));
  for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy[i];
  live_ = false;
  return gx;
}

CrossScalePath::CrossScalePath(const std::string& name, int s, int k, int dk, int ds)
    : s_(s), k_(k) {
  if (k < s) {
    const int hops = s - k;
    for (int j = 0; j < hops; ++j) {
      const int cout = j == hops - 1 ? ds : dk;
      downs.emplace_back(name + ".d" + std::to_string(j), dk, cout, 3, 2, 1, 1, 1, true);
    }
    relus_.resize(hops > 0 ? hops - 1 : 0);
  } else if (k > s) {
    up = Conv2d(name + ".up", dk, ds, 1, 1, 0, 1, 1, true);
  }
}

void CrossScalePath::init(Rng& rng) {
  for (auto& c : downs) {
    c.init(rng);
    c.b.v.zero();
  }
  if (k_ > s_) {
    up.init(rng);
    up.b.v.zero();
  }
}

void CrossScalePath::collect(ParamRefs& r) {
  for (auto& c : downs) c.collect(r);
  if (k_ > s_) up.collect(r);
}

Tensor CrossScalePath::forward(const Tensor& x, int hs, int ws, bool train) {
  if (k_ == s_) return x;
  if (k_ < s_) {
    Tensor h = x;
    for (size_t j = 0; j < downs.size(); ++j) {
      h = downs[j].forward(h, train);
      if (j + 1 < downs.size()) h = relus_[j].forward(h, train);
    }
    if (h.h() != hs || h.w() != ws) throw std::runtime_error("down path size drift");
    return h;
  }
  in_h_ = x.h();
  in_w_ = x.w();
  return up.forward(kern::bilinear_resize(x, hs, ws), train);
}

Tensor CrossScalePath::backward(const Tensor& gy) {
  if (k_ == s_) return gy;
  if (k_ < s_) {
    Tensor g = gy;
    for (int j = (int)downs.size() - 1; j >= 0; --j) {
      if (j + 1 < (int)downs.size()) g = relus_[j].backward(g);
      g = downs[j].backward(g);
    }
    return g;
  }
  Tensor g = up.backward(gy);
  return kern::bilinear_resize_backward(g, in_h_, in_w_);
}

CSAModule::CSAModule(const std::string& name, const std::vector<int>& bins)
    : smax_((int)bins.size()) {
  paths_.resize((size_t)smax_ * smax_);
  for (int s = 0; s < smax_; ++s)
    for (int k = 0; k < smax_; ++k)
      if (k != s)
        paths_[(size_t)s * smax_ + k] = CrossScalePath(
            name + ".s" + std::to_string(s) + "k" + std::to_string(k), s, k, bins[k], bins[s]);
}

void CSAModule::init(Rng& rng) {
  for (int s = 0; s < smax_; ++s)
    for (int k = 0; k < smax_; ++k)
      if (k != s) path(s, k).init(rng);
}

void CSAModule::collect(ParamRefs& r) {
  for (int s = 0; s < smax_; ++s)
    for (int k = 0; k < smax_; ++k)
      if (k != s) path(s, k).collect(r);
}

std::vector<Tensor> CSAModule::forward(const std::vector<Tensor>& vols, bool train) {
  const int S = (int)vols.size();
  if (S > smax_) throw std::invalid_argument("more scales than the module was built for");
  active_ = S;
  std::vector<Tensor> outs;
  outs.reserve(S);
  for (int s = 0; s < S; ++s) {
    Tensor acc = vols[s];
    for (int k = 0; k < S; ++k) {
      if (k == s) continue;
      Tensor p = path(s, k).forward(vols[k], vols[s].h(), vols[s].w(), train);
      if (!p.same_shape(acc)) throw std::runtime_error("cross scale shape drift");
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += p[i];
    }
    outs.push_back(std::move(acc));
  }
  return outs;
}

std::vector<Tensor> CSAModule::backward(const std::vector<Tensor>& gouts) {
  const int S = active_;
  if (S == 0 || (int)gouts.size() != S)
    throw std::runtime_error("csa backward without matching forward");
  std::vector<Tensor> gvols;
  gvols.reserve(S);
  for (int k = 0; k < S; ++k) gvols.push_back(gouts[k]);  // identity terms
  for (int s = 0; s < S; ++s)
    for (int k = 0; k < S; ++k) {
      if (k == s) continue;
      Tensor g = path(s, k).backward(gouts[s]);
      for (int64_t i = 0; i < g.numel(); ++i) gvols[k][i] += g[i];
    }
  active_ = 0;
  return gvols;
}

AAStack::AAStack(const SearchSpaceDef& space) {
  std::vector<int> bins(space.max_scale());
  for (int s = 0; s < space.max_scale(); ++s) bins[s] = disparity_bins(space.max_disparity, s + 1);
  modules.resize(space.num_aa_modules);
  isa_calls.assign(space.max_scale(), 0);
  for (int m = 0; m < space.num_aa_modules; ++m) {
    const std::string base = "agg.m" + std::to_string(m);
    modules[m].isa.reserve(bins.size());
    for (size_t s = 0; s < bins.size(); ++s)
      modules[m].isa.emplace_back(base + ".isa" + std::to_string(s), bins[s]);
    modules[m].csa = CSAModule(base + ".csa", bins);
  }
}

void AAStack::init(Rng& rng) {
  for (auto& m : modules) {
    for (auto& isa : m.isa) isa.init(rng);
    m.csa.init(rng);
  }
}

void AAStack::collect(ParamRefs& r) {
  for (auto& m : modules) {
    for (auto& isa : m.isa) isa.collect(r);
    m.csa.collect(r);
  }
}

std::vector<Tensor> AAStack::forward(std::vector<Tensor> vols, bool train) {
  active_ = (int)vols.size();
  for (auto& m : modules) {
    for (size_t s = 0; s < vols.size(); ++s) {
      vols[s] = m.isa[s].forward(vols[s], train);
      isa_calls[s]++;
    }
    vols = m.csa.forward(vols, train);
  }
  return vols;
}

std::vector<Tensor> AAStack::backward(std::vector<Tensor> gvols) {
  if (active_ == 0 || (int)gvols.size() != active_)
    throw std::runtime_error("agg backward without matching forward");
  for (int m = (int)modules.size() - 1; m >= 0; --m) {
    gvols = modules[m].csa.backward(gvols);
    for (size_t s = 0; s < gvols.size(); ++s) gvols[s] = modules[m].isa[s].backward(gvols[s]);
  }
  active_ = 0;
  return gvols;
}

}  // namespace sflex
