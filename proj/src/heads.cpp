#include "sflex/heads.hpp"

#include <cmath>
#include <stdexcept>

#include "sflex/kernels.hpp"

namespace sflex {

Tensor RegressionHead::forward(const Tensor& vol, bool train) {
  Tensor out = kern::softargmax(vol, train ? &probs_ : nullptr);
  if (train) {
    out_ = out;
    live_ = true;
  }
  return out;
}

Tensor RegressionHead::backward(const Tensor& gy) {
  if (!live_) throw std::runtime_error("regression backward without forward");
  live_ = false;
  return kern::softargmax_backward(probs_, out_, gy);
}

Tensor upsample_disparity(const Tensor& disp, int oh, int ow) {
  const double s = static_cast<double>(ow) / disp.w();
  Tensor up = kern::bilinear_resize(disp, oh, ow);
  for (int64_t i = 0; i < up.numel(); ++i) up[i] *= s;
  return up;
}

RefineModule::RefineModule(const std::string& name, int channels,
                           const std::vector<int>& mid_dilations) {
  conv_in = Conv2d(name + ".in", 10, channels, 3, 1, 1, 1, 1, false);
  bns.emplace_back(name + ".in_bn", channels);
  for (size_t i = 0; i < mid_dilations.size(); ++i) {
    const int d = mid_dilations[i];
    mids.emplace_back(name + ".m" + std::to_string(i), channels, channels, 3, 1, d, d, 1,
                      false);
    bns.emplace_back(name + ".m" + std::to_string(i) + "_bn", channels);
  }
  conv_out = Conv2d(name + ".out", channels, 1, 3, 1, 1, 1, 1, true);
  relus_.resize(1 + mid_dilations.size());
}

void RefineModule::init(Rng& rng) {
  conv_in.init(rng);
  for (auto& m : mids) m.init(rng);
  conv_out.init_zero();
}

void RefineModule::collect(ParamRefs& r) {
  conv_in.collect(r);
  bns[0].collect(r);
  for (size_t i = 0; i < mids.size(); ++i) {
    mids[i].collect(r);
    bns[i + 1].collect(r);
  }
  conv_out.collect(r);
}

Tensor RefineModule::forward(const Tensor& disp, const Tensor& left, const Tensor& right,
                             bool train) {
  if (disp.c() != 1 || left.c() != 3 || !left.same_shape(right))
    throw std::invalid_argument("refine input shapes");
  const int th = left.h(), tw = left.w();
  src_h_ = disp.h();
  src_w_ = disp.w();
  vscale_ = static_cast<double>(tw) / disp.w();

  Tensor upv = upsample_disparity(disp, th, tw);
  Tensor warped = kern::warp_horizontal(right, upv);
  Tensor err(warped.shape());
  Tensor sign(warped.shape());
  for (int64_t i = 0; i < err.numel(); ++i) {
    const double e = left[i] - warped[i];
    err[i] = std::abs(e);
    sign[i] = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
  }
  Tensor inp = channel_concat(channel_concat(left, warped), channel_concat(err, upv));

  Tensor h = relus_[0].forward(bns[0].forward(conv_in.forward(inp, train), train), train);
  for (size_t i = 0; i < mids.size(); ++i)
    h = relus_[i + 1].forward(bns[i + 1].forward(mids[i].forward(h, train), train), train);
  Tensor r = conv_out.forward(h, train);

  Tensor pre = upv;
  for (int64_t i = 0; i < pre.numel(); ++i) pre[i] += r[i];
  Tensor out = clamp_.forward(pre, train);
  if (train) {
    right_ = right;
    upv_ = upv;
    sign_ = sign;
    live_ = true;
  }
  return out;
}

Tensor RefineModule::backward(const Tensor& gy) {
  if (!live_) throw std::runtime_error("refine backward without forward");
  live_ = false;
  Tensor gpre = clamp_.backward(gy);

  Tensor gh = conv_out.backward(gpre);
  for (int i = (int)mids.size() - 1; i >= 0; --i)
    gh = mids[i].backward(bns[i + 1].backward(relus_[i + 1].backward(gh)));
  Tensor ginp = conv_in.backward(bns[0].backward(relus_[0].backward(gh)));

  Tensor gwarp = channel_slice(ginp, 3, 6);
  Tensor gerr = channel_slice(ginp, 6, 9);
  for (int64_t i = 0; i < gwarp.numel(); ++i) gwarp[i] += -sign_[i] * gerr[i];
  Tensor gupv = channel_slice(ginp, 9, 10);
  for (int64_t i = 0; i < gupv.numel(); ++i) gupv[i] += gpre[i];

  Tensor gdisp_w(upv_.shape());
  kern::warp_horizontal_backward(right_, upv_, gwarp, nullptr, &gdisp_w);
  for (int64_t i = 0; i < gupv.numel(); ++i) gupv[i] += gdisp_w[i];

  Tensor gup = kern::bilinear_resize_backward(gupv, src_h_, src_w_);
  for (int64_t i = 0; i < gup.numel(); ++i) gup[i] *= vscale_;
  return gup;
}

}  // namespace sflex
