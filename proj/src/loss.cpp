#include "sflex/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace sflex {

LossWeights LossWeights::defaults(int scales) {
  LossWeights w;
  w.scale_w.assign(scales, 1.0);
  if (scales >= 1) w.scale_w[scales - 1] = 1.0 / 3.0;
  if (scales >= 2) w.scale_w[scales - 2] = 2.0 / 3.0;
  return w;
}

namespace {

// one term: bring pred to the target grid, compare, optionally push the
// weighted gradient back to pred's own grid
double term(const Tensor& pred, const Tensor& target, const Tensor& mask, double weight,
            Tensor* gpred) {
  const int H = target.h(), W = target.w();
  const double vs = static_cast<double>(W) / pred.w();
  Tensor up = kern::bilinear_resize(pred, H, W);
  for (int64_t i = 0; i < up.numel(); ++i) up[i] *= vs;
  Tensor gup;
  double l = kern::smooth_l1(up, target, mask, gpred ? &gup : nullptr);
  if (gpred) {
    Tensor g = kern::bilinear_resize_backward(gup, pred.h(), pred.w());
    const double f = weight * vs;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= f;
    *gpred = g;
  }
  return l;
}

}  // namespace

LossBreakdown supervised_loss(const NetOutputs& out, const Tensor& target, const Tensor& mask,
                              const LossWeights& w, NetGrads* grads) {
  if ((int)w.scale_w.size() < (int)out.scales.size())
    throw std::invalid_argument("not enough scale weights");
  LossBreakdown br;
  br.scale_terms.resize(out.scales.size());
  if (grads) grads->scales.resize(out.scales.size());

  for (size_t s = 0; s < out.scales.size(); ++s) {
    br.scale_terms[s] = term(out.scales[s], target, mask, w.scale_w[s],
                             grads ? &grads->scales[s] : nullptr);
    br.total += w.scale_w[s] * br.scale_terms[s];
  }
  if (out.refine_depth >= 1) {
    br.half_term = term(out.half, target, mask, w.half_w, grads ? &grads->half : nullptr);
    br.total += w.half_w * br.half_term;
  }
  if (out.refine_depth >= 2) {
    br.full_term = term(out.full, target, mask, w.full_w, grads ? &grads->full : nullptr);
    br.total += w.full_w * br.full_term;
  }
  return br;
}

double end_point_error(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (!pred.same_shape(target) || !pred.same_shape(mask))
    throw std::invalid_argument("epe shape mismatch");
  double acc = 0;
  int64_t cnt = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    acc += std::abs(pred[i] - target[i]);
    cnt++;
  }
  if (cnt == 0) throw std::invalid_argument("epe: empty mask");
  return acc / cnt;
}

}  // namespace sflex
