#include <algorithm>
#include <cmath>

#include "sflex/kernels.hpp"

// Plain single-threaded implementations kept deliberately naive. These are
// the ground truth the parallel kernels are checked against and the baseline
// for the benchmark tool. No fast paths, one obvious loop nest per op.

namespace sflex::kern::ref {

namespace {

double sample_zero_pad(const Tensor& x, int b, int c, int y, int xx) {
  if (y < 0 || y >= x.h() || xx < 0 || xx >= x.w()) return 0.0;
  return x.at(b, c, y, xx);
}

double bilin_zero_pad(const Tensor& x, int b, int c, double py, double px) {
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  const double ty = py - y0, tx = px - x0;
  return (1 - ty) * (1 - tx) * sample_zero_pad(x, b, c, y0, x0) +
         (1 - ty) * tx * sample_zero_pad(x, b, c, y0, x0 + 1) +
         ty * (1 - tx) * sample_zero_pad(x, b, c, y0 + 1, x0) +
         ty * tx * sample_zero_pad(x, b, c, y0 + 1, x0 + 1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g) {
  const int n = x.n(), cin = x.c(), ih = x.h(), iw = x.w();
  const int cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = conv_out_dim(ih, kh, g.stride, g.pad, g.dilation);
  const int ow = conv_out_dim(iw, kw, g.stride, g.pad, g.dilation);
  const int copg = cout / g.groups;
  (void)cin;
  Tensor out({n, cout, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          const int grp = co / copg;
          for (int ci = 0; ci < cpg; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                acc += w.at(co, ci, ky, kx) *
                       sample_zero_pad(x, b, grp * cpg + ci,
                                       oy * g.stride - g.pad + ky * g.dilation,
                                       ox * g.stride - g.pad + kx * g.dilation);
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvGeom& g, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
  const int n = x.n(), ih = x.h(), iw = x.w();
  const int cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = gy.h(), ow = gy.w();
  const int copg = cout / g.groups;
  if (gx) gx->zero();
  // scatter form: walk the forward loop and push gradients back
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co) {
      const int grp = co / copg;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g0 = gy.at(b, co, oy, ox);
          for (int ci = 0; ci < cpg; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * g.stride - g.pad + ky * g.dilation;
                const int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
                if (gw) (*gw)[((static_cast<size_t>(co) * cpg + ci) * kh + ky) * kw + kx] +=
                    g0 * x.at(b, grp * cpg + ci, iy, ix);
                if (gx) gx->at(b, grp * cpg + ci, iy, ix) += g0 * w.at(co, ci, ky, kx);
              }
        }
    }
  if (gb)
    for (int co = 0; co < cout; ++co)
      for (int b = 0; b < n; ++b)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) (*gb)[co] += gy.at(b, co, oy, ox);
}

Tensor bn_forward_train(const Tensor& x, const double* gamma, const double* beta,
                        double* run_mean, double* run_var, double momentum, double eps,
                        BnCache* cache) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const double cnt = static_cast<double>(n) * h * w;
  Tensor out(x.shape());
  if (cache) {
    cache->xhat = Tensor(x.shape());
    cache->invstd.assign(c, 0.0);
    cache->cact = c;
  }
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) sum += x.at(b, ch, y, xx);
    const double mean = sum / cnt;
    double var = 0;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double d = x.at(b, ch, y, xx) - mean;
          var += d * d;
        }
    var /= cnt;
    const double invstd = 1.0 / std::sqrt(var + eps);
    if (cache) cache->invstd[ch] = invstd;
    run_mean[ch] = (1.0 - momentum) * run_mean[ch] + momentum * mean;
    run_var[ch] = (1.0 - momentum) * run_var[ch] + momentum * var;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double xh = (x.at(b, ch, y, xx) - mean) * invstd;
          if (cache) cache->xhat.at(b, ch, y, xx) = xh;
          out.at(b, ch, y, xx) = gamma[ch] * xh + beta[ch];
        }
  }
  return out;
}

Tensor bn_backward(const Tensor& gy, const BnCache& cache, const double* gamma,
                   double* ggamma, double* gbeta) {
  const int n = gy.n(), c = gy.c(), h = gy.h(), w = gy.w();
  const double cnt = static_cast<double>(n) * h * w;
  Tensor gx(gy.shape());
  for (int ch = 0; ch < c; ++ch) {
    double sg = 0, sgx = 0;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          sg += gy.at(b, ch, y, xx);
          sgx += gy.at(b, ch, y, xx) * cache.xhat.at(b, ch, y, xx);
        }
    ggamma[ch] += sgx;
    gbeta[ch] += sg;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          gx.at(b, ch, y, xx) = gamma[ch] * cache.invstd[ch] *
                                (gy.at(b, ch, y, xx) - sg / cnt -
                                 cache.xhat.at(b, ch, y, xx) * sgx / cnt);
  }
  return gx;
}

Tensor bilinear_resize(const Tensor& x, int oh, int ow) {
  const int n = x.n(), c = x.c(), ih = x.h(), iw = x.w();
  Tensor out({n, c, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double sy = (oy + 0.5) * ih / oh - 0.5;
          const double sx = (ox + 0.5) * iw / ow - 0.5;
          int y0 = static_cast<int>(std::floor(sy));
          int x0 = static_cast<int>(std::floor(sx));
          const double ty = sy - y0, tx = sx - x0;
          auto cl = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
          const double v =
              (1 - ty) * ((1 - tx) * x.at(b, ch, cl(y0, ih), cl(x0, iw)) +
                          tx * x.at(b, ch, cl(y0, ih), cl(x0 + 1, iw))) +
              ty * ((1 - tx) * x.at(b, ch, cl(y0 + 1, ih), cl(x0, iw)) +
                    tx * x.at(b, ch, cl(y0 + 1, ih), cl(x0 + 1, iw)));
          out.at(b, ch, oy, ox) = v;
        }
  return out;
}

Tensor warp_horizontal(const Tensor& img, const Tensor& disp) {
  const int n = img.n(), c = img.c(), h = img.h(), w = img.w();
  Tensor out({n, c, h, w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double xs = x - disp.at(b, 0, y, x);
          const int x0 = static_cast<int>(std::floor(xs));
          const double t = xs - x0;
          out.at(b, ch, y, x) = (1 - t) * sample_zero_pad(img, b, ch, y, x0) +
                                t * sample_zero_pad(img, b, ch, y, x0 + 1);
        }
  return out;
}

Tensor correlation(const Tensor& fl, const Tensor& fr, int dmax) {
  const int n = fl.n(), c = fl.c(), h = fl.h(), w = fl.w();
  Tensor out({n, dmax, h, w});
  for (int b = 0; b < n; ++b)
    for (int d = 0; d < dmax; ++d)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0;
          if (x - d >= 0)
            for (int ch = 0; ch < c; ++ch) acc += fl.at(b, ch, y, x) * fr.at(b, ch, y, x - d);
          out.at(b, d, y, x) = acc / c;
        }
  return out;
}

void correlation_backward(const Tensor& fl, const Tensor& fr, const Tensor& gy,
                          Tensor* gfl, Tensor* gfr) {
  const int n = fl.n(), c = fl.c(), h = fl.h(), w = fl.w();
  const int dmax = gy.c();
  if (gfl) gfl->zero();
  if (gfr) gfr->zero();
  for (int b = 0; b < n; ++b)
    for (int d = 0; d < dmax; ++d)
      for (int y = 0; y < h; ++y)
        for (int x = d; x < w; ++x) {
          const double g = gy.at(b, d, y, x) / c;
          for (int ch = 0; ch < c; ++ch) {
            if (gfl) gfl->at(b, ch, y, x) += g * fr.at(b, ch, y, x - d);
            if (gfr) gfr->at(b, ch, y, x - d) += g * fl.at(b, ch, y, x);
          }
        }
}

Tensor deform_conv3x3(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Tensor& offsets) {
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = w.dim(0);
  Tensor out({n, cout, h, wd});
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int j = ky * 3 + kx;
                const double py = y - 1 + ky + offsets.at(b, 2 * j, y, xx);
                const double px = xx - 1 + kx + offsets.at(b, 2 * j + 1, y, xx);
                acc += w.at(co, ci, ky, kx) * bilin_zero_pad(x, b, ci, py, px);
              }
          out.at(b, co, y, xx) = acc;
        }
  return out;
}

Tensor softargmax(const Tensor& vol, Tensor* probs_cache) {
  const int n = vol.n(), d = vol.c(), h = vol.h(), w = vol.w();
  Tensor out({n, 1, h, w});
  if (probs_cache) *probs_cache = Tensor(vol.shape());
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double mx = vol.at(b, 0, y, x);
        for (int k = 1; k < d; ++k) mx = std::max(mx, vol.at(b, k, y, x));
        double z = 0;
        for (int k = 0; k < d; ++k) z += std::exp(vol.at(b, k, y, x) - mx);
        double e = 0;
        for (int k = 0; k < d; ++k) {
          const double p = std::exp(vol.at(b, k, y, x) - mx) / z;
          if (probs_cache) probs_cache->at(b, k, y, x) = p;
          e += k * p;
        }
        out.at(b, 0, y, x) = e;
      }
  return out;
}

}  // namespace sflex::kern::ref
