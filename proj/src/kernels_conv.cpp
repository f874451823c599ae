#include <cmath>
#include <stdexcept>

#include "sflex/kernels.hpp"

namespace sflex::kern {

namespace {

void check_conv_args(const Tensor& x, const Tensor& w, const ConvGeom& g) {
  if (x.ndim() != 4 || w.ndim() != 4) throw std::runtime_error("conv2d: need 4d tensors");
  if (x.c() != w.dim(1) * g.groups)
    throw std::runtime_error("conv2d: cin mismatch " + x.shape_str() + " vs " + w.shape_str());
  if (w.dim(0) % g.groups != 0) throw std::runtime_error("conv2d: cout not divisible by groups");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g) {
  check_conv_args(x, w, g);
  const int n = x.n(), cin = x.c(), ih = x.h(), iw = x.w();
  const int cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = conv_out_dim(ih, kh, g.stride, g.pad, g.dilation);
  const int ow = conv_out_dim(iw, kw, g.stride, g.pad, g.dilation);
  if (oh <= 0 || ow <= 0) throw std::runtime_error("conv2d: empty output");
  Tensor out({n, cout, oh, ow});

  const double* xp = x.data();
  const double* wp = w.data();
  double* op = out.data();
  const size_t iplane = static_cast<size_t>(ih) * iw;
  const size_t oplane = static_cast<size_t>(oh) * ow;

  if (kh == 1 && kw == 1 && g.groups == 1 && g.stride == 1 && g.pad == 0) {
    // pointwise: out[n,co] = sum_ci w[co,ci] * x[n,ci] over the plane
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int co = 0; co < cout; ++co) {
        double* dst = op + (static_cast<size_t>(b) * cout + co) * oplane;
        double b0 = bias ? (*bias)[co] : 0.0;
        for (size_t p = 0; p < oplane; ++p) dst[p] = b0;
        for (int ci = 0; ci < cin; ++ci) {
          const double wv = wp[static_cast<size_t>(co) * cin + ci];
          const double* src = xp + (static_cast<size_t>(b) * cin + ci) * iplane;
          for (size_t p = 0; p < oplane; ++p) dst[p] += wv * src[p];
        }
      }
    }
    return out;
  }

  if (g.groups == cin && cout == cin && cpg == 1) {
    // depthwise
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < cin; ++c) {
        const double* src = xp + (static_cast<size_t>(b) * cin + c) * iplane;
        const double* wr = wp + static_cast<size_t>(c) * kh * kw;
        double* dst = op + (static_cast<size_t>(b) * cin + c) * oplane;
        const double b0 = bias ? (*bias)[c] : 0.0;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            double acc = b0;
            const int iy0 = oy * g.stride - g.pad;
            const int ix0 = ox * g.stride - g.pad;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= iw) continue;
                acc += wr[ky * kw + kx] * src[static_cast<size_t>(iy) * iw + ix];
              }
            }
            dst[static_cast<size_t>(oy) * ow + ox] = acc;
          }
        }
      }
    }
    return out;
  }

  // general grouped conv
  const int copg = cout / g.groups;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout; ++co) {
      const int grp = co / copg;
      double* dst = op + (static_cast<size_t>(b) * cout + co) * oplane;
      const double b0 = bias ? (*bias)[co] : 0.0;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b0;
          const int iy0 = oy * g.stride - g.pad;
          const int ix0 = ox * g.stride - g.pad;
          for (int ci = 0; ci < cpg; ++ci) {
            const double* src = xp + (static_cast<size_t>(b) * cin + grp * cpg + ci) * iplane;
            const double* wr =
                wp + ((static_cast<size_t>(co) * cpg + ci) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = iy0 + ky * g.dilation;
              if (iy < 0 || iy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= iw) continue;
                acc += wr[ky * kw + kx] * src[static_cast<size_t>(iy) * iw + ix];
              }
            }
          }
          dst[static_cast<size_t>(oy) * ow + ox] = acc;
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvGeom& g, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
  check_conv_args(x, w, g);
  const int n = x.n(), cin = x.c(), ih = x.h(), iw = x.w();
  const int cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = gy.h(), ow = gy.w();
  const int copg = cout / g.groups;
  const size_t iplane = static_cast<size_t>(ih) * iw;
  const size_t oplane = static_cast<size_t>(oh) * ow;
  const double* xp = x.data();
  const double* wp = w.data();
  const double* gyp = gy.data();

  if (gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      double acc = 0;
      for (int b = 0; b < n; ++b) {
        const double* src = gyp + (static_cast<size_t>(b) * cout + co) * oplane;
        for (size_t p = 0; p < oplane; ++p) acc += src[p];
      }
      (*gb)[co] += acc;
    }
  }

  const bool pointwise = kh == 1 && kw == 1 && g.groups == 1 && g.stride == 1 && g.pad == 0;

  if (gw) {
    if (pointwise) {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
          double acc = 0;
          for (int b = 0; b < n; ++b) {
            const double* gsrc = gyp + (static_cast<size_t>(b) * cout + co) * oplane;
            const double* xsrc = xp + (static_cast<size_t>(b) * cin + ci) * iplane;
            for (size_t p = 0; p < oplane; ++p) acc += gsrc[p] * xsrc[p];
          }
          (*gw)[static_cast<size_t>(co) * cin + ci] += acc;
        }
      }
    } else {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < cout; ++co) {
        const int grp = co / copg;
        for (int ci = 0; ci < cpg; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              double acc = 0;
              for (int b = 0; b < n; ++b) {
                const double* gsrc = gyp + (static_cast<size_t>(b) * cout + co) * oplane;
                const double* xsrc =
                    xp + (static_cast<size_t>(b) * cin + grp * cpg + ci) * iplane;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * g.stride - g.pad + ky * g.dilation;
                  if (iy < 0 || iy >= ih) continue;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * g.stride - g.pad + kx * g.dilation;
                    if (ix < 0 || ix >= iw) continue;
                    acc += gsrc[static_cast<size_t>(oy) * ow + ox] *
                           xsrc[static_cast<size_t>(iy) * iw + ix];
                  }
                }
              }
              (*gw)[((static_cast<size_t>(co) * cpg + ci) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
  }

  if (gx) {
    gx->zero();
    double* gxp = gx->data();
    if (pointwise) {
#pragma omp parallel for collapse(2) schedule(static)
      for (int b = 0; b < n; ++b) {
        for (int ci = 0; ci < cin; ++ci) {
          double* dst = gxp + (static_cast<size_t>(b) * cin + ci) * iplane;
          for (int co = 0; co < cout; ++co) {
            const double wv = wp[static_cast<size_t>(co) * cin + ci];
            const double* gsrc = gyp + (static_cast<size_t>(b) * cout + co) * oplane;
            for (size_t p = 0; p < iplane; ++p) dst[p] += wv * gsrc[p];
          }
        }
      }
    } else {
      // gather form: every input element sums the outputs it fed
#pragma omp parallel for collapse(2) schedule(static)
      for (int b = 0; b < n; ++b) {
        for (int ci_full = 0; ci_full < cin; ++ci_full) {
          const int grp = ci_full / cpg;
          const int ci = ci_full % cpg;
          double* dst = gxp + (static_cast<size_t>(b) * cin + ci_full) * iplane;
          for (int iy = 0; iy < ih; ++iy) {
            for (int ix = 0; ix < iw; ++ix) {
              double acc = 0;
              for (int ky = 0; ky < kh; ++ky) {
                const int ty = iy + g.pad - ky * g.dilation;
                if (ty < 0 || ty % g.stride != 0) continue;
                const int oy = ty / g.stride;
                if (oy >= oh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int tx = ix + g.pad - kx * g.dilation;
                  if (tx < 0 || tx % g.stride != 0) continue;
                  const int ox = tx / g.stride;
                  if (ox >= ow) continue;
                  for (int co = grp * copg; co < (grp + 1) * copg; ++co) {
                    acc += wp[((static_cast<size_t>(co) * cpg + ci) * kh + ky) * kw + kx] *
                           gyp[(static_cast<size_t>(b) * cout + co) * oplane +
                               static_cast<size_t>(oy) * ow + ox];
                  }
                }
              }
              dst[static_cast<size_t>(iy) * iw + ix] = acc;
            }
          }
        }
      }
    }
  }
}

Tensor bn_forward_train(const Tensor& x, const double* gamma, const double* beta,
                        double* run_mean, double* run_var, double momentum, double eps,
                        BnCache* cache) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const size_t plane = static_cast<size_t>(h) * w;
  const double cnt = static_cast<double>(n) * plane;
  Tensor out(x.shape());
  if (cache) {
    cache->xhat = Tensor(x.shape());
    cache->invstd.assign(c, 0.0);
    cache->cact = c;
  }
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (int b = 0; b < n; ++b) {
      const double* src = x.data() + (static_cast<size_t>(b) * c + ch) * plane;
      for (size_t p = 0; p < plane; ++p) {
        sum += src[p];
        sq += src[p] * src[p];
      }
    }
    const double mean = sum / cnt;
    double var = sq / cnt - mean * mean;
    if (var < 0) var = 0;
    const double invstd = 1.0 / std::sqrt(var + eps);
    if (cache) cache->invstd[ch] = invstd;
    run_mean[ch] = (1.0 - momentum) * run_mean[ch] + momentum * mean;
    run_var[ch] = (1.0 - momentum) * run_var[ch] + momentum * var;
    for (int b = 0; b < n; ++b) {
      const double* src = x.data() + (static_cast<size_t>(b) * c + ch) * plane;
      double* dst = out.data() + (static_cast<size_t>(b) * c + ch) * plane;
      double* xh = cache ? cache->xhat.data() + (static_cast<size_t>(b) * c + ch) * plane
                         : nullptr;
      for (size_t p = 0; p < plane; ++p) {
        const double v = (src[p] - mean) * invstd;
        if (xh) xh[p] = v;
        dst[p] = gamma[ch] * v + beta[ch];
      }
    }
  }
  return out;
}

Tensor bn_forward_eval(const Tensor& x, const double* gamma, const double* beta,
                       const double* run_mean, const double* run_var, double eps) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor out(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double invstd = 1.0 / std::sqrt(run_var[ch] + eps);
      const double scale = gamma[ch] * invstd;
      const double shift = beta[ch] - run_mean[ch] * scale;
      const double* src = x.data() + (static_cast<size_t>(b) * c + ch) * plane;
      double* dst = out.data() + (static_cast<size_t>(b) * c + ch) * plane;
      for (size_t p = 0; p < plane; ++p) dst[p] = scale * src[p] + shift;
    }
  }
  return out;
}

Tensor bn_backward(const Tensor& gy, const BnCache& cache, const double* gamma,
                   double* ggamma, double* gbeta) {
  const int n = gy.n(), c = gy.c(), h = gy.h(), w = gy.w();
  const size_t plane = static_cast<size_t>(h) * w;
  const double cnt = static_cast<double>(n) * plane;
  Tensor gx(gy.shape());
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double sum_gy = 0, sum_gy_xhat = 0;
    for (int b = 0; b < n; ++b) {
      const double* g = gy.data() + (static_cast<size_t>(b) * c + ch) * plane;
      const double* xh = cache.xhat.data() + (static_cast<size_t>(b) * c + ch) * plane;
      for (size_t p = 0; p < plane; ++p) {
        sum_gy += g[p];
        sum_gy_xhat += g[p] * xh[p];
      }
    }
    ggamma[ch] += sum_gy_xhat;
    gbeta[ch] += sum_gy;
    const double k = gamma[ch] * cache.invstd[ch];
    const double mg = sum_gy / cnt;
    const double mgx = sum_gy_xhat / cnt;
    for (int b = 0; b < n; ++b) {
      const double* g = gy.data() + (static_cast<size_t>(b) * c + ch) * plane;
      const double* xh = cache.xhat.data() + (static_cast<size_t>(b) * c + ch) * plane;
      double* dst = gx.data() + (static_cast<size_t>(b) * c + ch) * plane;
      for (size_t p = 0; p < plane; ++p) dst[p] = k * (g[p] - mg - xh[p] * mgx);
    }
  }
  return gx;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const int64_t m = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& y, const Tensor& gy) {
  Tensor gx(gy.shape());
  const int64_t m = gy.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) gx[i] = y[i] > 0 ? gy[i] : 0.0;
  return gx;
}

}  // namespace sflex::kern
