#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sflex/kernels.hpp"

namespace sflex::kern {

namespace {

struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> t;  // weight of i1
};

// half-pixel centers, edge clamp
Taps make_taps(int in, int out) {
  Taps tp;
  tp.i0.resize(out);
  tp.i1.resize(out);
  tp.t.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    int i0 = static_cast<int>(std::floor(s));
    double t = s - i0;
    int i1 = i0 + 1;
    tp.i0[o] = std::clamp(i0, 0, in - 1);
    tp.i1[o] = std::clamp(i1, 0, in - 1);
    tp.t[o] = t;
  }
  return tp;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int oh, int ow) {
  const int n = x.n(), c = x.c(), ih = x.h(), iw = x.w();
  if (oh == ih && ow == iw) return x;
  Tensor out({n, c, oh, ow});
  const Taps ty = make_taps(ih, oh), tx = make_taps(iw, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.data() + x.idx(b, ch, 0, 0);
      double* dst = out.data() + out.idx(b, ch, 0, 0);
      for (int oy = 0; oy < oh; ++oy) {
        const double wy = ty.t[oy];
        const double* r0 = src + static_cast<size_t>(ty.i0[oy]) * iw;
        const double* r1 = src + static_cast<size_t>(ty.i1[oy]) * iw;
        for (int ox = 0; ox < ow; ++ox) {
          const double wx = tx.t[ox];
          const double a = r0[tx.i0[ox]] * (1 - wx) + r0[tx.i1[ox]] * wx;
          const double bv = r1[tx.i0[ox]] * (1 - wx) + r1[tx.i1[ox]] * wx;
          dst[static_cast<size_t>(oy) * ow + ox] = a * (1 - wy) + bv * wy;
        }
      }
    }
  }
  return out;
}

Tensor bilinear_resize_backward(const Tensor& gy, int ih, int iw) {
  const int n = gy.n(), c = gy.c(), oh = gy.h(), ow = gy.w();
  if (oh == ih && ow == iw) return gy;
  Tensor gx({n, c, ih, iw});
  const Taps ty = make_taps(ih, oh), tx = make_taps(iw, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* g = gy.data() + gy.idx(b, ch, 0, 0);
      double* dst = gx.data() + gx.idx(b, ch, 0, 0);
      for (int oy = 0; oy < oh; ++oy) {
        const double wy = ty.t[oy];
        for (int ox = 0; ox < ow; ++ox) {
          const double wx = tx.t[ox];
          const double gv = g[static_cast<size_t>(oy) * ow + ox];
          dst[static_cast<size_t>(ty.i0[oy]) * iw + tx.i0[ox]] += gv * (1 - wy) * (1 - wx);
          dst[static_cast<size_t>(ty.i0[oy]) * iw + tx.i1[ox]] += gv * (1 - wy) * wx;
          dst[static_cast<size_t>(ty.i1[oy]) * iw + tx.i0[ox]] += gv * wy * (1 - wx);
          dst[static_cast<size_t>(ty.i1[oy]) * iw + tx.i1[ox]] += gv * wy * wx;
        }
      }
    }
  }
  return gx;
}

Tensor warp_horizontal(const Tensor& img, const Tensor& disp) {
  const int n = img.n(), c = img.c(), h = img.h(), w = img.w();
  if (disp.n() != n || disp.c() != 1 || disp.h() != h || disp.w() != w)
    throw std::runtime_error("warp: disp shape " + disp.shape_str());
  Tensor out({n, c, h, w});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = img.data() + img.idx(b, ch, 0, 0);
      const double* dp = disp.data() + disp.idx(b, 0, 0, 0);
      double* dst = out.data() + out.idx(b, ch, 0, 0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double xs = x - dp[static_cast<size_t>(y) * w + x];
          const int x0 = static_cast<int>(std::floor(xs));
          const double t = xs - x0;
          double v = 0;
          if (x0 >= 0 && x0 < w) v += (1 - t) * src[static_cast<size_t>(y) * w + x0];
          if (x0 + 1 >= 0 && x0 + 1 < w) v += t * src[static_cast<size_t>(y) * w + x0 + 1];
          dst[static_cast<size_t>(y) * w + x] = v;
        }
      }
    }
  }
  return out;
}

void warp_horizontal_backward(const Tensor& img, const Tensor& disp, const Tensor& gy,
                              Tensor* gimg, Tensor* gdisp) {
  const int n = img.n(), c = img.c(), h = img.h(), w = img.w();
  if (gimg) {
    gimg->zero();
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const double* dp = disp.data() + disp.idx(b, 0, 0, 0);
        const double* g = gy.data() + gy.idx(b, ch, 0, 0);
        double* dst = gimg->data() + gimg->idx(b, ch, 0, 0);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double xs = x - dp[static_cast<size_t>(y) * w + x];
            const int x0 = static_cast<int>(std::floor(xs));
            const double t = xs - x0;
            const double gv = g[static_cast<size_t>(y) * w + x];
            if (x0 >= 0 && x0 < w) dst[static_cast<size_t>(y) * w + x0] += (1 - t) * gv;
            if (x0 + 1 >= 0 && x0 + 1 < w) dst[static_cast<size_t>(y) * w + x0 + 1] += t * gv;
          }
        }
      }
    }
  }
  if (gdisp) {
    gdisp->zero();
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int y = 0; y < h; ++y) {
        const double* dp = disp.data() + disp.idx(b, 0, 0, 0);
        double* dd = gdisp->data() + gdisp->idx(b, 0, 0, 0);
        for (int x = 0; x < w; ++x) {
          const double xs = x - dp[static_cast<size_t>(y) * w + x];
          const int x0 = static_cast<int>(std::floor(xs));
          double acc = 0;
          for (int ch = 0; ch < c; ++ch) {
            const double* src = img.data() + img.idx(b, ch, 0, 0);
            const double gv = gy[gy.idx(b, ch, y, x)];
            double v0 = (x0 >= 0 && x0 < w) ? src[static_cast<size_t>(y) * w + x0] : 0.0;
            double v1 =
                (x0 + 1 >= 0 && x0 + 1 < w) ? src[static_cast<size_t>(y) * w + x0 + 1] : 0.0;
            // d out / d xs = v1 - v0, and d xs / d disp = -1
            acc += gv * (v0 - v1);
          }
          dd[static_cast<size_t>(y) * w + x] = acc;
        }
      }
    }
  }
}

Tensor correlation(const Tensor& fl, const Tensor& fr, int dmax) {
  const int n = fl.n(), c = fl.c(), h = fl.h(), w = fl.w();
  if (!fl.same_shape(fr)) throw std::runtime_error("correlation: shape mismatch");
  Tensor out({n, dmax, h, w});
  const double inv_c = 1.0 / c;
  const size_t plane = static_cast<size_t>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int d = 0; d < dmax; ++d) {
      double* dst = out.data() + (static_cast<size_t>(b) * dmax + d) * plane;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double acc = 0;
          if (x - d >= 0) {
            const size_t pl = static_cast<size_t>(y) * w + x;
            const size_t pr = pl - d;
            const double* l = fl.data() + static_cast<size_t>(b) * c * plane;
            const double* r = fr.data() + static_cast<size_t>(b) * c * plane;
            for (int ch = 0; ch < c; ++ch)
              acc += l[ch * plane + pl] * r[ch * plane + pr];
            acc *= inv_c;
          }
          dst[static_cast<size_t>(y) * w + x] = acc;
        }
      }
    }
  }
  return out;
}

void correlation_backward(const Tensor& fl, const Tensor& fr, const Tensor& gy,
                          Tensor* gfl, Tensor* gfr) {
  const int n = fl.n(), c = fl.c(), h = fl.h(), w = fl.w();
  const int dmax = gy.c();
  const double inv_c = 1.0 / c;
  const size_t plane = static_cast<size_t>(h) * w;
  if (gfl) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const double* r = fr.data() + (static_cast<size_t>(b) * c + ch) * plane;
        const double* g = gy.data() + static_cast<size_t>(b) * dmax * plane;
        double* dst = gfl->data() + (static_cast<size_t>(b) * c + ch) * plane;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            double acc = 0;
            const int dm = std::min(dmax - 1, x);
            for (int d = 0; d <= dm; ++d)
              acc += g[d * plane + static_cast<size_t>(y) * w + x] *
                     r[static_cast<size_t>(y) * w + x - d];
            dst[static_cast<size_t>(y) * w + x] = acc * inv_c;
          }
        }
      }
    }
  }
  if (gfr) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const double* l = fl.data() + (static_cast<size_t>(b) * c + ch) * plane;
        const double* g = gy.data() + static_cast<size_t>(b) * dmax * plane;
        double* dst = gfr->data() + (static_cast<size_t>(b) * c + ch) * plane;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            double acc = 0;
            const int dm = std::min(dmax - 1, w - 1 - x);
            for (int d = 0; d <= dm; ++d)
              acc += g[d * plane + static_cast<size_t>(y) * w + x + d] *
                     l[static_cast<size_t>(y) * w + x + d];
            dst[static_cast<size_t>(y) * w + x] = acc * inv_c;
          }
        }
      }
    }
  }
}

}  // namespace sflex::kern
