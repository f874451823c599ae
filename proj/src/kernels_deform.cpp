#include <cmath>
#include <stdexcept>
#include <vector>

#include "sflex/kernels.hpp"

namespace sflex::kern {

namespace {

// bilinear sample with zero padding; also reports the four taps so the
// backward pass can reuse them
struct Sample {
  int y0, x0;
  double ty, tx;  // fractional parts
};

inline double bilin(const double* plane, int h, int w, double py, double px, Sample* s) {
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  const double ty = py - y0, tx = px - x0;
  if (s) *s = {y0, x0, ty, tx};
  double v = 0;
  const bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
  const bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
  if (y0in && x0in) v += (1 - ty) * (1 - tx) * plane[static_cast<size_t>(y0) * w + x0];
  if (y0in && x1in) v += (1 - ty) * tx * plane[static_cast<size_t>(y0) * w + x0 + 1];
  if (y1in && x0in) v += ty * (1 - tx) * plane[static_cast<size_t>(y0 + 1) * w + x0];
  if (y1in && x1in) v += ty * tx * plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
  return v;
}

}  // namespace

Tensor deform_conv3x3(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Tensor& offsets) {
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = w.dim(0);
  if (w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::runtime_error("deform_conv3x3: weight shape " + w.shape_str());
  if (offsets.c() != 18 || offsets.h() != h || offsets.w() != wd)
    throw std::runtime_error("deform_conv3x3: offsets shape " + offsets.shape_str());
  const size_t plane = static_cast<size_t>(h) * wd;

  // stage 1: gather the 9 deformed taps for every input channel
  Tensor sampled({n, cin, 9, static_cast<int>(plane)});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = x.data() + (static_cast<size_t>(b) * cin + ci) * plane;
      const double* off = offsets.data() + static_cast<size_t>(b) * 18 * plane;
      double* dst = sampled.data() + ((static_cast<size_t>(b) * cin + ci) * 9) * plane;
      for (int j = 0; j < 9; ++j) {
        const int ky = j / 3, kx = j % 3;
        const double* oy = off + static_cast<size_t>(2 * j) * plane;
        const double* ox = off + static_cast<size_t>(2 * j + 1) * plane;
        double* row = dst + static_cast<size_t>(j) * plane;
        for (int y = 0; y < h; ++y) {
          for (int xq = 0; xq < wd; ++xq) {
            const size_t p = static_cast<size_t>(y) * wd + xq;
            const double py = y - 1 + ky + oy[p];
            const double px = xq - 1 + kx + ox[p];
            row[p] = bilin(src, h, wd, py, px, nullptr);
          }
        }
      }
    }
  }

  // stage 2: weighted sum over (ci, tap)
  Tensor out({n, cout, h, wd});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout; ++co) {
      double* dst = out.data() + (static_cast<size_t>(b) * cout + co) * plane;
      const double b0 = bias ? (*bias)[co] : 0.0;
      for (size_t p = 0; p < plane; ++p) dst[p] = b0;
      for (int ci = 0; ci < cin; ++ci) {
        for (int j = 0; j < 9; ++j) {
          const double wv = w[(static_cast<size_t>(co) * cin + ci) * 9 + j];
          const double* row =
              sampled.data() + ((static_cast<size_t>(b) * cin + ci) * 9 + j) * plane;
          for (size_t p = 0; p < plane; ++p) dst[p] += wv * row[p];
        }
      }
    }
  }
  return out;
}

void deform_conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& offsets,
                             const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb,
                             Tensor* goffsets) {
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = w.dim(0);
  const size_t plane = static_cast<size_t>(h) * wd;

  // recomputed tap buffer, same as forward stage 1
  Tensor sampled({n, cin, 9, static_cast<int>(plane)});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = x.data() + (static_cast<size_t>(b) * cin + ci) * plane;
      const double* off = offsets.data() + static_cast<size_t>(b) * 18 * plane;
      double* dst = sampled.data() + ((static_cast<size_t>(b) * cin + ci) * 9) * plane;
      for (int j = 0; j < 9; ++j) {
        const int ky = j / 3, kx = j % 3;
        const double* oy = off + static_cast<size_t>(2 * j) * plane;
        const double* ox = off + static_cast<size_t>(2 * j + 1) * plane;
        double* row = dst + static_cast<size_t>(j) * plane;
        for (int y = 0; y < h; ++y)
          for (int xq = 0; xq < wd; ++xq) {
            const size_t p = static_cast<size_t>(y) * wd + xq;
            row[p] = bilin(src, h, wd, y - 1 + ky + oy[p], xq - 1 + kx + ox[p], nullptr);
          }
      }
    }
  }

  if (gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      double acc = 0;
      for (int b = 0; b < n; ++b) {
        const double* g = gy.data() + (static_cast<size_t>(b) * cout + co) * plane;
        for (size_t p = 0; p < plane; ++p) acc += g[p];
      }
      (*gb)[co] += acc;
    }
  }

  if (gw) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
      for (int ci = 0; ci < cin; ++ci) {
        for (int j = 0; j < 9; ++j) {
          double acc = 0;
          for (int b = 0; b < n; ++b) {
            const double* g = gy.data() + (static_cast<size_t>(b) * cout + co) * plane;
            const double* row =
                sampled.data() + ((static_cast<size_t>(b) * cin + ci) * 9 + j) * plane;
            for (size_t p = 0; p < plane; ++p) acc += g[p] * row[p];
          }
          (*gw)[(static_cast<size_t>(co) * cin + ci) * 9 + j] += acc;
        }
      }
    }
  }

  if (!gx && !goffsets) return;

  // gradient reaching each sampled tap: gsamp[b,ci,j,p] = sum_co w[co,ci,j] gy[b,co,p]
  Tensor gsamp({n, cin, 9, static_cast<int>(plane)});
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ci = 0; ci < cin; ++ci) {
      double* dst = gsamp.data() + ((static_cast<size_t>(b) * cin + ci) * 9) * plane;
      for (size_t q = 0; q < 9 * plane; ++q) dst[q] = 0;
      for (int co = 0; co < cout; ++co) {
        const double* g = gy.data() + (static_cast<size_t>(b) * cout + co) * plane;
        for (int j = 0; j < 9; ++j) {
          const double wv = w[(static_cast<size_t>(co) * cin + ci) * 9 + j];
          double* row = dst + static_cast<size_t>(j) * plane;
          for (size_t p = 0; p < plane; ++p) row[p] += wv * g[p];
        }
      }
    }
  }

  if (gx) {
    gx->zero();
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int ci = 0; ci < cin; ++ci) {
        const double* off = offsets.data() + static_cast<size_t>(b) * 18 * plane;
        const double* gs = gsamp.data() + ((static_cast<size_t>(b) * cin + ci) * 9) * plane;
        double* dst = gx->data() + (static_cast<size_t>(b) * cin + ci) * plane;
        for (int j = 0; j < 9; ++j) {
          const int ky = j / 3, kx = j % 3;
          const double* oy = off + static_cast<size_t>(2 * j) * plane;
          const double* ox = off + static_cast<size_t>(2 * j + 1) * plane;
          const double* row = gs + static_cast<size_t>(j) * plane;
          for (int y = 0; y < h; ++y) {
            for (int xq = 0; xq < wd; ++xq) {
              const size_t p = static_cast<size_t>(y) * wd + xq;
              const double gv = row[p];
              if (gv == 0) continue;
              const double py = y - 1 + ky + oy[p];
              const double px = xq - 1 + kx + ox[p];
              const int y0 = static_cast<int>(std::floor(py));
              const int x0 = static_cast<int>(std::floor(px));
              const double tty = py - y0, ttx = px - x0;
              if (y0 >= 0 && y0 < h && x0 >= 0 && x0 < wd)
                dst[static_cast<size_t>(y0) * wd + x0] += gv * (1 - tty) * (1 - ttx);
              if (y0 >= 0 && y0 < h && x0 + 1 >= 0 && x0 + 1 < wd)
                dst[static_cast<size_t>(y0) * wd + x0 + 1] += gv * (1 - tty) * ttx;
              if (y0 + 1 >= 0 && y0 + 1 < h && x0 >= 0 && x0 < wd)
                dst[static_cast<size_t>(y0 + 1) * wd + x0] += gv * tty * (1 - ttx);
              if (y0 + 1 >= 0 && y0 + 1 < h && x0 + 1 >= 0 && x0 + 1 < wd)
                dst[static_cast<size_t>(y0 + 1) * wd + x0 + 1] += gv * tty * ttx;
            }
          }
        }
      }
    }
  }

  if (goffsets) {
    goffsets->zero();
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b) {
      for (int j = 0; j < 9; ++j) {
        const int ky = j / 3, kx = j % 3;
        const double* oy = offsets.data() + (static_cast<size_t>(b) * 18 + 2 * j) * plane;
        const double* ox = offsets.data() + (static_cast<size_t>(b) * 18 + 2 * j + 1) * plane;
        double* goy = goffsets->data() + (static_cast<size_t>(b) * 18 + 2 * j) * plane;
        double* gox = goffsets->data() + (static_cast<size_t>(b) * 18 + 2 * j + 1) * plane;
        for (int y = 0; y < h; ++y) {
          for (int xq = 0; xq < wd; ++xq) {
            const size_t p = static_cast<size_t>(y) * wd + xq;
            const double py = y - 1 + ky + oy[p];
            const double px = xq - 1 + kx + ox[p];
            const int y0 = static_cast<int>(std::floor(py));
            const int x0 = static_cast<int>(std::floor(px));
            const double tty = py - y0, ttx = px - x0;
            double acc_y = 0, acc_x = 0;
            for (int ci = 0; ci < cin; ++ci) {
              const double gv =
                  gsamp[((static_cast<size_t>(b) * cin + ci) * 9 + j) * plane + p];
              if (gv == 0) continue;
              const double* src = x.data() + (static_cast<size_t>(b) * cin + ci) * plane;
              auto pix = [&](int yy, int xx) -> double {
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) return 0.0;
                return src[static_cast<size_t>(yy) * wd + xx];
              };
              const double v00 = pix(y0, x0), v01 = pix(y0, x0 + 1);
              const double v10 = pix(y0 + 1, x0), v11 = pix(y0 + 1, x0 + 1);
              acc_y += gv * ((1 - ttx) * (v10 - v00) + ttx * (v11 - v01));
              acc_x += gv * ((1 - tty) * (v01 - v00) + tty * (v11 - v10));
            }
            goy[p] = acc_y;
            gox[p] = acc_x;
          }
        }
      }
    }
  }
}

Tensor softargmax(const Tensor& vol, Tensor* probs_cache) {
  const int n = vol.n(), d = vol.c(), h = vol.h(), w = vol.w();
  Tensor out({n, 1, h, w});
  if (probs_cache) *probs_cache = Tensor(vol.shape());
  const size_t plane = static_cast<size_t>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      const double* base = vol.data() + static_cast<size_t>(b) * d * plane;
      for (int x = 0; x < w; ++x) {
        const size_t p = static_cast<size_t>(y) * w + x;
        double mx = base[p];
        for (int k = 1; k < d; ++k) mx = std::max(mx, base[k * plane + p]);
        double z = 0, e = 0;
        for (int k = 0; k < d; ++k) {
          const double pe = std::exp(base[k * plane + p] - mx);
          z += pe;
          e += pe * k;
          if (probs_cache) (*probs_cache)[k * plane + p + static_cast<size_t>(b) * d * plane] = pe;
        }
        const double inv_z = 1.0 / z;
        out[out.idx(b, 0, y, x)] = e * inv_z;
        if (probs_cache) {
          for (int k = 0; k < d; ++k)
            (*probs_cache)[k * plane + p + static_cast<size_t>(b) * d * plane] *= inv_z;
        }
      }
    }
  }
  return out;
}

Tensor softargmax_backward(const Tensor& probs, const Tensor& out, const Tensor& gy) {
  const int n = probs.n(), d = probs.c(), h = probs.h(), w = probs.w();
  Tensor gv(probs.shape());
  const size_t plane = static_cast<size_t>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      const double* pb = probs.data() + static_cast<size_t>(b) * d * plane;
      double* gb = gv.data() + static_cast<size_t>(b) * d * plane;
      for (int x = 0; x < w; ++x) {
        const size_t p = static_cast<size_t>(y) * w + x;
        const double mean = out[out.idx(b, 0, y, x)];
        const double g = gy[gy.idx(b, 0, y, x)];
        for (int k = 0; k < d; ++k)
          gb[k * plane + p] = g * pb[k * plane + p] * (k - mean);
      }
    }
  }
  return gv;
}

double smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask, Tensor* gpred) {
  if (!pred.same_shape(target) || !pred.same_shape(mask))
    throw std::runtime_error("smooth_l1: shape mismatch");
  if (gpred && !gpred->same_shape(pred)) *gpred = Tensor(pred.shape());
  const int n = pred.n(), c = pred.c(), h = pred.h(), w = pred.w();
  const int rows = n * c * h;
  std::vector<double> row_loss(rows, 0.0);
  std::vector<double> row_cnt(rows, 0.0);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* pp = pred.data() + static_cast<size_t>(r) * w;
    const double* tt = target.data() + static_cast<size_t>(r) * w;
    const double* mm = mask.data() + static_cast<size_t>(r) * w;
    double acc = 0, cnt = 0;
    for (int x = 0; x < w; ++x) {
      if (mm[x] == 0) continue;
      const double e = pp[x] - tt[x];
      const double a = std::abs(e);
      acc += a < 1.0 ? 0.5 * e * e : a - 0.5;
      cnt += 1;
    }
    row_loss[r] = acc;
    row_cnt[r] = cnt;
  }
  double total = 0, count = 0;
  for (int r = 0; r < rows; ++r) {
    total += row_loss[r];
    count += row_cnt[r];
  }
  if (count == 0) {
    if (gpred) gpred->zero();
    return 0.0;
  }
  const double loss = total / count;
  if (gpred) {
    const double scale = 1.0 / count;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
      const double* pp = pred.data() + static_cast<size_t>(r) * w;
      const double* tt = target.data() + static_cast<size_t>(r) * w;
      const double* mm = mask.data() + static_cast<size_t>(r) * w;
      double* gg = gpred->data() + static_cast<size_t>(r) * w;
      for (int x = 0; x < w; ++x) {
        if (mm[x] == 0) {
          gg[x] = 0;
          continue;
        }
        const double e = pp[x] - tt[x];
        gg[x] = scale * (std::abs(e) < 1.0 ? e : (e > 0 ? 1.0 : -1.0));
      }
    }
  }
  return loss;
}

}  // namespace sflex::kern
