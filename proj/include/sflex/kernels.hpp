#pragma once

#include <vector>

#include "sflex/tensor.hpp"

// Numeric kernels. All take NCHW double tensors. The primary implementations
// are OpenMP-parallel but deterministic: every output element (and every
// shared reduction) is accumulated in a fixed serial order independent of the
// thread count, so results are bit-identical for any OMP_NUM_THREADS.
// kern::ref holds plain single-threaded loop-nest implementations used as a
// cross-check in tests and as the baseline in the benchmark tool.

namespace sflex::kern {

struct ConvGeom {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// w is [cout, cin/groups, kh, kw]; bias (optional) is [cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g);
// Any of gx/gw/gb may be null. gw/gb are accumulated into (caller zeroes).
void conv2d_backward(const Tensor& x, const Tensor& w, const ConvGeom& g, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb);

struct BnCache {
  Tensor xhat;                  // [n, cact, h, w]
  std::vector<double> invstd;   // per active channel
  int cact = 0;
};

// Batch statistics over (n, h, w) of the first cact channels of x (x itself
// has exactly cact channels; callers slice first). Updates running stats.
Tensor bn_forward_train(const Tensor& x, const double* gamma, const double* beta,
                        double* run_mean, double* run_var, double momentum, double eps,
                        BnCache* cache);
Tensor bn_forward_eval(const Tensor& x, const double* gamma, const double* beta,
                       const double* run_mean, const double* run_var, double eps);
// Full backward through the batch statistics. ggamma/gbeta accumulated into.
Tensor bn_backward(const Tensor& gy, const BnCache& cache, const double* gamma,
                   double* ggamma, double* gbeta);

Tensor relu(const Tensor& x);
// y is the forward output (mask comes from y > 0)
Tensor relu_backward(const Tensor& y, const Tensor& gy);

// Half-pixel-center bilinear resize with edge clamp.
Tensor bilinear_resize(const Tensor& x, int oh, int ow);
Tensor bilinear_resize_backward(const Tensor& gy, int ih, int iw);

// out(x) = img(x - disp(x)) along the row, bilinear subpixel, zero outside.
// disp is [n,1,h,w], img is [n,c,h,w].
Tensor warp_horizontal(const Tensor& img, const Tensor& disp);
void warp_horizontal_backward(const Tensor& img, const Tensor& disp, const Tensor& gy,
                              Tensor* gimg, Tensor* gdisp);

// cost(n,d,y,x) = <fl(n,:,y,x), fr(n,:,y,x-d)> / c, zero where x-d < 0.
Tensor correlation(const Tensor& fl, const Tensor& fr, int dmax);
void correlation_backward(const Tensor& fl, const Tensor& fr, const Tensor& gy,
                          Tensor* gfl, Tensor* gfr);

// 3x3 deformable conv, stride 1, pad 1, dilation 1, offset group 1.
// offsets is [n, 18, h, w]; channel 2*j is the y offset and 2*j+1 the x
// offset of tap j = ky*3+kx. Samples bilinearly, zero outside the image.
Tensor deform_conv3x3(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Tensor& offsets);
void deform_conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& offsets,
                             const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb,
                             Tensor* goffsets);

// vol is [n, d, h, w]; returns expectation over softmax(vol) of the index.
Tensor softargmax(const Tensor& vol, Tensor* probs_cache);
Tensor softargmax_backward(const Tensor& probs, const Tensor& out, const Tensor& gy);

// Smooth L1 with beta = 1, averaged over elements where mask != 0.
// If gpred is non-null it receives dLoss/dpred (zero where masked out).
double smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask, Tensor* gpred);

namespace ref {
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g);
void conv2d_backward(const Tensor& x, const Tensor& w, const ConvGeom& g, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb);
Tensor bn_forward_train(const Tensor& x, const double* gamma, const double* beta,
                        double* run_mean, double* run_var, double momentum, double eps,
                        BnCache* cache);
Tensor bn_backward(const Tensor& gy, const BnCache& cache, const double* gamma,
                   double* ggamma, double* gbeta);
Tensor bilinear_resize(const Tensor& x, int oh, int ow);
Tensor warp_horizontal(const Tensor& img, const Tensor& disp);
Tensor correlation(const Tensor& fl, const Tensor& fr, int dmax);
void correlation_backward(const Tensor& fl, const Tensor& fr, const Tensor& gy,
                          Tensor* gfl, Tensor* gfr);
Tensor deform_conv3x3(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Tensor& offsets);
Tensor softargmax(const Tensor& vol, Tensor* probs_cache);
}  // namespace ref

}  // namespace sflex::kern
