#include "sflex/nn.hpp"

#include <stdexcept>

namespace sflex {

Tensor slice_out_channels(const Tensor& w, int keep) {
  const int co = w.dim(0);
  if (keep == co) return w;
  if (keep > co) throw std::invalid_argument("slice_out_channels: keep > cout");
  std::vector<int> shape = w.shape();
  shape[0] = keep;
  Tensor out(shape);
  const int64_t row = w.numel() / co;
  std::copy(w.data(), w.data() + keep * row, out.data());
  return out;
}

Tensor slice_in_channels(const Tensor& w, int keep) {
  const int co = w.dim(0), ci = w.dim(1);
  if (keep == ci) return w;
  if (keep > ci) throw std::invalid_argument("slice_in_channels: keep > cin");
  std::vector<int> shape = w.shape();
  shape[1] = keep;
  Tensor out(shape);
  const int64_t tap = w.numel() / (int64_t(co) * ci);
  for (int o = 0; o < co; ++o)
    std::copy(w.data() + (int64_t(o) * ci) * tap, w.data() + (int64_t(o) * ci + keep) * tap,
              out.data() + int64_t(o) * keep * tap);
  return out;
}

void add_out_channel_grad(Tensor& gfull, const Tensor& gsub) {
  const int co = gfull.dim(0), keep = gsub.dim(0);
  const int64_t row = gfull.numel() / co;
  if (gsub.numel() != keep * row) throw std::invalid_argument("add_out_channel_grad shape");
  for (int64_t i = 0; i < keep * row; ++i) gfull[i] += gsub[i];
}

void add_in_channel_grad(Tensor& gfull, const Tensor& gsub) {
  const int co = gfull.dim(0), ci = gfull.dim(1), keep = gsub.dim(1);
  const int64_t tap = gfull.numel() / (int64_t(co) * ci);
  if (gsub.dim(0) != co) throw std::invalid_argument("add_in_channel_grad shape");
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < keep; ++c)
      for (int64_t t = 0; t < tap; ++t)
        gfull[(int64_t(o) * ci + c) * tap + t] += gsub[(int64_t(o) * keep + c) * tap + t];
}

Tensor permute_channels(const Tensor& t, int axis, const std::vector<int>& order) {
  if (t.ndim() != 4 || (axis != 0 && axis != 1))
    throw std::invalid_argument("permute_channels wants a 4-d tensor, axis 0 or 1");
  const int n = t.dim(axis);
  if ((int)order.size() != n) throw std::invalid_argument("permute_channels order size");
  Tensor out(t.shape());
  if (axis == 0) {
    const int64_t row = t.numel() / n;
    for (int i = 0; i < n; ++i)
      std::copy(t.data() + int64_t(order[i]) * row, t.data() + (int64_t(order[i]) + 1) * row,
                out.data() + int64_t(i) * row);
  } else {
    const int co = t.dim(0);
    const int64_t tap = t.numel() / (int64_t(co) * n);
    for (int o = 0; o < co; ++o)
      for (int i = 0; i < n; ++i)
        std::copy(t.data() + (int64_t(o) * n + order[i]) * tap,
                  t.data() + (int64_t(o) * n + order[i] + 1) * tap,
                  out.data() + (int64_t(o) * n + i) * tap);
  }
  return out;
}

}  // namespace sflex
