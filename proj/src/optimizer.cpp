#include "sflex/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace sflex {

void Adam::attach(const std::vector<Param*>& ps) {
  params = ps;
  for (Param* p : params) {
    if (slots.count(p->name)) throw std::invalid_argument("duplicate param name " + p->name);
    Slot s;
    s.m = Tensor(p->v.shape());
    s.v = Tensor(p->v.shape());
    slots.emplace(p->name, std::move(s));
  }
}

void Adam::zero_grad() {
  for (Param* p : params) p->g.zero();
}

void Adam::step() {
  t++;
  const double bc1 = 1.0 - std::pow(beta1, (double)t);
  const double bc2 = 1.0 - std::pow(beta2, (double)t);
  for (Param* p : params) {
    Slot& s = slots.at(p->name);
    double* m = s.m.data();
    double* v = s.v.data();
    const double* g = p->g.data();
    double* w = p->v.data();
    const int64_t n = p->v.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

void Adam::permute_slot(const std::string& name, int axis, const std::vector<int>& order) {
  auto it = slots.find(name);
  if (it == slots.end()) throw std::invalid_argument("no optimizer slot for " + name);
  for (Tensor* tns : {&it->second.m, &it->second.v}) {
    if (tns->ndim() == 1) {
      if (axis != 0 || (int)order.size() != tns->dim(0))
        throw std::invalid_argument("bad permutation for " + name);
      Tensor out(tns->shape());
      for (size_t i = 0; i < order.size(); ++i) out[(int64_t)i] = (*tns)[order[i]];
      *tns = out;
    } else {
      *tns = permute_channels(*tns, axis, order);
    }
  }
}

}  // namespace sflex
