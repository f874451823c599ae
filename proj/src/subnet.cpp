#include "sflex/subnet.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "sflex/checkpoint.hpp"
#include "sflex/cost_volume.hpp"
#include "sflex/heads.hpp"

namespace sflex {

namespace {

// y = gamma * (conv(x) + b - mean) / sqrt(var + eps) + beta collapses to a
// conv with scaled weights plus a bias, one scale per output channel. dst
// already holds a zero tensor of the target shape, so the source must match.
void fold_into(FoldedConv& dst, Tensor w, const Tensor* bias, const BatchNorm& bn) {
  if (!w.same_shape(dst.w)) throw std::runtime_error("fold shape mismatch");
  const int cout = w.dim(0);
  const int64_t per = w.numel() / cout;
  for (int o = 0; o < cout; ++o) {
    const double s = bn.gamma.v[o] / std::sqrt(bn.rvar.v[(size_t)o] + bn.eps);
    for (int64_t j = 0; j < per; ++j) w[o * per + j] *= s;
    double b0 = bias ? (*bias)[o] : 0.0;
    dst.b[o] = bn.beta.v[o] + s * (b0 - bn.rmean.v[(size_t)o]);
  }
  dst.w = std::move(w);
}

// plain biased conv, taken as is
void copy_into(FoldedConv& dst, const Conv2d& src) {
  if (!src.has_bias()) throw std::runtime_error("copy of a bias-free conv: " + src.w.name);
  if (!src.w.v.same_shape(dst.w)) throw std::runtime_error("copy shape mismatch: " + src.w.name);
  dst.w = src.w.v;
  dst.b = src.b.v;
}

// Allocates the whole conv tree for (space, cfg): shapes, geometry, skip
// flags, path ids. Tensors start zero; extract and load fill them.
void build_structure(Subnet& sn) {
  const SearchSpaceDef& sp = sn.space;
  const ArchConfig& cfg = sn.cfg;
  validate_config(cfg, sp);
  sn.max_disparity = sp.max_disparity;

  auto alloc = [](FoldedConv& c, std::vector<int> wshape, kern::ConvGeom g) {
    c.w = Tensor(wshape);
    c.b = Tensor({wshape[0]});
    c.geom = g;
  };

  alloc(sn.stem, {sp.stem_channels, 3, 3, 3}, {3, 0, 1, 1});

  sn.units.assign(cfg.scale, {});
  for (int u = 0; u < cfg.scale; ++u) {
    const int cout = sp.base_channels[u];
    sn.units[u].resize(cfg.unit_depths[u]);
    for (int i = 0; i < cfg.unit_depths[u]; ++i) {
      const int cin = i == 0 ? (u == 0 ? sp.stem_channels : sp.base_channels[u - 1]) : cout;
      const int stride = (i == 0 && u >= 1) ? 2 : 1;
      const int k = cfg.layer_kernels[u][i];
      const int keep = cfg.layer_widths[u][i] * cin;
      Subnet::Block& blk = sn.units[u][i];
      alloc(blk.expand, {keep, cin, 1, 1}, {1, 0, 1, 1});
      alloc(blk.dw, {keep, 1, k, k}, {stride, k / 2, 1, keep});
      alloc(blk.project, {cout, keep, 1, 1}, {1, 0, 1, 1});
      blk.skip = stride == 1 && cin == cout;
    }
  }

  std::vector<int> bins(cfg.scale);
  for (int s = 0; s < cfg.scale; ++s) bins[s] = disparity_bins(sp.max_disparity, s + 1);

  sn.aa.assign(sp.num_aa_modules, {});
  for (auto& m : sn.aa) {
    m.isa.resize(cfg.scale);
    for (int s = 0; s < cfg.scale; ++s) {
      const int d = bins[s];
      Subnet::Isa& isa = m.isa[s];
      alloc(isa.conv1, {d, d, 1, 1}, {1, 0, 1, 1});
      alloc(isa.off, {18, d, 3, 3}, {1, 1, 1, 1});
      alloc(isa.dconv, {d, d, 3, 3}, {1, 1, 1, 1});
      alloc(isa.conv2, {d, d, 1, 1}, {1, 0, 1, 1});
    }
    for (int s = 0; s < cfg.scale; ++s)
      for (int k = 0; k < cfg.scale; ++k) {
        if (k == s) continue;
        Subnet::Path p;
        p.s = s;
        p.k = k;
        if (k < s) {
          const int hops = s - k;
          p.downs.resize(hops);
          for (int j = 0; j < hops; ++j)
            alloc(p.downs[j], {j == hops - 1 ? bins[s] : bins[k], bins[k], 3, 3}, {2, 1, 1, 1});
        } else {
          alloc(p.up, {bins[s], bins[k], 1, 1}, {1, 0, 1, 1});
        }
        m.paths.push_back(std::move(p));
      }
  }

  sn.refines.resize(cfg.refine_depth);
  for (int r = 0; r < cfg.refine_depth; ++r) {
    const int ch = r == 0 ? sp.refine_channels_half : sp.refine_channels_full;
    const std::vector<int> dil = r == 0 ? std::vector<int>{1, 2, 4} : std::vector<int>{1, 2};
    Subnet::Refine& rf = sn.refines[r];
    alloc(rf.conv_in, {ch, 10, 3, 3}, {1, 1, 1, 1});
    rf.mids.resize(dil.size());
    for (size_t i = 0; i < dil.size(); ++i)
      alloc(rf.mids[i], {ch, ch, 3, 3}, {1, dil[i], dil[i], 1});
    alloc(rf.conv_out, {1, ch, 3, 3}, {1, 1, 1, 1});
  }
}

// every conv under a stable name, in one fixed order
template <typename SN, typename F>
void walk_convs(SN& sn, F&& f) {
  f("stem", sn.stem);
  for (size_t u = 0; u < sn.units.size(); ++u)
    for (size_t i = 0; i < sn.units[u].size(); ++i) {
      const std::string base = "u" + std::to_string(u) + ".b" + std::to_string(i);
      f(base + ".expand", sn.units[u][i].expand);
      f(base + ".dw", sn.units[u][i].dw);
      f(base + ".project", sn.units[u][i].project);
    }
  for (size_t m = 0; m < sn.aa.size(); ++m) {
    const std::string base = "aa" + std::to_string(m);
    for (size_t s = 0; s < sn.aa[m].isa.size(); ++s) {
      const std::string ib = base + ".isa" + std::to_string(s);
      f(ib + ".conv1", sn.aa[m].isa[s].conv1);
      f(ib + ".off", sn.aa[m].isa[s].off);
      f(ib + ".dconv", sn.aa[m].isa[s].dconv);
      f(ib + ".conv2", sn.aa[m].isa[s].conv2);
    }
    for (auto& p : sn.aa[m].paths) {
      const std::string pb =
          base + ".s" + std::to_string(p.s) + "k" + std::to_string(p.k);
      if (p.k < p.s)
        for (size_t j = 0; j < p.downs.size(); ++j) f(pb + ".d" + std::to_string(j), p.downs[j]);
      else
        f(pb + ".up", p.up);
    }
  }
  for (size_t r = 0; r < sn.refines.size(); ++r) {
    const std::string base = "ref" + std::to_string(r);
    f(base + ".in", sn.refines[r].conv_in);
    for (size_t i = 0; i < sn.refines[r].mids.size(); ++i)
      f(base + ".m" + std::to_string(i), sn.refines[r].mids[i]);
    f(base + ".out", sn.refines[r].conv_out);
  }
}

Tensor run_refine(const Subnet::Refine& rf, const Tensor& disp, const Tensor& left,
                  const Tensor& right) {
  const int th = left.h(), tw = left.w();
  Tensor upv = upsample_disparity(disp, th, tw);
  Tensor warped = kern::warp_horizontal(right, upv);
  Tensor err(warped.shape());
  for (int64_t i = 0; i < err.numel(); ++i) err[i] = std::abs(left[i] - warped[i]);
  Tensor inp = channel_concat(channel_concat(left, warped), channel_concat(err, upv));

  Tensor h = kern::relu(rf.conv_in.run(inp));
  for (const FoldedConv& m : rf.mids) h = kern::relu(m.run(h));
  Tensor r = rf.conv_out.run(h);

  Tensor out = std::move(upv);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i] + r[i], 0.0);
  return out;
}

}  // namespace

Subnet Subnet::extract(const Supernet& net, const ArchConfig& cfg) {
  Subnet sn;
  sn.cfg = cfg;
  sn.space = net.space;
  build_structure(sn);

  fold_into(sn.stem, net.extractor.stem.w.v, nullptr, net.extractor.stem_bn);

  for (int u = 0; u < cfg.scale; ++u)
    for (int i = 0; i < cfg.unit_depths[u]; ++i) {
      const ElasticBlock& src = net.extractor.units[u][i];
      Block& blk = sn.units[u][i];
      const int keep = blk.expand.w.dim(0);
      fold_into(blk.expand, slice_out_channels(src.expand.w.v, keep), nullptr, src.bn1);
      fold_into(blk.dw, src.dw.derive(cfg.layer_kernels[u][i], keep), nullptr, src.bn2);
      fold_into(blk.project, slice_in_channels(src.project.w.v, keep), nullptr, src.bn3);
    }

  for (size_t m = 0; m < sn.aa.size(); ++m) {
    const AAModule& src = net.agg.modules[m];
    for (int s = 0; s < cfg.scale; ++s) {
      Isa& isa = sn.aa[m].isa[s];
      fold_into(isa.conv1, src.isa[s].conv1.w.v, nullptr, src.isa[s].bn1);
      copy_into(isa.off, src.isa[s].off_conv);
      // the deformable conv is linear in its weights per output channel, so
      // the trailing normalization folds the same way as for a plain conv
      fold_into(isa.dconv, src.isa[s].dweight.v, nullptr, src.isa[s].bn2);
      copy_into(isa.conv2, src.isa[s].conv2);
    }
    for (Path& p : sn.aa[m].paths) {
      const CrossScalePath& cp = src.csa.path(p.s, p.k);
      if (p.k < p.s)
        for (size_t j = 0; j < p.downs.size(); ++j) copy_into(p.downs[j], cp.downs[j]);
      else
        copy_into(p.up, cp.up);
    }
  }

  for (int r = 0; r < cfg.refine_depth; ++r) {
    const RefineModule& src = r == 0 ? net.refine_half : net.refine_full;
    Refine& rf = sn.refines[r];
    fold_into(rf.conv_in, src.conv_in.w.v, nullptr, src.bns[0]);
    for (size_t i = 0; i < rf.mids.size(); ++i)
      fold_into(rf.mids[i], src.mids[i].w.v, nullptr, src.bns[i + 1]);
    copy_into(rf.conv_out, src.conv_out);
  }
  return sn;
}

Tensor Subnet::forward(const Tensor& left, const Tensor& right) const {
  if (!left.same_shape(right)) throw std::invalid_argument("view shapes differ");
  if (left.c() != 3) throw std::invalid_argument("expected 3-channel views");
  const int div = 3 * (1 << (cfg.scale - 1));
  if (left.h() % div != 0 || left.w() % div != 0)
    throw std::invalid_argument("input size must divide " + std::to_string(div));

  Tensor h = kern::relu(stem.run(batch_concat(left, right)));
  std::vector<Tensor> levels;
  levels.reserve(units.size());
  for (const auto& unit : units) {
    for (const Block& blk : unit) {
      Tensor a = kern::relu(blk.expand.run(h));
      Tensor c = kern::relu(blk.dw.run(a));
      Tensor y = blk.project.run(c);
      if (blk.skip)
        for (int64_t i = 0; i < y.numel(); ++i) y[i] += h[i];
      h = std::move(y);
    }
    levels.push_back(h);
  }

  std::vector<Tensor> vols = build_cost_volumes(levels, max_disparity);
  for (const Aa& m : aa) {
    for (size_t s = 0; s < vols.size(); ++s) {
      const Isa& isa = m.isa[s];
      Tensor h1 = kern::relu(isa.conv1.run(vols[s]));
      Tensor off = isa.off.run(h1);
      Tensor d = kern::deform_conv3x3(h1, isa.dconv.w, &isa.dconv.b, off);
      Tensor y = isa.conv2.run(kern::relu(d));
      for (int64_t i = 0; i < y.numel(); ++i) y[i] += vols[s][i];
      vols[s] = std::move(y);
    }
    std::vector<Tensor> outs = vols;
    for (const Path& p : m.paths) {
      Tensor c;
      if (p.k < p.s) {
        Tensor t = vols[p.k];
        for (size_t j = 0; j < p.downs.size(); ++j) {
          t = p.downs[j].run(t);
          if (j + 1 < p.downs.size()) t = kern::relu(t);
        }
        c = std::move(t);
      } else {
        c = p.up.run(kern::bilinear_resize(vols[p.k], vols[p.s].h(), vols[p.s].w()));
      }
      Tensor& acc = outs[p.s];
      if (!c.same_shape(acc)) throw std::runtime_error("cross scale shape drift");
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += c[i];
    }
    vols = std::move(outs);
  }

  Tensor d0 = kern::softargmax(vols[0], nullptr);
  const int H = left.h(), W = left.w();
  if (cfg.refine_depth == 0) return upsample_disparity(d0, H, W);
  Tensor lh = kern::bilinear_resize(left, H / 2, W / 2);
  Tensor rh = kern::bilinear_resize(right, H / 2, W / 2);
  Tensor half = run_refine(refines[0], d0, lh, rh);
  if (cfg.refine_depth == 1) return upsample_disparity(half, H, W);
  return run_refine(refines[1], half, left, right);
}

long long Subnet::param_count() const {
  long long n = 0;
  walk_convs(*this, [&](const std::string&, const FoldedConv& c) { n += c.params(); });
  return n;
}

void Subnet::save(const std::string& path) const {
  json meta;
  meta["kind"] = "subnet";
  meta["format"] = 1;
  meta["space"] = space.to_json();
  meta["config"] = cfg.to_json();
  meta["params"] = param_count();
  std::vector<NamedTensor> blobs;
  walk_convs(*this, [&](const std::string& n, const FoldedConv& c) {
    blobs.push_back({n + ".w", c.w});
    blobs.push_back({n + ".b", c.b});
  });
  write_bundle(path, meta, blobs);
}

Subnet Subnet::load(const std::string& path) {
  std::map<std::string, Tensor> blobs;
  json meta = read_bundle(path, &blobs);
  if (meta.value("kind", std::string()) != "subnet")
    throw std::runtime_error("not a standalone network file: " + path);
  Subnet sn;
  sn.space = SearchSpaceDef::from_json(meta.at("space"));
  sn.cfg = ArchConfig::from_json(meta.at("config"));
  build_structure(sn);
  walk_convs(sn, [&](const std::string& n, FoldedConv& c) {
    auto take = [&](const std::string& bn, Tensor& dst) {
      auto it = blobs.find(bn);
      if (it == blobs.end()) throw std::runtime_error("missing tensor: " + bn);
      if (!it->second.same_shape(dst))
        throw std::runtime_error("shape mismatch for " + bn);
      dst = std::move(it->second);
    };
    take(n + ".w", c.w);
    take(n + ".b", c.b);
  });
  return sn;
}

}  // namespace sflex
