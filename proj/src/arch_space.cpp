#include "sflex/arch_space.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace sflex {

namespace {

std::string set_str(const std::vector<int>& v) {
  std::ostringstream os;
  os << "{";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  os << "}";
  return os.str();
}

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

json ArchConfig::to_json() const {
  return json{{"unit_depths", unit_depths},
              {"layer_kernels", layer_kernels},
              {"layer_widths", layer_widths},
              {"scale", scale},
              {"refine_depth", refine_depth}};
}

ArchConfig ArchConfig::from_json(const json& j) {
  ArchConfig c;
  c.unit_depths = j.at("unit_depths").get<std::vector<int>>();
  c.layer_kernels = j.at("layer_kernels").get<std::vector<std::vector<int>>>();
  c.layer_widths = j.at("layer_widths").get<std::vector<std::vector<int>>>();
  c.scale = j.at("scale").get<int>();
  c.refine_depth = j.at("refine_depth").get<int>();
  return c;
}

std::string ArchConfig::brief() const {
  std::ostringstream os;
  os << "d=";
  for (size_t u = 0; u < unit_depths.size(); ++u) os << unit_depths[u];
  os << " k=";
  for (const auto& ks : layer_kernels)
    for (int k : ks) os << k;
  os << " w=";
  for (const auto& ws : layer_widths)
    for (int w : ws) os << w;
  os << " s=" << scale << " r=" << refine_depth;
  return os.str();
}

void SearchSpaceDef::validate() const {
  auto check_set = [](const std::vector<int>& v, const char* name) {
    if (v.empty()) throw std::invalid_argument(std::string(name) + " choices empty");
    for (size_t i = 1; i < v.size(); ++i)
      if (v[i] <= v[i - 1])
        throw std::invalid_argument(std::string(name) + " choices not strictly increasing");
  };
  check_set(kernel_choices, "kernel");
  check_set(width_choices, "width");
  check_set(depth_choices, "depth");
  check_set(scale_choices, "scale");
  check_set(refine_choices, "refine");
  if (num_units <= 0) throw std::invalid_argument("num_units must be positive");
  if (static_cast<int>(base_channels.size()) != num_units)
    throw std::invalid_argument("base_channels length must equal num_units");
  if (max_scale() > num_units)
    throw std::invalid_argument("max scale exceeds unit count");
  if (max_disparity < 2) throw std::invalid_argument("max_disparity too small");
}

json SearchSpaceDef::to_json() const {
  return json{{"num_units", num_units},
              {"kernel_choices", kernel_choices},
              {"width_choices", width_choices},
              {"depth_choices", depth_choices},
              {"scale_choices", scale_choices},
              {"refine_choices", refine_choices},
              {"base_channels", base_channels},
              {"stem_channels", stem_channels},
              {"max_disparity", max_disparity},
              {"num_aa_modules", num_aa_modules},
              {"refine_channels_half", refine_channels_half},
              {"refine_channels_full", refine_channels_full}};
}

SearchSpaceDef SearchSpaceDef::from_json(const json& j) {
  SearchSpaceDef s;
  s.num_units = j.value("num_units", s.num_units);
  if (j.contains("kernel_choices")) s.kernel_choices = j["kernel_choices"].get<std::vector<int>>();
  if (j.contains("width_choices")) s.width_choices = j["width_choices"].get<std::vector<int>>();
  if (j.contains("depth_choices")) s.depth_choices = j["depth_choices"].get<std::vector<int>>();
  if (j.contains("scale_choices")) s.scale_choices = j["scale_choices"].get<std::vector<int>>();
  if (j.contains("refine_choices")) s.refine_choices = j["refine_choices"].get<std::vector<int>>();
  if (j.contains("base_channels")) s.base_channels = j["base_channels"].get<std::vector<int>>();
  s.stem_channels = j.value("stem_channels", s.stem_channels);
  s.max_disparity = j.value("max_disparity", s.max_disparity);
  s.num_aa_modules = j.value("num_aa_modules", s.num_aa_modules);
  s.refine_channels_half = j.value("refine_channels_half", s.refine_channels_half);
  s.refine_channels_full = j.value("refine_channels_full", s.refine_channels_full);
  s.validate();
  return s;
}

void validate_config(const ArchConfig& cfg, const SearchSpaceDef& space) {
  space.validate();
  const size_t u = static_cast<size_t>(space.num_units);
  if (cfg.unit_depths.size() != u)
    throw std::invalid_argument("expected " + std::to_string(u) + " unit depths, got " +
                                std::to_string(cfg.unit_depths.size()));
  if (cfg.layer_kernels.size() != u || cfg.layer_widths.size() != u)
    throw std::invalid_argument("layer_kernels/layer_widths must have one list per unit");
  for (size_t i = 0; i < u; ++i) {
    if (!contains(space.depth_choices, cfg.unit_depths[i]))
      throw std::invalid_argument("depth not in " + set_str(space.depth_choices));
    const size_t d = static_cast<size_t>(cfg.unit_depths[i]);
    if (cfg.layer_kernels[i].size() != d)
      throw std::invalid_argument("length mismatch: unit " + std::to_string(i) + " depth " +
                                  std::to_string(d) + " but " +
                                  std::to_string(cfg.layer_kernels[i].size()) +
                                  " kernel entries");
    if (cfg.layer_widths[i].size() != d)
      throw std::invalid_argument("length mismatch: unit " + std::to_string(i) + " depth " +
                                  std::to_string(d) + " but " +
                                  std::to_string(cfg.layer_widths[i].size()) +
                                  " width entries");
    for (int k : cfg.layer_kernels[i])
      if (!contains(space.kernel_choices, k))
        throw std::invalid_argument("kernel not in " + set_str(space.kernel_choices));
    for (int w : cfg.layer_widths[i])
      if (!contains(space.width_choices, w))
        throw std::invalid_argument("width not in " + set_str(space.width_choices));
  }
  if (!contains(space.scale_choices, cfg.scale))
    throw std::invalid_argument("scale not in " + set_str(space.scale_choices));
  if (!contains(space.refine_choices, cfg.refine_depth))
    throw std::invalid_argument("refine_depth not in " + set_str(space.refine_choices));
}

namespace {

ArchConfig uniform_choice_config(const SearchSpaceDef& space, int k, int w, int d, int s,
                                 int r) {
  ArchConfig c;
  c.unit_depths.assign(space.num_units, d);
  c.layer_kernels.assign(space.num_units, std::vector<int>(d, k));
  c.layer_widths.assign(space.num_units, std::vector<int>(d, w));
  c.scale = s;
  c.refine_depth = r;
  return c;
}

}  // namespace

ArchConfig maximal_config(const SearchSpaceDef& space) {
  return uniform_choice_config(space, space.max_kernel(), space.max_width(), space.max_depth(),
                               space.max_scale(), space.max_refine());
}

ArchConfig minimal_config(const SearchSpaceDef& space) {
  return uniform_choice_config(space, space.kernel_choices.front(), space.width_choices.front(),
                               space.depth_choices.front(), space.scale_choices.front(),
                               space.refine_choices.front());
}

ArchConfig sample_uniform(const SearchSpaceDef& space, Rng& rng, const SampleDims& dims) {
  auto pick = [&rng](const std::vector<int>& choices, bool free) {
    return free ? choices[rng.uniform_int(static_cast<int>(choices.size()))] : choices.back();
  };
  ArchConfig c;
  c.unit_depths.resize(space.num_units);
  c.layer_kernels.resize(space.num_units);
  c.layer_widths.resize(space.num_units);
  for (int u = 0; u < space.num_units; ++u) {
    const int d = pick(space.depth_choices, dims.depth);
    c.unit_depths[u] = d;
    c.layer_kernels[u].resize(d);
    c.layer_widths[u].resize(d);
    for (int i = 0; i < d; ++i) c.layer_kernels[u][i] = pick(space.kernel_choices, dims.kernel);
    for (int i = 0; i < d; ++i) c.layer_widths[u][i] = pick(space.width_choices, dims.width);
  }
  c.scale = pick(space.scale_choices, dims.scale);
  c.refine_depth = pick(space.refine_choices, dims.refine);
  return c;
}

bigint count_architectures(const SearchSpaceDef& space, bool include_scale_refine) {
  const bigint per_layer =
      bigint(space.kernel_choices.size()) * bigint(space.width_choices.size());
  bigint per_unit = 0;
  for (int d : space.depth_choices) {
    bigint t = 1;
    for (int i = 0; i < d; ++i) t *= per_layer;
    per_unit += t;
  }
  bigint total = 1;
  for (int u = 0; u < space.num_units; ++u) total *= per_unit;
  if (include_scale_refine)
    total *= bigint(space.scale_choices.size()) * bigint(space.refine_choices.size());
  return total;
}

int disparity_bins(int dmax, int scale_s) {
  const int denom = 3 * (1 << (scale_s - 1));
  return (dmax + denom - 1) / denom;
}

CostEstimate estimate_cost(const ArchConfig& cfg, const SearchSpaceDef& space, int input_h,
                           int input_w) {
  validate_config(cfg, space);
  CostEstimate ce;
  // every conv in an extracted subnet carries a bias (normalization gets
  // folded at extraction); macs count weight multiplies only
  auto conv = [&ce](long long cin_per_group, long long cout, long long k, long long oh,
                    long long ow) {
    const CostEstimate c = conv_cost(cin_per_group, cout, k, oh, ow);
    ce.params += c.params;
    ce.macs += c.macs;
  };

  const int S = cfg.scale;
  int h1 = input_h / 3, w1 = input_w / 3;

  // extractor weights are shared by the two views: params counted once,
  // macs for both forward passes
  {
    CostEstimate ext;
    auto xconv = [&ext](long long cpg, long long cout, long long k, long long oh,
                        long long ow) {
      const CostEstimate c = conv_cost(cpg, cout, k, oh, ow);
      ext.params += c.params;
      ext.macs += c.macs;
    };
    int h = h1, w = w1;
    xconv(3, space.stem_channels, 3, h, w);
    int cprev = space.stem_channels;
    for (int u = 0; u < S; ++u) {
      const int cunit = space.base_channels[u];
      for (int i = 0; i < cfg.unit_depths[u]; ++i) {
        const int cin = i == 0 ? cprev : cunit;
        const int e = cfg.layer_widths[u][i] * cin;
        const int k = cfg.layer_kernels[u][i];
        const bool down = i == 0 && u >= 1;
        const int ho = down ? h / 2 : h, wo = down ? w / 2 : w;
        xconv(cin, e, 1, h, w);  // expand at input resolution
        xconv(1, e, k, ho, wo);  // depthwise
        xconv(e, cunit, 1, ho, wo);
        h = ho;
        w = wo;
      }
      cprev = cunit;
    }
    ce.params += ext.params;
    ce.macs += 2 * ext.macs;
  }

  // correlation per scale
  std::vector<int> hs(S + 1), ws(S + 1), ds(S + 1);
  for (int s = 1; s <= S; ++s) {
    hs[s] = h1 >> (s - 1);
    ws[s] = w1 >> (s - 1);
    ds[s] = disparity_bins(space.max_disparity, s);
    ce.macs += static_cast<long long>(ds[s]) * space.base_channels[s - 1] * hs[s] * ws[s];
  }

  // aggregation modules
  for (int m = 0; m < space.num_aa_modules; ++m) {
    for (int s = 1; s <= S; ++s) {
      const int d = ds[s];
      conv(d, d, 1, hs[s], ws[s]);    // ISA entry 1x1
      conv(d, 18, 3, hs[s], ws[s]);   // offset predictor
      conv(d, d, 3, hs[s], ws[s]);    // deformable 3x3 weight applications
      conv(d, d, 1, hs[s], ws[s]);    // ISA exit 1x1
    }
    for (int s = 1; s <= S; ++s) {
      for (int k = 1; k <= S; ++k) {
        if (k == s) continue;
        if (k < s) {
          int cin = ds[k];
          for (int j = 1; j <= s - k; ++j) {
            const int cout = j == s - k ? ds[s] : ds[k];
            conv(cin, cout, 3, hs[k + j], ws[k + j]);
            cin = cout;
          }
        } else {
          conv(ds[k], ds[s], 1, hs[s], ws[s]);
        }
      }
    }
  }

  // refinement
  if (cfg.refine_depth >= 1) {
    const int ch = space.refine_channels_half;
    const int hh = input_h / 2, wh = input_w / 2;
    conv(10, ch, 3, hh, wh);
    for (int i = 0; i < 3; ++i) conv(ch, ch, 3, hh, wh);
    conv(ch, 1, 3, hh, wh);
  }
  if (cfg.refine_depth >= 2) {
    const int cf = space.refine_channels_full;
    conv(10, cf, 3, input_h, input_w);
    for (int i = 0; i < 2; ++i) conv(cf, cf, 3, input_h, input_w);
    conv(cf, 1, 3, input_h, input_w);
  }
  return ce;
}

}  // namespace sflex
