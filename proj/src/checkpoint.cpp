#include "sflex/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sflex {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'L', 'E', 'X', 'B', 'N', 'D'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kEndianTag = 0x01020304u;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void write_bundle(const std::string& path, const json& meta,
                  const std::vector<NamedTensor>& blobs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u32(os, kEndianTag);
  const std::string m = meta.dump();
  put_u64(os, m.size());
  os.write(m.data(), (std::streamsize)m.size());
  put_u32(os, (uint32_t)blobs.size());
  for (const auto& b : blobs) {
    put_u32(os, (uint32_t)b.name.size());
    os.write(b.name.data(), (std::streamsize)b.name.size());
    put_u32(os, (uint32_t)b.t.ndim());
    for (int i = 0; i < b.t.ndim(); ++i) put_u32(os, (uint32_t)b.t.dim(i));
    put_u64(os, (uint64_t)b.t.numel());
    os.write(reinterpret_cast<const char*>(b.t.data()),
             (std::streamsize)(b.t.numel() * (int64_t)sizeof(double)));
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

json read_bundle(const std::string& path, std::map<std::string, Tensor>* blobs) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path + ": not a bundle");
  if (get_u32(is) != kVersion) throw std::runtime_error(path + ": unsupported version");
  if (get_u32(is) != kEndianTag) throw std::runtime_error(path + ": wrong byte order");
  const uint64_t mlen = get_u64(is);
  std::string m(mlen, '\0');
  is.read(m.data(), (std::streamsize)mlen);
  json meta = json::parse(m);
  const uint32_t count = get_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const uint32_t nd = get_u32(is);
    std::vector<int> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) shape[d] = (int)get_u32(is);
    const uint64_t numel = get_u64(is);
    Tensor t(shape);
    if ((uint64_t)t.numel() != numel) throw std::runtime_error(path + ": blob size mismatch");
    is.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(numel * sizeof(double)));
    if (blobs) (*blobs)[name] = std::move(t);
  }
  if (!is) throw std::runtime_error("short read from " + path);
  return meta;
}

json TrainState::to_json() const {
  return json{{"stage", stage}, {"epoch", epoch}, {"step", step}, {"rng_state", rng_state}};
}

TrainState TrainState::from_json(const json& j) {
  TrainState s;
  s.stage = j.at("stage").get<int>();
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<long long>();
  s.rng_state = j.at("rng_state").get<std::string>();
  return s;
}

void save_train_checkpoint(const std::string& path, const SearchSpaceDef& space,
                           ParamRefs& refs, const Adam* opt, const TrainState& st) {
  json meta;
  meta["kind"] = "train_checkpoint";
  meta["space"] = space.to_json();
  meta["state"] = st.to_json();
  std::vector<NamedTensor> blobs;
  for (Param* p : refs.params) blobs.push_back({p->name, p->v});
  for (StatBuf* s : refs.stats) {
    Tensor t({(int)s->v.size()});
    std::copy(s->v.begin(), s->v.end(), t.data());
    blobs.push_back({s->name, std::move(t)});
  }
  if (opt) {
    meta["adam"] = json{{"lr", opt->lr},
                        {"beta1", opt->beta1},
                        {"beta2", opt->beta2},
                        {"eps", opt->eps},
                        {"t", opt->t}};
    for (Param* p : refs.params) {
      const Adam::Slot& s = opt->slots.at(p->name);
      blobs.push_back({p->name + "#m", s.m});
      blobs.push_back({p->name + "#v", s.v});
    }
  }
  write_bundle(path, meta, blobs);
}

SearchSpaceDef read_checkpoint_space(const std::string& path) {
  json meta = read_bundle(path, nullptr);
  if (meta.value("kind", "") != "train_checkpoint")
    throw std::runtime_error(path + ": not a training checkpoint");
  return SearchSpaceDef::from_json(meta.at("space"));
}

TrainState load_train_checkpoint(const std::string& path, ParamRefs& refs, Adam* opt) {
  std::map<std::string, Tensor> blobs;
  json meta = read_bundle(path, &blobs);
  if (meta.value("kind", "") != "train_checkpoint")
    throw std::runtime_error(path + ": not a training checkpoint");

  auto take = [&](const std::string& name) -> Tensor& {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error(path + ": missing tensor " + name);
    return it->second;
  };
  for (Param* p : refs.params) {
    Tensor& t = take(p->name);
    if (t.numel() != p->v.numel())
      throw std::runtime_error(path + ": size mismatch for " + p->name);
    p->v = t.reshaped(p->v.shape());
  }
  for (StatBuf* s : refs.stats) {
    Tensor& t = take(s->name);
    if ((size_t)t.numel() != s->v.size())
      throw std::runtime_error(path + ": size mismatch for " + s->name);
    std::copy(t.data(), t.data() + t.numel(), s->v.begin());
  }
  if (opt) {
    if (!meta.contains("adam")) throw std::runtime_error(path + ": no optimizer state");
    const json& a = meta.at("adam");
    opt->lr = a.at("lr").get<double>();
    opt->beta1 = a.at("beta1").get<double>();
    opt->beta2 = a.at("beta2").get<double>();
    opt->eps = a.at("eps").get<double>();
    opt->t = a.at("t").get<long long>();
    for (Param* p : refs.params) {
      Adam::Slot& s = opt->slots.at(p->name);
      s.m = take(p->name + "#m").reshaped(p->v.shape());
      s.v = take(p->name + "#v").reshaped(p->v.shape());
    }
  }
  return TrainState::from_json(meta.at("state"));
}

}  // namespace sflex
