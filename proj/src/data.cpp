#include "sflex/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;

namespace sflex {

namespace {

bool host_little_endian() {
  const uint32_t probe = 1;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

void byteswap32(unsigned char* p, size_t count) {
  for (size_t i = 0; i < count; ++i, p += 4) {
    std::swap(p[0], p[3]);
    std::swap(p[1], p[2]);
  }
}

std::string sample_name(int idx, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d.%s", idx, ext);
  return buf;
}

}  // namespace

void write_pfm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 4 || img.shape()[0] != 1 || img.shape()[1] != 1)
    throw std::invalid_argument("write_pfm: expected [1,1,h,w]");
  const int h = img.shape()[2], w = img.shape()[3];

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pfm: cannot open " + path);
  f << "Pf\n" << w << " " << h << "\n";
  f << (host_little_endian() ? "-1.0" : "1.0") << "\n";

  std::vector<float> row(static_cast<size_t>(w));
  const double* d = img.data();
  for (int y = h - 1; y >= 0; --y) {  // bottom row first
    for (int x = 0; x < w; ++x)
      row[static_cast<size_t>(x)] = static_cast<float>(d[static_cast<size_t>(y) * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write_pfm: short write to " + path);
}

Tensor read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pfm: cannot open " + path);
  std::string tag;
  f >> tag;
  if (tag == "PF") throw std::runtime_error("read_pfm: unsupported: color PFM in " + path);
  if (tag != "Pf") throw std::runtime_error("read_pfm: bad header in " + path);
  int w, h;
  double scale;
  f >> w >> h >> scale;
  if (!f || w <= 0 || h <= 0 || scale == 0.0)
    throw std::runtime_error("read_pfm: bad dimensions in " + path);
  f.get();  // single whitespace byte before the raster

  const bool file_le = scale < 0.0;
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 4);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(f.gcount()) != raw.size())
    throw std::runtime_error("read_pfm: truncated raster in " + path);
  if (file_le != host_little_endian())
    byteswap32(raw.data(), raw.size() / 4);

  Tensor out({1, 1, h, w});
  double* d = out.data();
  const float* px = reinterpret_cast<const float*>(raw.data());
  for (int y = 0; y < h; ++y) {
    const float* src = px + static_cast<size_t>(h - 1 - y) * w;
    for (int x = 0; x < w; ++x)
      d[static_cast<size_t>(y) * w + x] = static_cast<double>(src[x]);
  }
  return out;
}

void write_png(const std::string& path, const Tensor& img) {
  if (img.ndim() != 4 || img.shape()[0] != 1)
    throw std::invalid_argument("write_png: expected [1,c,h,w]");
  const int c = img.shape()[1], h = img.shape()[2], w = img.shape()[3];
  if (c != 1 && c != 3) throw std::invalid_argument("write_png: 1 or 3 channels");

  std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 3);
  const double* d = img.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      const double v = d[(c == 1 ? 0 : ch) * plane + i];
      buf[i * 3 + ch] =
          static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }

  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(w);
  im.height = static_cast<png_uint_32>(h);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error(std::string("write_png: ") + im.message);
}

Tensor read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw std::runtime_error(std::string("read_png: ") + im.message);
  im.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr))
    throw std::runtime_error(std::string("read_png: ") + im.message);

  const int h = static_cast<int>(im.height), w = static_cast<int>(im.width);
  Tensor out({1, 3, h, w});
  double* d = out.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 3; ++ch)
      d[ch * plane + i] = buf[i * 3 + ch] / 255.0;
  return out;
}

Tensor colorize(const Tensor& map, double vmax) {
  if (map.ndim() != 4 || map.shape()[0] != 1 || map.shape()[1] != 1)
    throw std::invalid_argument("colorize: expected [1,1,h,w]");
  const int h = map.shape()[2], w = map.shape()[3];
  Tensor out({1, 3, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  const double* src = map.data();
  double* d = out.data();
  for (size_t i = 0; i < plane; ++i) {
    double t = vmax > 0 ? std::clamp(src[i] / vmax, 0.0, 1.0) : 0.0;
    if (!std::isfinite(src[i])) t = 0.0;
    // piecewise blue -> cyan -> yellow -> red ramp
    const double r = std::clamp(1.5 - std::fabs(4.0 * t - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::fabs(4.0 * t - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::fabs(4.0 * t - 1.0), 0.0, 1.0);
    d[0 * plane + i] = r;
    d[1 * plane + i] = g;
    d[2 * plane + i] = b;
  }
  return out;
}

namespace {

// one horizontal bilinear tap with edge clamp
double sample_row(const double* row, int w, double x) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int x1 = std::min(x0 + 1, w - 1);
  const double fx = x - x0;
  return row[x0] * (1.0 - fx) + row[x1] * fx;
}

// Smooth field on the right-image grid, kept monotone in x by bounding the
// horizontal slope well below 1 so the gather map x + g(x) never folds.
Tensor make_disparity_field(Rng& rng, int h, int w, double dmax) {
  Tensor g({1, 1, h, w});
  const double lo = 1.0, hi = std::max(lo + 1.0, 0.75 * dmax);
  const double base = rng.uniform(lo + 1.0, hi - 1.0);
  const double cx = rng.uniform(-0.02, 0.02);
  const double cy = rng.uniform(-0.02, 0.02);

  struct Wave {
    double amp, fx, fy, ph;
  };
  std::vector<Wave> waves(3);
  for (auto& wv : waves) {
    wv.amp = rng.uniform(0.3, 1.0);
    wv.fx = rng.uniform(0.3, 1.2);
    wv.fy = rng.uniform(0.3, 1.2);
    wv.ph = rng.uniform(0.0, 1.0);
  }
  struct Bump {
    double cx, cy, rx, ry, amp;
  };
  std::vector<Bump> bumps(2);
  for (auto& b : bumps) {
    b.cx = rng.uniform(0.2, 0.8) * w;
    b.cy = rng.uniform(0.2, 0.8) * h;
    b.rx = rng.uniform(0.12, 0.25) * w;
    b.ry = rng.uniform(0.12, 0.25) * h;
    b.amp = rng.uniform(1.0, 2.5);
  }

  double* d = g.data();
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = base + cx * x + cy * y;
      for (const auto& wv : waves)
        v += wv.amp * std::cos(two_pi * (wv.fx * x / w + wv.fy * y / h + wv.ph));
      for (const auto& b : bumps) {
        const double q = ((x - b.cx) / b.rx) * ((x - b.cx) / b.rx) +
                         ((y - b.cy) / b.ry) * ((y - b.cy) / b.ry);
        if (q < 1.0) {
          const double s = 1.0 - q;  // smooth shoulder, zero slope at the rim
          v += b.amp * s * s;
        }
      }
      d[static_cast<size_t>(y) * w + x] = std::clamp(v, lo, dmax - 1.0);
    }
  return g;
}

Tensor blur3(const Tensor& img) {
  const int c = img.shape()[1], h = img.shape()[2], w = img.shape()[3];
  Tensor tmp(img.shape()), out(img.shape());
  const size_t plane = static_cast<size_t>(h) * w;
  auto at = [&](const double* p, int y, int x) {
    return p[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  for (int ch = 0; ch < c; ++ch) {
    const double* s = img.data() + ch * plane;
    double* t = tmp.data() + ch * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t[static_cast<size_t>(y) * w + x] =
            0.25 * (at(s, y, x - 1) + 2.0 * at(s, y, x) + at(s, y, x + 1));
    double* o = out.data() + ch * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        o[static_cast<size_t>(y) * w + x] =
            0.25 * (at(t, y - 1, x) + 2.0 * at(t, y, x) + at(t, y + 1, x));
  }
  return out;
}

}  // namespace

StereoSample render_stereo_pair(const Tensor& left, const Tensor& g) {
  if (left.ndim() != 4 || left.shape()[0] != 1 || left.shape()[1] != 3)
    throw std::invalid_argument("render_stereo_pair: left must be [1,3,h,w]");
  const int h = left.shape()[2], w = left.shape()[3];
  if (g.shape() != std::vector<int>{1, 1, h, w})
    throw std::invalid_argument("render_stereo_pair: field must be [1,1,h,w]");

  StereoSample s;
  s.left = left;

  // gather render of the right view: right(x) = left(x + g(x))
  s.right = Tensor({1, 3, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < h; ++y) {
      const double* lrow = s.left.data() + ch * plane + static_cast<size_t>(y) * w;
      const double* grow = g.data() + static_cast<size_t>(y) * w;
      double* rrow = s.right.data() + ch * plane + static_cast<size_t>(y) * w;
      for (int x = 0; x < w; ++x) rrow[x] = sample_row(lrow, w, x + grow[x]);
    }

  // Left-view labels solve d(x) = g(x - d(x)); the map is monotone so the
  // fixed point is unique where a match exists at all.
  s.disp = Tensor({1, 1, h, w});
  s.mask = Tensor({1, 1, h, w});
  for (int y = 0; y < h; ++y) {
    const double* grow = g.data() + static_cast<size_t>(y) * w;
    double* drow = s.disp.data() + static_cast<size_t>(y) * w;
    double* mrow = s.mask.data() + static_cast<size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double d = grow[x];
      for (int it = 0; it < 6; ++it) d = sample_row(grow, w, x - d);
      const double resid = std::fabs(d - sample_row(grow, w, x - d));
      const bool ok = resid < 0.05 && x - d >= 0.0;
      drow[x] = d;
      mrow[x] = ok ? 1.0 : 0.0;
      if (!ok) drow[x] = std::numeric_limits<double>::infinity();
    }
  }
  return s;
}

StereoSample make_random_dot_sample(Rng& rng, int h, int w, double dmax) {
  if (h < 4 || w < 8 || dmax < 2.0)
    throw std::invalid_argument("make_random_dot_sample: degenerate size");

  Tensor noise({1, 3, h, w});
  for (int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.uniform(0.0, 1.0);
  return render_stereo_pair(blur3(noise), make_disparity_field(rng, h, w, dmax));
}

void save_sample(const std::string& root, const std::string& split, int idx,
                 const StereoSample& s) {
  const fs::path base = fs::path(root) / split;
  for (const char* sub : {"left", "right", "disp"}) fs::create_directories(base / sub);
  write_png((base / "left" / sample_name(idx, "png")).string(), s.left);
  write_png((base / "right" / sample_name(idx, "png")).string(), s.right);
  write_pfm((base / "disp" / sample_name(idx, "pfm")).string(), s.disp);
}

StereoSample load_sample(const std::string& root, const std::string& split, int idx) {
  const fs::path base = fs::path(root) / split;
  StereoSample s;
  s.left = read_png((base / "left" / sample_name(idx, "png")).string());
  s.right = read_png((base / "right" / sample_name(idx, "png")).string());
  s.disp = read_pfm((base / "disp" / sample_name(idx, "pfm")).string());
  s.mask = Tensor(s.disp.shape());
  double* m = s.mask.data();
  double* d = s.disp.data();
  for (int i = 0; i < s.disp.numel(); ++i) {
    const bool ok = std::isfinite(d[i]) && d[i] >= 0.0;
    m[i] = ok ? 1.0 : 0.0;
    if (!ok) d[i] = 0.0;  // keep arithmetic finite under the mask
  }
  return s;
}

StereoFolder::StereoFolder(const std::string& root, const std::string& split)
    : root_(root), split_(split) {
  const fs::path dir = fs::path(root) / split / "left";
  if (!fs::exists(dir)) throw std::runtime_error("StereoFolder: no such split " + dir.string());
  while (fs::exists(dir / sample_name(n_, "png"))) ++n_;
  if (n_ == 0) throw std::runtime_error("StereoFolder: empty split " + dir.string());
}

StereoSample StereoFolder::get(int i) const {
  if (i < 0 || i >= n_) throw std::out_of_range("StereoFolder::get");
  return load_sample(root_, split_, i);
}

void generate_dataset(const std::string& root, int train_n, int val_n, int h, int w,
                      double dmax, uint64_t seed) {
  if (h % 24 != 0 || w % 24 != 0)
    throw std::invalid_argument("generate_dataset: dims must be divisible by 24");
  if (dmax < 2.0) throw std::invalid_argument("generate_dataset: dmax must be >= 2");
  Rng rng(seed);
  auto emit = [&](const std::string& split, int n) {
    for (int i = 0; i < n; ++i) {
      StereoSample s = make_random_dot_sample(rng, h, w, dmax);
      // retry rare degenerate fields instead of training on mostly-masked pairs
      for (int tries = 0; tries < 8; ++tries) {
        double valid = 0.0;
        for (int64_t j = 0; j < s.mask.numel(); ++j) valid += s.mask[j];
        if (valid >= 0.5 * s.mask.numel()) break;
        s = make_random_dot_sample(rng, h, w, dmax);
      }
      save_sample(root, split, i, s);
    }
  };
  emit("train", train_n);
  emit("val", val_n);

  nlohmann::json meta = {{"height", h},   {"width", w},   {"dmax", dmax},
                         {"train", train_n}, {"val", val_n}, {"seed", seed}};
  std::ofstream f(fs::path(root) / "dataset.json");
  f << meta.dump(2) << "\n";
}

}  // namespace sflex
