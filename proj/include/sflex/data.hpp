#pragma once

#include <string>
#include <vector>

#include "sflex/rng.hpp"
#include "sflex/tensor.hpp"

namespace sflex {

// Grayscale "Pf" float maps, scale sign giving the byte order, rows stored
// bottom up. Values land in [1,1,h,w]. Non-finite pixels are the conventional
// way to mark invalid ground truth. Color "PF" files are rejected.
void write_pfm(const std::string& path, const Tensor& img);
Tensor read_pfm(const std::string& path);

// 8-bit PNG. Tensors are [1,3,h,w] (or [1,1,h,w] written as gray) in [0,1].
void write_png(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

// map a [1,1,h,w] field to a [1,3,h,w] blue-to-red rendering of value/vmax
Tensor colorize(const Tensor& map, double vmax);

struct StereoSample {
  Tensor left, right;  // [1,3,h,w]
  Tensor disp, mask;   // [1,1,h,w], mask 1 = supervised
};

// Renders a rectified pair from a texture and a disparity field given on the
// right-view grid: right(x) = left(x + field(x)). Left-view labels solve the
// matching fixed point d(x) = field(x - d(x)); pixels without a valid
// in-image match are masked out. The field must keep x + field(x) monotone
// in x (horizontal slope > -1) so the fixed point is unique.
StereoSample render_stereo_pair(const Tensor& left, const Tensor& field);

// Random-dot pair: blurred noise texture plus a smooth monotone disparity
// field with soft elliptic bumps, rendered as above.
StereoSample make_random_dot_sample(Rng& rng, int h, int w, double dmax);

void save_sample(const std::string& root, const std::string& split, int idx,
                 const StereoSample& s);
StereoSample load_sample(const std::string& root, const std::string& split, int idx);

class StereoFolder {
 public:
  StereoFolder() = default;
  StereoFolder(const std::string& root, const std::string& split);
  int size() const { return n_; }
  StereoSample get(int i) const;

 private:
  std::string root_, split_;
  int n_ = 0;
};

void generate_dataset(const std::string& root, int train_n, int val_n, int h, int w,
                      double dmax, uint64_t seed);

}  // namespace sflex
