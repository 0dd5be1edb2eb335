// Copyright 2026 The poisonlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef POISONLAB_AUGMENT_HPP_
#define POISONLAB_AUGMENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisonlab/rng.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace aug {

enum class AugKind { kNone, kStandard, kMixup, kCutmix, kCutout, kMaxup };

struct AugmentationPolicy {
  AugKind kind = AugKind::kNone;
  int k = 2;            // mixup mixture width
  double alpha = 1.0;   // Dirichlet interpolation parameter
  int cutout_side = 8;  // cutout patch side (pixels)
  int m = 4;            // maxup copy count
  AugKind maxup_base = AugKind::kCutout;

  void validate() const {
    if (kind == AugKind::kMixup && (k < 2 || alpha <= 0.0)) {
      throw std::invalid_argument("augmentation: mixup requires k >= 2 and alpha > 0");
    }
    if (kind == AugKind::kCutout && cutout_side < 0) {
      throw std::invalid_argument("augmentation: cutout side must be nonnegative");
    }
    if (kind == AugKind::kMaxup) {
      if (m < 2) throw std::invalid_argument("augmentation: maxup requires m >= 2");
      if (maxup_base != AugKind::kCutout && maxup_base != AugKind::kStandard) {
        throw std::invalid_argument(
            "augmentation: maxup base must be a stochastic per-image kind (cutout or standard)");
      }
    }
  }

  std::string to_string() const {
    std::ostringstream os;
    switch (kind) {
      case AugKind::kNone: return "none";
      case AugKind::kStandard: return "standard";
      case AugKind::kMixup:
        os << "mixup(" << k << "," << alpha << ")";
        return os.str();
      case AugKind::kCutmix: return "cutmix";
      case AugKind::kCutout:
        os << "cutout(" << cutout_side << ")";
        return os.str();
      case AugKind::kMaxup:
        os << "maxup(" << m << "," << (maxup_base == AugKind::kCutout ? "cutout" : "standard")
           << ")";
        return os.str();
    }
    return "none";
  }

  static AugmentationPolicy parse(const std::string& s);
};

// ---------------------------------------------------------------------------
// Dirichlet coefficients
// ---------------------------------------------------------------------------

/// Exact Dirichlet(alpha,...,alpha) draw via normalized Gamma variates.
inline std::vector<double> sample_dirichlet(int k, double alpha, Rng& rng) {
  if (k < 2) throw std::invalid_argument("sample_dirichlet: k must be >= 2");
  if (alpha <= 0.0) throw std::invalid_argument("sample_dirichlet: alpha must be positive");
  std::vector<double> lambdas(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& l : lambdas) {
    l = rng.gamma(alpha);
    total += l;
  }
  while (total <= 0.0) {  // astronomically unlikely; keep the simplex exact
    total = 0.0;
    for (auto& l : lambdas) {
      l = rng.gamma(alpha);
      total += l;
    }
  }
  for (auto& l : lambdas) l /= total;
  return lambdas;
}

// ---------------------------------------------------------------------------
// Cut boxes (shared by CutMix and cutout)
// ---------------------------------------------------------------------------

/// Axis-aligned box mask over a w x h pixel grid. mask is 1 everywhere
/// except in the image-intersection of the box, which is 0.
struct CutBox {
  double cx = 0, cy = 0;  // sampled center (r_x, r_y)
  double ew = 0, eh = 0;  // sampled extents (r_w, r_h)
  int x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;  // clipped pixel ranges [lo,hi)
  int w = 0, h = 0;

  int zero_cells() const { return (x_hi - x_lo) * (y_hi - y_lo); }
  bool cut(int x, int y) const { return x >= x_lo && x < x_hi && y >= y_lo && y < y_hi; }
  std::vector<std::uint8_t> mask() const {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h, 1);
    for (int y = y_lo; y < y_hi; ++y)
      for (int x = x_lo; x < x_hi; ++x) m[static_cast<std::size_t>(y) * w + x] = 0;
    return m;
  }
};

inline CutBox make_cut_box(int w, int h, double cx, double cy, double ew, double eh) {
  CutBox b;
  b.w = w;
  b.h = h;
  b.cx = cx;
  b.cy = cy;
  b.ew = ew;
  b.eh = eh;
  b.x_lo = std::clamp(static_cast<int>(std::floor(cx - ew / 2)), 0, w);
  b.x_hi = std::clamp(static_cast<int>(std::floor(cx + ew / 2)), 0, w);
  b.y_lo = std::clamp(static_cast<int>(std::floor(cy - eh / 2)), 0, h);
  b.y_hi = std::clamp(static_cast<int>(std::floor(cy + eh / 2)), 0, h);
  return b;
}

// ---------------------------------------------------------------------------
// CutMix
// ---------------------------------------------------------------------------

struct CutMixResult {
  Tensor image;
  Tensor label;
  CutBox box;
  double lambda = 1.0;      // sampled coefficient
  double lambda_eff = 1.0;  // 1 - zero_cells/(w*h), the label weight actually used
};

/// Deterministic core with the sampled (lambda, center) injected. The label
/// weight is recomputed from the clipped box so it always matches the pixel
/// provenance exactly.
inline CutMixResult cutmix_with(const Tensor& xi, const Tensor& yi, const Tensor& xj,
                                const Tensor& yj, double lambda, double cx, double cy) {
  if (!xi.same_shape(xj)) {
    throw std::invalid_argument("cutmix: image geometries differ: " + shape_str(xi.shape) +
                                " vs " + shape_str(xj.shape));
  }
  if (!yi.same_shape(yj)) throw std::invalid_argument("cutmix: label shapes differ");
  const int h = xi.dim(0), w = xi.dim(1), c = xi.dim(2);
  CutMixResult res;
  res.lambda = lambda;
  const double side = std::sqrt(std::max(0.0, 1.0 - lambda));
  res.box = make_cut_box(w, h, cx, cy, w * side, h * side);
  res.image = xi;
  for (int y = res.box.y_lo; y < res.box.y_hi; ++y) {
    for (int x = res.box.x_lo; x < res.box.x_hi; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t at = (static_cast<std::size_t>(y) * w + x) * c + ch;
        res.image[at] = xj[at];
      }
    }
  }
  res.lambda_eff = 1.0 - static_cast<double>(res.box.zero_cells()) / (static_cast<double>(w) * h);
  res.label = Tensor(yi.shape);
  for (std::size_t i = 0; i < yi.numel(); ++i) {
    res.label[i] = res.lambda_eff * yi[i] + (1.0 - res.lambda_eff) * yj[i];
  }
  return res;
}

inline CutMixResult cutmix_pair(const Tensor& xi, const Tensor& yi, const Tensor& xj,
                                const Tensor& yj, Rng& rng) {
  const int h = xi.dim(0), w = xi.dim(1);
  const double lambda = sample_dirichlet(2, 1.0, rng)[0];
  const double cx = rng.uniform(0.0, w);
  const double cy = rng.uniform(0.0, h);
  return cutmix_with(xi, yi, xj, yj, lambda, cx, cy);
}

// ---------------------------------------------------------------------------
// Cutout
// ---------------------------------------------------------------------------

struct CutoutResult {
  Tensor image;
  CutBox box;
};

inline CutoutResult cutout_with(const Tensor& x, int patch_side, double cx, double cy) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (patch_side < 0 || patch_side > std::min(w, h)) {
    throw std::invalid_argument("cutout: patch side " + std::to_string(patch_side) +
                                " out of range for " + std::to_string(w) + "x" + std::to_string(h));
  }
  CutoutResult res;
  res.box = make_cut_box(w, h, cx, cy, patch_side, patch_side);
  res.image = x;
  for (int y = res.box.y_lo; y < res.box.y_hi; ++y) {
    for (int xx = res.box.x_lo; xx < res.box.x_hi; ++xx) {
      for (int ch = 0; ch < c; ++ch) {
        res.image[(static_cast<std::size_t>(y) * w + xx) * c + ch] = 0.0;
      }
    }
  }
  return res;
}

inline CutoutResult cutout(const Tensor& x, int patch_side, Rng& rng) {
  const int h = x.dim(0), w = x.dim(1);
  const double cx = rng.uniform(0.0, w);
  const double cy = rng.uniform(0.0, h);
  return cutout_with(x, patch_side, cx, cy);
}

// ---------------------------------------------------------------------------
// Baseline flips/crops
// ---------------------------------------------------------------------------

inline constexpr int kStandardPad = 4;

namespace detail {
inline int reflect101(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace detail

/// Deterministic core: optional horizontal mirror, then a crop window at
/// (off_x, off_y) out of the 4-pixel reflect-padded image. Offsets (4,4)
/// recover the input.
inline Tensor standard_aug_with(const Tensor& x, bool flip, int off_x, int off_y) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (off_x < 0 || off_x > 2 * kStandardPad || off_y < 0 || off_y > 2 * kStandardPad) {
    throw std::invalid_argument("standard_aug: crop offset out of range");
  }
  Tensor out(x.shape);
  for (int y = 0; y < h; ++y) {
    const int sy = detail::reflect101(y + off_y - kStandardPad, h);
    for (int xx = 0; xx < w; ++xx) {
      int sx = detail::reflect101(xx + off_x - kStandardPad, w);
      if (flip) sx = w - 1 - sx;
      for (int ch = 0; ch < c; ++ch) {
        out[(static_cast<std::size_t>(y) * w + xx) * c + ch] =
            x[(static_cast<std::size_t>(sy) * w + sx) * c + ch];
      }
    }
  }
  return out;
}

inline Tensor standard_aug(const Tensor& x, Rng& rng) {
  const bool flip = rng.uniform() < 0.5;
  const int off_x = static_cast<int>(rng.uniform_int(2 * kStandardPad + 1));
  const int off_y = static_cast<int>(rng.uniform_int(2 * kStandardPad + 1));
  return standard_aug_with(x, flip, off_x, off_y);
}

// ---------------------------------------------------------------------------
// mixup over batches
// ---------------------------------------------------------------------------

/// Which inputs were mixed into each output, for audits and oracles.
struct MixRecord {
  std::vector<std::size_t> partners;
  std::vector<double> lambdas;
};

struct SoftBatch {
  Tensor images;  // [B,h,w,c]
  Tensor labels;  // [B,K] rows on the simplex
  std::vector<MixRecord> mixes;
};

/// Deterministic core: convex-combine the given partners with the given
/// coefficients.
inline void mixup_combine(const Tensor& images, const Tensor& labels, const MixRecord& mix,
                          std::size_t out_index, Tensor& out_images, Tensor& out_labels) {
  const std::size_t img_stride = images.numel() / static_cast<std::size_t>(images.shape[0]);
  const std::size_t lab_stride = labels.numel() / static_cast<std::size_t>(labels.shape[0]);
  double* img_out = out_images.data.data() + out_index * img_stride;
  double* lab_out = out_labels.data.data() + out_index * lab_stride;
  std::fill(img_out, img_out + img_stride, 0.0);
  std::fill(lab_out, lab_out + lab_stride, 0.0);
  for (std::size_t j = 0; j < mix.partners.size(); ++j) {
    const double l = mix.lambdas[j];
    const double* img_in = images.data.data() + mix.partners[j] * img_stride;
    const double* lab_in = labels.data.data() + mix.partners[j] * lab_stride;
    for (std::size_t i = 0; i < img_stride; ++i) img_out[i] += l * img_in[i];
    for (std::size_t i = 0; i < lab_stride; ++i) lab_out[i] += l * lab_in[i];
  }
}

/// k-way mixup: output i combines sample i with k-1 distinct partners drawn
/// without replacement, coefficients ~ Dirichlet(alpha,...,alpha).
inline SoftBatch mixup_batch(const Tensor& images, const Tensor& labels, int k, double alpha,
                             Rng& rng) {
  const int batch = images.shape.at(0);
  if (labels.shape.at(0) != batch) throw std::invalid_argument("mixup: batch sizes disagree");
  if (batch < k) {
    throw std::invalid_argument("mixup: batch of " + std::to_string(batch) +
                                " smaller than mixture width " + std::to_string(k));
  }
  if (k < 2 || alpha <= 0.0) throw std::invalid_argument("mixup: need k >= 2 and alpha > 0");
  SoftBatch out;
  out.images = Tensor(images.shape);
  out.labels = Tensor(labels.shape);
  out.mixes.resize(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    MixRecord& mix = out.mixes[static_cast<std::size_t>(i)];
    mix.partners.push_back(static_cast<std::size_t>(i));
    while (mix.partners.size() < static_cast<std::size_t>(k)) {
      const std::size_t cand = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(batch)));
      if (std::find(mix.partners.begin(), mix.partners.end(), cand) == mix.partners.end()) {
        mix.partners.push_back(cand);
      }
    }
    mix.lambdas = sample_dirichlet(k, alpha, rng);
    mixup_combine(images, labels, mix, static_cast<std::size_t>(i), out.images, out.labels);
  }
  return out;
}

/// In-batch CutMix: output i pastes a box from a shuffled partner.
inline SoftBatch cutmix_batch(const Tensor& images, const Tensor& labels, Rng& rng) {
  const int batch = images.shape.at(0);
  const int h = images.shape.at(1), w = images.shape.at(2), c = images.shape.at(3);
  const int classes = labels.shape.at(1);
  std::vector<std::size_t> perm(static_cast<std::size_t>(batch));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  SoftBatch out;
  out.images = Tensor(images.shape);
  out.labels = Tensor(labels.shape);
  out.mixes.resize(static_cast<std::size_t>(batch));
  const std::size_t img_stride = static_cast<std::size_t>(h) * w * c;
  for (int i = 0; i < batch; ++i) {
    const std::size_t j = perm[static_cast<std::size_t>(i)];
    Tensor xi({h, w, c}, std::vector<double>(
                             images.data.begin() + static_cast<std::ptrdiff_t>(i * img_stride),
                             images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * img_stride)));
    Tensor xj({h, w, c}, std::vector<double>(
                             images.data.begin() + static_cast<std::ptrdiff_t>(j * img_stride),
                             images.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * img_stride)));
    Tensor yi({1, classes}, std::vector<double>(
                                labels.data.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                labels.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes)));
    Tensor yj({1, classes}, std::vector<double>(
                                labels.data.begin() + static_cast<std::ptrdiff_t>(j * classes),
                                labels.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * classes)));
    CutMixResult r = cutmix_pair(xi, yi, xj, yj, rng);
    std::copy(r.image.data.begin(), r.image.data.end(),
              out.images.data.begin() + static_cast<std::ptrdiff_t>(i * img_stride));
    std::copy(r.label.data.begin(), r.label.data.end(),
              out.labels.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * classes));
    out.mixes[static_cast<std::size_t>(i)] = {{static_cast<std::size_t>(i), j},
                                              {r.lambda_eff, 1.0 - r.lambda_eff}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// MaxUp expansion
// ---------------------------------------------------------------------------

/// m independent draws of the base augmentation; labels are unchanged.
inline std::vector<Tensor> maxup_expand(const Tensor& x, int m, const AugmentationPolicy& base,
                                        Rng& rng) {
  if (m < 2) throw std::invalid_argument("maxup: m must be >= 2");
  if (base.kind != AugKind::kCutout && base.kind != AugKind::kStandard) {
    throw std::invalid_argument(
        "maxup: base augmentation must be stochastic and per-image (cutout or standard)");
  }
  std::vector<Tensor> copies;
  copies.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    if (base.kind == AugKind::kCutout) {
      copies.push_back(cutout(x, base.cutout_side, rng).image);
    } else {
      copies.push_back(standard_aug(x, rng));
    }
  }
  return copies;
}

// ---------------------------------------------------------------------------
// Policy parsing ("mixup(4,1)", "cutout(8)", "maxup(4,cutout)", ...)
// ---------------------------------------------------------------------------

inline AugmentationPolicy AugmentationPolicy::parse(const std::string& s) {
  AugmentationPolicy p;
  const auto open = s.find('(');
  const std::string name = open == std::string::npos ? s : s.substr(0, open);
  std::vector<std::string> args;
  if (open != std::string::npos) {
    if (s.back() != ')') throw std::invalid_argument("augmentation: unbalanced '(' in '" + s + "'");
    std::istringstream is(s.substr(open + 1, s.size() - open - 2));
    std::string tok;
    while (std::getline(is, tok, ',')) args.push_back(tok);
  }
  if (name == "none") p.kind = AugKind::kNone;
  else if (name == "standard") p.kind = AugKind::kStandard;
  else if (name == "mixup") {
    p.kind = AugKind::kMixup;
    if (args.size() > 0) p.k = std::stoi(args[0]);
    if (args.size() > 1) p.alpha = std::stod(args[1]);
  } else if (name == "cutmix") p.kind = AugKind::kCutmix;
  else if (name == "cutout") {
    p.kind = AugKind::kCutout;
    if (args.size() > 0) p.cutout_side = std::stoi(args[0]);
  } else if (name == "maxup") {
    p.kind = AugKind::kMaxup;
    if (args.size() > 0) p.m = std::stoi(args[0]);
    if (args.size() > 1) {
      if (args[1] == "cutout") p.maxup_base = AugKind::kCutout;
      else if (args[1] == "standard") p.maxup_base = AugKind::kStandard;
      else throw std::invalid_argument("augmentation: unknown maxup base '" + args[1] + "'");
    }
  } else {
    throw std::invalid_argument("augmentation: unknown kind '" + name + "'");
  }
  p.validate();
  return p;
}

}  // namespace aug
}  // namespace poisonlab

#endif  // POISONLAB_AUGMENT_HPP_
