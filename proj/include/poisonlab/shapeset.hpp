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

#ifndef POISONLAB_SHAPESET_HPP_
#define POISONLAB_SHAPESET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "poisonlab/dataset.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace data {

// Procedural 10-class image set. Class identity is carried by the motif
// shape only: hue, position, scale and noise are all jittered per example,
// so a pixel-linear model cannot key on color statistics.
//
// Classes: 0 disc, 1 bar, 2 cross, 3 ring, 4 corner patch, 5 gradient,
//          6 checker, 7 diagonal stripe, 8 blob pair, 9 frame.
inline constexpr int kShapeSetClasses = 10;

namespace shapeset_detail {

struct Rgb {
  double r, g, b;
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

inline double box_sdf(double px, double py, double hx, double hy) {
  const double dx = std::abs(px) - hx;
  const double dy = std::abs(py) - hy;
  const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dx, dy), 0.0);
}

// Signed distance of pixel p to the class motif; negative inside.
// Returns >1e8 for "no mask" classes handled separately (gradient/checker).
inline double motif_sdf(int cls, double px, double py, double s, double ang, int corner,
                        double aspect) {
  switch (cls) {
    case 0:  // disc
      return std::hypot(px, py) - s;
    case 1:  // bar
      return box_sdf(px, py, s, s * 0.32 * aspect);
    case 2:  // cross
      return std::min(box_sdf(px, py, s, s * 0.28), box_sdf(px, py, s * 0.28, s));
    case 3: {  // ring
      return std::abs(std::hypot(px, py) - s * 0.72) - s * 0.26;
    }
    case 7: {  // diagonal stripe through the center at angle ang
      const double nx = -std::sin(ang), ny = std::cos(ang);
      return std::abs(px * nx + py * ny) - s * 0.30;
    }
    case 8: {  // blob pair
      const double ox = std::cos(ang) * s * 0.85, oy = std::sin(ang) * s * 0.85;
      const double d1 = std::hypot(px - ox, py - oy) - s * 0.42;
      const double d2 = std::hypot(px + ox, py + oy) - s * 0.42;
      return std::min(d1, d2);
    }
    case 9:  // frame (square annulus)
      return std::abs(box_sdf(px, py, s * 0.85, s * 0.85)) - s * 0.22;
    default:
      (void)corner;
      return 1e9;
  }
}

}  // namespace shapeset_detail

inline Example gen_shapeset_example(int cls, int h, int w, int c, Rng& rng) {
  using namespace shapeset_detail;
  Example e;
  e.label = cls;
  e.image = Tensor({h, w, c});

  const double mind = std::min(h, w);
  const double cx = w * 0.5 + (rng.uniform() - 0.5) * 0.40 * w;
  const double cy = h * 0.5 + (rng.uniform() - 0.5) * 0.40 * h;
  const double size = mind * (0.16 + 0.20 * rng.uniform());
  const double ang = cls == 7 ? (rng.uniform_int(2) ? 0.785398 : -0.785398) + rng.uniform(-0.25, 0.25)
                              : rng.uniform(0.0, 6.2831853);
  const int corner = static_cast<int>(rng.uniform_int(4));
  const double aspect = 0.8 + 0.4 * rng.uniform();
  const Rgb fg = hsv_to_rgb(rng.uniform(), 0.30 + 0.65 * rng.uniform(), 0.45 + 0.55 * rng.uniform());
  const double bg_level = 0.05 + 0.25 * rng.uniform();
  const double noise_amp = 0.04 + 0.07 * rng.uniform();
  const double grad_ang = rng.uniform(0.0, 6.2831853);
  const double cell = std::max(2.0, size * (0.45 + 0.2 * rng.uniform()));
  const double phase_x = rng.uniform(0.0, cell), phase_y = rng.uniform(0.0, cell);

  // corner patch anchors to a jittered corner instead of the common center
  double ccx = cx, ccy = cy;
  if (cls == 4) {
    const double margin = size * 0.9 + 1.0;
    ccx = (corner % 2 == 0) ? margin + rng.uniform(0.0, 0.12 * w)
                            : w - margin - rng.uniform(0.0, 0.12 * w);
    ccy = (corner / 2 == 0) ? margin + rng.uniform(0.0, 0.12 * h)
                            : h - margin - rng.uniform(0.0, 0.12 * h);
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = 0.0;
      if (cls == 5) {
        // full-image ramp along grad_ang
        const double t = ((x - w * 0.5) * std::cos(grad_ang) + (y - h * 0.5) * std::sin(grad_ang)) /
                         mind;
        m = std::clamp(0.5 + t, 0.0, 1.0) * 0.9;
      } else if (cls == 6) {
        const int ix = static_cast<int>(std::floor((x + phase_x) / cell));
        const int iy = static_cast<int>(std::floor((y + phase_y) / cell));
        m = ((ix + iy) & 1) ? 0.92 : 0.0;
      } else if (cls == 4) {
        m = std::clamp(0.5 - box_sdf(x - ccx, y - ccy, size * 0.8, size * 0.8), 0.0, 1.0);
      } else {
        const double d = motif_sdf(cls, x - cx, y - cy, size, ang, corner, aspect);
        m = std::clamp(0.5 - d, 0.0, 1.0);  // ~1px soft edge
      }
      const double chan[3] = {fg.r, fg.g, fg.b};
      for (int ch = 0; ch < c; ++ch) {
        const double fgv = chan[ch % 3];
        double v = bg_level * (1.0 - m) + fgv * m + rng.uniform(-noise_amp, noise_amp);
        e.image[(static_cast<std::size_t>(y) * w + x) * c + ch] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return e;
}

/// Deterministic procedural dataset: same (seed, per_class, geometry) is
/// bit-identical. Examples are ordered class-major.
inline Dataset gen_shapeset(std::uint64_t seed, int per_class, int h, int w, int c) {
  if (per_class <= 0) throw std::invalid_argument("gen_shapeset: per_class must be positive");
  if (h < 16 || w < 16 || c < 3) {
    throw std::invalid_argument("gen_shapeset: geometry must be at least 16x16x3");
  }
  Dataset ds{kShapeSetClasses, h, w, c, {}, "shapeset:" + std::to_string(seed)};
  for (int cls = 0; cls < kShapeSetClasses; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(child_seed(seed, static_cast<std::uint64_t>(cls) * 1000003u +
                                   static_cast<std::uint64_t>(i)));
      ds.examples.push_back(gen_shapeset_example(cls, h, w, c, rng));
    }
  }
  return ds;
}

}  // namespace data
}  // namespace poisonlab

#endif  // POISONLAB_SHAPESET_HPP_
