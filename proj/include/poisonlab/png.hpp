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

#ifndef POISONLAB_PNG_HPP_
#define POISONLAB_PNG_HPP_

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisonlab/dataset.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace png {

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = ::crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Write an 8-bit RGB PNG. rgb is row-major, 3 bytes per pixel. A non-empty
/// comment lands in a tEXt chunk (used for config fingerprints).
inline void write_rgb(const std::string& path, int width, int height,
                      const std::vector<unsigned char>& rgb, const std::string& comment = "") {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw std::invalid_argument("png: pixel buffer size mismatch");
  }
  // filter byte 0 per scanline
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const unsigned char* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }
  uLongf comp_len = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (::compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("png: deflate failed");
  }
  comp.resize(comp_len);

  std::vector<unsigned char> out;
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.insert(out.end(), sig, sig + 8);
  std::vector<unsigned char> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  detail::put_chunk(out, "IHDR", ihdr);
  if (!comment.empty()) {
    std::vector<unsigned char> text;
    const std::string keyword = "Comment";
    text.insert(text.end(), keyword.begin(), keyword.end());
    text.push_back(0);
    text.insert(text.end(), comment.begin(), comment.end());
    detail::put_chunk(out, "tEXt", text);
  }
  detail::put_chunk(out, "IDAT", comp);
  detail::put_chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("png: cannot open " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("png: write failed for " + path);
}

inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Contact sheet: one row per class, `per_class` images per row, 1px gutters.
inline void contact_sheet(const data::Dataset& ds, int per_class, const std::string& path,
                          const std::string& comment = "") {
  const int cell_w = ds.w + 1, cell_h = ds.h + 1;
  const int width = per_class * cell_w + 1;
  const int height = ds.classes * cell_h + 1;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3, 32);
  for (int cls = 0; cls < ds.classes; ++cls) {
    int placed = 0;
    for (std::size_t i = 0; i < ds.size() && placed < per_class; ++i) {
      if (ds.examples[i].label != cls) continue;
      const Tensor& img = ds.examples[i].image;
      const int ox = 1 + placed * cell_w;
      const int oy = 1 + cls * cell_h;
      for (int y = 0; y < ds.h; ++y) {
        for (int x = 0; x < ds.w; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            const int src_ch = std::min(ch, ds.c - 1);
            rgb[((static_cast<std::size_t>(oy + y) * width) + (ox + x)) * 3 + ch] =
                to_byte(img[(static_cast<std::size_t>(y) * ds.w + x) * ds.c + src_ch]);
          }
        }
      }
      ++placed;
    }
  }
  write_rgb(path, width, height, rgb, comment);
}

/// Grid of standalone images (used for augmented-batch dumps).
inline void image_grid(const std::vector<Tensor>& images, int h, int w, int c, int cols,
                       const std::string& path, const std::string& comment = "") {
  if (images.empty()) throw std::invalid_argument("png: no images for grid");
  const int rows = static_cast<int>((images.size() + cols - 1) / cols);
  const int cell_w = w + 1, cell_h = h + 1;
  const int width = cols * cell_w + 1;
  const int height = rows * cell_h + 1;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3, 32);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int ox = 1 + static_cast<int>(i % cols) * cell_w;
    const int oy = 1 + static_cast<int>(i / cols) * cell_h;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          const int src_ch = std::min(ch, c - 1);
          rgb[((static_cast<std::size_t>(oy + y) * width) + (ox + x)) * 3 + ch] =
              to_byte(images[i][(static_cast<std::size_t>(y) * w + x) * c + src_ch]);
        }
      }
    }
  }
  write_rgb(path, width, height, rgb, comment);
}

}  // namespace png
}  // namespace poisonlab

#endif  // POISONLAB_PNG_HPP_
