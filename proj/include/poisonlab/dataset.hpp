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

#ifndef POISONLAB_DATASET_HPP_
#define POISONLAB_DATASET_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "poisonlab/rng.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace data {

/// One labeled image, pixels in [0,1], shape [h,w,c].
struct Example {
  Tensor image;
  int label = 0;
};

/// Immutable after construction; indices are stable for the whole run so
/// poison records can refer to them.
struct Dataset {
  int classes = 0;
  int h = 0, w = 0, c = 0;
  std::vector<Example> examples;
  std::string provenance;

  std::size_t size() const { return examples.size(); }

  void check_example(const Example& e) const {
    if (e.label < 0 || e.label >= classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(e.label) + " out of range");
    }
    if (e.image.shape != Shape{h, w, c}) {
      throw std::invalid_argument("dataset: image shape " + shape_str(e.image.shape) +
                                  " does not match geometry");
    }
  }
};

inline std::vector<std::size_t> class_indices(const Dataset& ds, int label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.examples[i].label == label) out.push_back(i);
  }
  return out;
}

inline std::vector<std::size_t> label_histogram(const Dataset& ds) {
  std::vector<std::size_t> hist(static_cast<std::size_t>(ds.classes), 0);
  for (const Example& e : ds.examples) hist[static_cast<std::size_t>(e.label)]++;
  return hist;
}

/// Gather examples into a [B,h,w,c] batch tensor.
inline Tensor batch_images(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Tensor t({static_cast<int>(idx.size()), ds.h, ds.w, ds.c});
  const std::size_t stride = static_cast<std::size_t>(ds.h) * ds.w * ds.c;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = ds.examples[idx[i]].image;
    std::copy(img.data.begin(), img.data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return t;
}

inline Tensor batch_labels_onehot(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Tensor t({static_cast<int>(idx.size()), ds.classes});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    t[i * static_cast<std::size_t>(ds.classes) +
      static_cast<std::size_t>(ds.examples[idx[i]].label)] = 1.0;
  }
  return t;
}

/// Seeded stratified split into (train, val). Disjoint and exhaustive;
/// per-class proportions preserved to within rounding.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction,
                                         std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("split: val_fraction must lie in (0,1)");
  }
  Dataset train{ds.classes, ds.h, ds.w, ds.c, {}, ds.provenance + "/train"};
  Dataset val{ds.classes, ds.h, ds.w, ds.c, {}, ds.provenance + "/val"};
  Rng rng(child_seed(seed, 0x5711));
  for (int k = 0; k < ds.classes; ++k) {
    std::vector<std::size_t> idx = class_indices(ds, k);
    rng.shuffle(idx);
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size()) + 0.5));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_val ? val : train).examples.push_back(ds.examples[idx[i]]);
    }
  }
  return {std::move(train), std::move(val)};
}

/// Restrict to the given class labels, relabelled 0..n-1 in the given order.
inline Dataset subset_classes(const Dataset& ds, const std::vector<int>& keep) {
  Dataset out{static_cast<int>(keep.size()), ds.h, ds.w, ds.c, {}, ds.provenance + "/subset"};
  for (const Example& e : ds.examples) {
    for (std::size_t j = 0; j < keep.size(); ++j) {
      if (e.label == keep[j]) {
        out.examples.push_back({e.image, static_cast<int>(j)});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Self-describing binary container (magic, geometry, provenance, then raw
// labels and float64 pixels). Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  os.write("PLDS", 4);
  detail::put_u32(os, 1);  // version
  detail::put_u32(os, static_cast<std::uint32_t>(ds.classes));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.h));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.w));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.c));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.provenance.size()));
  os.write(ds.provenance.data(), static_cast<std::streamsize>(ds.provenance.size()));
  for (const Example& e : ds.examples) {
    detail::put_u32(os, static_cast<std::uint32_t>(e.label));
    os.write(reinterpret_cast<const char*>(e.image.data.data()),
             static_cast<std::streamsize>(e.image.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PLDS", 4) != 0) {
    throw std::runtime_error("load_dataset: " + path + " is not a dataset container");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw std::runtime_error("load_dataset: unsupported version");
  Dataset ds;
  ds.classes = static_cast<int>(detail::get_u32(is));
  ds.h = static_cast<int>(detail::get_u32(is));
  ds.w = static_cast<int>(detail::get_u32(is));
  ds.c = static_cast<int>(detail::get_u32(is));
  const std::uint32_t count = detail::get_u32(is);
  const std::uint32_t prov_len = detail::get_u32(is);
  ds.provenance.resize(prov_len);
  is.read(ds.provenance.data(), prov_len);
  const std::size_t pixels = static_cast<std::size_t>(ds.h) * ds.w * ds.c;
  for (std::uint32_t i = 0; i < count; ++i) {
    Example e;
    e.label = static_cast<int>(detail::get_u32(is));
    e.image = Tensor({ds.h, ds.w, ds.c});
    is.read(reinterpret_cast<char*>(e.image.data.data()),
            static_cast<std::streamsize>(pixels * sizeof(double)));
    if (!is) {
      throw std::runtime_error("load_dataset: " + path + " truncated at record " +
                               std::to_string(i));
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace data
}  // namespace poisonlab

#endif  // POISONLAB_DATASET_HPP_
