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

#ifndef POISONLAB_CIFAR10_HPP_
#define POISONLAB_CIFAR10_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "poisonlab/dataset.hpp"

namespace poisonlab {
namespace data {

// Standard CIFAR-10 binary batch layout: 3073 bytes per record, 1 label
// byte followed by 3072 channel-major pixel bytes (R plane, G plane, B
// plane; each plane row-major 32x32).
inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Load one binary batch file. Pixels are scaled to [0,1] as byte/255.
inline Dataset load_cifar10_batch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cifar10: cannot open " + path);
  is.seekg(0, std::ios::end);
  const std::size_t bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
    throw std::runtime_error("cifar10: " + path + " has " + std::to_string(bytes) +
                             " bytes, not a multiple of 3073; truncated at byte offset " +
                             std::to_string(bytes - bytes % kCifarRecordBytes));
  }
  const std::size_t count = bytes / kCifarRecordBytes;
  Dataset ds{10, 32, 32, 3, {}, "cifar10:" + path};
  std::vector<unsigned char> rec(kCifarRecordBytes);
  for (std::size_t i = 0; i < count; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    if (!is) {
      throw std::runtime_error("cifar10: short read in " + path + " at byte offset " +
                               std::to_string(i * kCifarRecordBytes));
    }
    Example e;
    e.label = rec[0];
    if (e.label > 9) {
      throw std::runtime_error("cifar10: invalid label byte " + std::to_string(e.label) + " at byte offset " +
                               std::to_string(i * kCifarRecordBytes));
    }
    e.image = Tensor({32, 32, 3});
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const unsigned char b = rec[1 + static_cast<std::size_t>(ch) * 1024 + y * 32 + x];
          e.image[(static_cast<std::size_t>(y) * 32 + x) * 3 + ch] = b / 255.0;
        }
      }
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

/// Load a directory holding the standard batch files. Returns (train, test):
/// data_batch_1..5.bin concatenated, and test_batch.bin.
inline std::pair<Dataset, Dataset> load_cifar10_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset train{10, 32, 32, 3, {}, "cifar10:" + dir + "/train"};
  for (int i = 1; i <= 5; ++i) {
    const std::string path = (fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string();
    if (!fs::exists(path)) throw std::runtime_error("cifar10: missing batch file " + path);
    Dataset part = load_cifar10_batch(path);
    train.examples.insert(train.examples.end(), part.examples.begin(), part.examples.end());
  }
  const std::string tpath = (fs::path(dir) / "test_batch.bin").string();
  if (!fs::exists(tpath)) throw std::runtime_error("cifar10: missing batch file " + tpath);
  Dataset test = load_cifar10_batch(tpath);
  test.provenance = "cifar10:" + dir + "/test";
  return {std::move(train), std::move(test)};
}

/// Loader entry point: a file loads as one batch, a directory as the full
/// train split (use load_cifar10_dir when the test split is also needed).
inline Dataset load_cifar10(const std::string& path) {
  if (std::filesystem::is_directory(path)) return load_cifar10_dir(path).first;
  return load_cifar10_batch(path);
}

}  // namespace data
}  // namespace poisonlab

#endif  // POISONLAB_CIFAR10_HPP_
