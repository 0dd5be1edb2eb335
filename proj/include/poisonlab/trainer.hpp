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

#ifndef POISONLAB_TRAINER_HPP_
#define POISONLAB_TRAINER_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/augment.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/util.hpp"

namespace poisonlab {
namespace train {

// ---------------------------------------------------------------------------
// Defense policy
// ---------------------------------------------------------------------------

struct DefensePolicy {
  enum class Kind { kNone, kStandard, kMixup, kCutmix, kCutout, kMaxup, kDpsgd };
  Kind kind = Kind::kNone;
  aug::AugmentationPolicy augment;  // parameters for the augmentation kinds
  double clip = 1.0;                // dpsgd L2 clip bound C (may be +inf)
  double sigma = 0.0;               // dpsgd noise multiplier

  void validate() const {
    if (kind == Kind::kDpsgd) {
      if (!(clip > 0.0)) throw std::invalid_argument("defense: dpsgd requires clip > 0");
      if (sigma < 0.0) throw std::invalid_argument("defense: dpsgd requires sigma >= 0");
      return;
    }
    augment.validate();
  }

  std::string to_string() const {
    if (kind == Kind::kDpsgd) {
      return "dpsgd(" + format_double(clip) + "," + format_double(sigma) + ")";
    }
    return augment.to_string();
  }

  static DefensePolicy parse(const std::string& s) {
    DefensePolicy d;
    if (s.rfind("dpsgd", 0) == 0) {
      d.kind = Kind::kDpsgd;
      const auto open = s.find('(');
      if (open != std::string::npos) {
        if (s.back() != ')') throw std::invalid_argument("defense: unbalanced '(' in '" + s + "'");
        std::istringstream is(s.substr(open + 1, s.size() - open - 2));
        std::string tok;
        std::vector<std::string> args;
        while (std::getline(is, tok, ',')) args.push_back(tok);
        if (args.size() > 0) d.clip = args[0] == "inf" ? std::numeric_limits<double>::infinity()
                                                       : std::stod(args[0]);
        if (args.size() > 1) d.sigma = std::stod(args[1]);
      }
      d.validate();
      return d;
    }
    d.augment = aug::AugmentationPolicy::parse(s);
    switch (d.augment.kind) {
      case aug::AugKind::kNone: d.kind = Kind::kNone; break;
      case aug::AugKind::kStandard: d.kind = Kind::kStandard; break;
      case aug::AugKind::kMixup: d.kind = Kind::kMixup; break;
      case aug::AugKind::kCutmix: d.kind = Kind::kCutmix; break;
      case aug::AugKind::kCutout: d.kind = Kind::kCutout; break;
      case aug::AugKind::kMaxup: d.kind = Kind::kMaxup; break;
    }
    return d;
  }
};

struct TrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  DefensePolicy defense;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("train: epochs must be nonnegative");
    if (batch <= 0) throw std::invalid_argument("train: batch must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    defense.validate();
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
  std::string defense;
  bool soft_label_batches = false;  // audit: some batch entered the loss with mixed labels

  double final_val_acc() const { return epochs.empty() ? 0.0 : epochs.back().val_acc; }

  void to_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("history: cannot open " + path);
    os << "epoch,train_loss,val_accuracy\n";
    for (const EpochStats& e : epochs) {
      os << e.epoch << "," << format_double(e.train_loss) << "," << format_double(e.val_acc)
         << "\n";
    }
  }
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline std::vector<int> predict(const nn::Model& model, const data::Dataset& ds,
                                int eval_batch = 256) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(eval_batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + eval_batch); ++i) idx.push_back(i);
    Tensor logits = model.logits(data::batch_images(ds, idx));
    const int k = model.classes();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (logits[b * k + j] > logits[b * k + best]) best = j;
      }
      out.push_back(best);
    }
  }
  return out;
}

inline double evaluate_accuracy(const nn::Model& model, const data::Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::vector<int> pred = predict(model, ds);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    hit += pred[i] == ds.examples[i].label ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// MaxUp objective
// ---------------------------------------------------------------------------

struct MaxupBatchResult {
  double loss = 0.0;            // mean over examples of the max copy loss
  double mean_all_copies = 0.0; // plain mean over every copy, for comparison
  std::vector<double> grad;     // flows only through each example's argmax copy
  std::vector<int> argmax_copy; // per example, ties broken by lowest index
};

/// Core over pre-expanded copies: copies is [B*m,h,w,c] grouped by example,
/// labels_rep is [B*m,K].
inline MaxupBatchResult maxup_loss_from_copies(const nn::Model& model, const Tensor& copies,
                                               const Tensor& labels_rep, int batch, int m) {
  nn::Graph g;
  nn::Model::Binding binding;
  const int x = g.leaf(copies, false);
  const int logits = model.forward(g, x, &binding);
  const int lab = g.constant(labels_rep);
  const int per = g.xent_vec(logits, lab);

  MaxupBatchResult res;
  const Tensor& lv = g.val(per);
  Tensor sel({batch * m});
  double total_max = 0.0, total_all = 0.0;
  for (int b = 0; b < batch; ++b) {
    int best = 0;
    for (int j = 0; j < m; ++j) {
      const double v = lv[static_cast<std::size_t>(b) * m + j];
      total_all += v;
      if (v > lv[static_cast<std::size_t>(b) * m + best]) best = j;
    }
    res.argmax_copy.push_back(best);
    sel[static_cast<std::size_t>(b) * m + best] = 1.0 / batch;
    total_max += lv[static_cast<std::size_t>(b) * m + best];
  }
  res.loss = total_max / batch;
  res.mean_all_copies = total_all / (static_cast<double>(batch) * m);
  const int objective = g.dot(per, g.constant(std::move(sel)));
  res.grad = nn::grad_params(g, objective, binding, model.param_count());
  return res;
}

/// Expands each example into m base-augmented copies and applies the
/// max-over-copies objective.
inline MaxupBatchResult maxup_loss(const nn::Model& model, const Tensor& images,
                                   const Tensor& labels, int m,
                                   const aug::AugmentationPolicy& base, Rng& rng) {
  const int batch = images.shape.at(0);
  const int h = images.shape.at(1), w = images.shape.at(2), c = images.shape.at(3);
  const int classes = labels.shape.at(1);
  Tensor copies({batch * m, h, w, c});
  Tensor labels_rep({batch * m, classes});
  const std::size_t stride = static_cast<std::size_t>(h) * w * c;
  for (int b = 0; b < batch; ++b) {
    Tensor img({h, w, c},
               std::vector<double>(images.data.begin() + static_cast<std::ptrdiff_t>(b * stride),
                                   images.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
    std::vector<Tensor> expanded = aug::maxup_expand(img, m, base, rng);
    for (int j = 0; j < m; ++j) {
      std::copy(expanded[j].data.begin(), expanded[j].data.end(),
                copies.data.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(b) * m + j) * stride));
      for (int k = 0; k < classes; ++k) {
        labels_rep[(static_cast<std::size_t>(b) * m + j) * classes + k] =
            labels[static_cast<std::size_t>(b) * classes + k];
      }
    }
  }
  return maxup_loss_from_copies(model, copies, labels_rep, batch, m);
}

// ---------------------------------------------------------------------------
// DP-SGD
// ---------------------------------------------------------------------------

/// One flat gradient per example, each from its own single-example pass.
inline std::vector<std::vector<double>> per_example_grads(const nn::Model& model,
                                                          const Tensor& images,
                                                          const Tensor& labels) {
  const int batch = images.shape.at(0);
  const int h = images.shape.at(1), w = images.shape.at(2), c = images.shape.at(3);
  const int classes = labels.shape.at(1);
  const std::size_t stride = static_cast<std::size_t>(h) * w * c;
  std::vector<std::vector<double>> grads;
  grads.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    Tensor img({1, h, w, c},
               std::vector<double>(images.data.begin() + static_cast<std::ptrdiff_t>(b * stride),
                                   images.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
    Tensor lab({1, classes},
               std::vector<double>(labels.data.begin() + static_cast<std::ptrdiff_t>(b * classes),
                                   labels.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * classes)));
    nn::Graph g;
    nn::Model::Binding binding;
    const int x = g.leaf(img, false);
    const int loss = nn::cross_entropy(g, model.forward(g, x, &binding), lab);
    grads.push_back(nn::grad_params(g, loss, binding, model.param_count()));
  }
  return grads;
}

struct DpAudit {
  std::vector<double> pre_clip_norms;
  std::vector<double> post_clip_norms;
};

/// Per-example clip to L2 norm `clip`, average, then add N(0, (sigma*clip/B)^2)
/// noise per coordinate and take a momentum SGD step.
inline void dp_sgd_step(nn::Model& model, nn::SgdState& state,
                        const std::vector<std::vector<double>>& grads, double clip, double sigma,
                        double lr, double momentum, Rng& rng, DpAudit* audit = nullptr) {
  if (!(clip > 0.0)) throw std::invalid_argument("dp_sgd_step: clip must be positive");
  if (sigma < 0.0) throw std::invalid_argument("dp_sgd_step: sigma must be nonnegative");
  if (grads.empty()) throw std::invalid_argument("dp_sgd_step: no per-example gradients");
  const std::size_t p = model.param_count();
  const double batch = static_cast<double>(grads.size());
  std::vector<double> avg(p, 0.0);
  for (const std::vector<double>& g : grads) {
    if (g.size() != p) throw std::invalid_argument("dp_sgd_step: gradient length mismatch");
    if (!all_finite(g)) throw std::runtime_error("dp_sgd_step: non-finite gradient entries");
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    const double scale = std::isinf(clip) ? 1.0 : std::min(1.0, clip / std::max(norm, 1e-300));
    if (audit) {
      audit->pre_clip_norms.push_back(norm);
      audit->post_clip_norms.push_back(norm * scale);
    }
    for (std::size_t i = 0; i < p; ++i) avg[i] += g[i] * scale;
  }
  for (double& v : avg) v /= batch;
  if (sigma > 0.0) {
    const double stddev = sigma * clip / batch;
    for (double& v : avg) v += rng.normal(0.0, stddev);
  }
  nn::sgd_step(model, state, avg, lr, momentum);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Victim-side training. Baseline flips/crops are applied for every defense
/// kind except `none`; the strong augmentation (or DP step) sits on top.
/// The val set drives the per-epoch accuracy column only.
inline History trainer_run(nn::Model& model, const data::Dataset& train_ds,
                           const data::Dataset* val_ds, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (train_ds.size() == 0) throw std::invalid_argument("train: dataset is empty");
  History hist;
  hist.defense = config.defense.to_string();
  nn::SgdState opt;

  const DefensePolicy& def = config.defense;
  // DP-SGD with no clipping and no noise is exactly plain SGD; use the
  // batched path so the trajectories are identical.
  const bool dp_active = def.kind == DefensePolicy::Kind::kDpsgd &&
                         (std::isfinite(def.clip) || def.sigma > 0.0);

  std::vector<std::size_t> order(train_ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor images = data::batch_images(train_ds, idx);
      Tensor labels = data::batch_labels_onehot(train_ds, idx);
      const int bsz = static_cast<int>(idx.size());

      if (def.kind != DefensePolicy::Kind::kNone) {
        // baseline random flips and crops
        const std::size_t stride = static_cast<std::size_t>(train_ds.h) * train_ds.w * train_ds.c;
        for (int b = 0; b < bsz; ++b) {
          Tensor img({train_ds.h, train_ds.w, train_ds.c},
                     std::vector<double>(images.data.begin() + static_cast<std::ptrdiff_t>(b * stride),
                                         images.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
          Tensor out = aug::standard_aug(img, rng);
          std::copy(out.data.begin(), out.data.end(),
                    images.data.begin() + static_cast<std::ptrdiff_t>(b * stride));
        }
      }

      double batch_loss = 0.0;
      if (def.kind == DefensePolicy::Kind::kMaxup) {
        MaxupBatchResult r =
            maxup_loss(model, images, labels, def.augment.m,
                       [&] {
                         aug::AugmentationPolicy base;
                         base.kind = def.augment.maxup_base;
                         base.cutout_side = def.augment.cutout_side;
                         return base;
                       }(),
                       rng);
        batch_loss = r.loss;
        if (!std::isfinite(batch_loss)) {
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(start / config.batch));
        }
        nn::sgd_step(model, opt, r.grad, config.lr, config.momentum);
      } else if (dp_active) {
        std::vector<std::vector<double>> grads = per_example_grads(model, images, labels);
        {
          nn::Graph g;
          const int x = g.leaf(images, false);
          batch_loss = g.val(nn::cross_entropy(g, model.forward(g, x), labels))[0];
        }
        if (!std::isfinite(batch_loss)) {
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(start / config.batch));
        }
        dp_sgd_step(model, opt, grads, def.clip, def.sigma, config.lr, config.momentum, rng);
      } else {
        if (def.kind == DefensePolicy::Kind::kMixup && bsz >= def.augment.k) {
          aug::SoftBatch soft = aug::mixup_batch(images, labels, def.augment.k, def.augment.alpha, rng);
          images = std::move(soft.images);
          labels = std::move(soft.labels);
          hist.soft_label_batches = true;
        } else if (def.kind == DefensePolicy::Kind::kCutmix && bsz >= 2) {
          aug::SoftBatch soft = aug::cutmix_batch(images, labels, rng);
          images = std::move(soft.images);
          labels = std::move(soft.labels);
          hist.soft_label_batches = true;
        } else if (def.kind == DefensePolicy::Kind::kCutout) {
          const std::size_t stride = static_cast<std::size_t>(train_ds.h) * train_ds.w * train_ds.c;
          for (int b = 0; b < bsz; ++b) {
            Tensor img({train_ds.h, train_ds.w, train_ds.c},
                       std::vector<double>(images.data.begin() + static_cast<std::ptrdiff_t>(b * stride),
                                           images.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
            Tensor out = aug::cutout(img, def.augment.cutout_side, rng).image;
            std::copy(out.data.begin(), out.data.end(),
                      images.data.begin() + static_cast<std::ptrdiff_t>(b * stride));
          }
        }
        nn::Graph g;
        nn::Model::Binding binding;
        const int x = g.leaf(images, false);
        const int loss = nn::cross_entropy(g, model.forward(g, x, &binding), labels);
        batch_loss = g.val(loss)[0];
        if (!std::isfinite(batch_loss)) {
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(start / config.batch));
        }
        nn::sgd_step(model, opt, nn::grad_params(g, loss, binding, model.param_count()), config.lr,
                     config.momentum);
      }
      loss_sum += batch_loss * bsz;
      loss_count += idx.size();
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(loss_count);
    stats.val_acc = val_ds ? evaluate_accuracy(model, *val_ds)
                           : std::numeric_limits<double>::quiet_NaN();
    hist.epochs.push_back(stats);
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Checkpoints: "PLCK" magic, version, JSON header, raw float64 params.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const nn::Model& model, const std::string& path,
                            const nlohmann::json& extra_meta = {}) {
  nlohmann::json meta = extra_meta;
  meta["model"] = model.spec();
  meta["h"] = model.input_h();
  meta["w"] = model.input_w();
  meta["c"] = model.input_c();
  meta["classes"] = model.classes();
  meta["params"] = model.param_count();
  const std::string header = meta.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write("PLCK", 4);
  data::detail::put_u32(os, 1);
  data::detail::put_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(model.params().data()),
           static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct Checkpoint {
  nn::Model model;
  nlohmann::json meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "PLCK") {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint");
  }
  const std::uint32_t version = data::detail::get_u32(is);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t header_len = data::detail::get_u32(is);
  std::string header(header_len, '\0');
  is.read(header.data(), header_len);
  nlohmann::json meta = nlohmann::json::parse(header);
  nn::Model model = nn::Model::from_spec(meta.at("model").get<std::string>(), meta.at("h"),
                                         meta.at("w"), meta.at("c"), meta.at("classes"));
  is.read(reinterpret_cast<char*>(model.params().data()),
          static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: " + path + " truncated");
  return {std::move(model), std::move(meta)};
}

}  // namespace train
}  // namespace poisonlab

#endif  // POISONLAB_TRAINER_HPP_
