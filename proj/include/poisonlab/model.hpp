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

#ifndef POISONLAB_MODEL_HPP_
#define POISONLAB_MODEL_HPP_

#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "poisonlab/graph.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace nn {

struct Dense {
  int in = 0, out = 0;
};
struct Conv {
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;
};
struct Relu {};
struct Flatten {};
using Layer = std::variant<Dense, Conv, Relu, Flatten>;

inline const char* layer_name(const Layer& l) {
  if (std::holds_alternative<Dense>(l)) return "dense";
  if (std::holds_alternative<Conv>(l)) return "conv";
  if (std::holds_alternative<Relu>(l)) return "relu";
  return "flatten";
}

/// Feed-forward classifier over [B,h,w,c] batches. Parameters live in one
/// flat vector; per-layer views are (offset,size) slices of it, so writes
/// through either view are the same storage.
class Model {
 public:
  struct Slice {
    std::size_t offset = 0, size = 0;
  };

  /// Param leaf nodes created by one forward pass, for gradient assembly.
  /// relu_inputs lists the pre-activation nodes, so callers probing with
  /// finite differences can stay away from the kinks.
  struct Binding {
    std::vector<int> nodes;
    std::vector<Slice> slices;
    std::vector<int> relu_inputs;
  };

  Model(int h, int w, int c, int classes, std::vector<Layer> layers, std::string spec = "")
      : h_(h), w_(w), c_(c), classes_(classes), layers_(std::move(layers)), spec_(std::move(spec)) {
    // Geometry walk; rejects inconsistent layer chains at construction.
    int ch = h_, cw = w_, cc = c_;
    bool flat = false;
    int flat_n = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (const Dense* d = std::get_if<Dense>(&l)) {
        if (!flat) layer_error(i, "dense layer requires flattened input");
        if (d->in != flat_n)
          layer_error(i, "dense expects " + std::to_string(d->in) + " inputs, gets " +
                             std::to_string(flat_n));
        slices_.push_back({total_, static_cast<std::size_t>(d->in) * d->out});
        total_ += slices_.back().size;
        slices_.push_back({total_, static_cast<std::size_t>(d->out)});
        total_ += slices_.back().size;
        flat_n = d->out;
      } else if (const Conv* cv = std::get_if<Conv>(&l)) {
        if (flat) layer_error(i, "conv layer requires spatial input");
        if (cv->in_ch != cc)
          layer_error(i, "conv expects " + std::to_string(cv->in_ch) + " channels, gets " +
                             std::to_string(cc));
        const std::size_t wsize = static_cast<std::size_t>(cv->k) * cv->k * cv->in_ch * cv->out_ch;
        slices_.push_back({total_, wsize});
        total_ += wsize;
        slices_.push_back({total_, static_cast<std::size_t>(cv->out_ch)});
        total_ += slices_.back().size;
        ch = (ch + 2 * cv->pad - cv->k) / cv->stride + 1;
        cw = (cw + 2 * cv->pad - cv->k) / cv->stride + 1;
        cc = cv->out_ch;
        if (ch <= 0 || cw <= 0) layer_error(i, "conv output collapses to zero extent");
      } else if (std::holds_alternative<Flatten>(l)) {
        if (flat) layer_error(i, "flatten applied twice");
        flat = true;
        flat_n = ch * cw * cc;
      }
    }
    if (!flat || flat_n != classes_) {
      throw std::invalid_argument("model: layer chain must end in " + std::to_string(classes_) +
                                  " logits");
    }
    params_.assign(total_, 0.0);
  }

  static Model mlp(int h, int w, int c, int classes, const std::vector<int>& hidden) {
    std::vector<Layer> ls;
    ls.push_back(Flatten{});
    int prev = h * w * c;
    std::ostringstream spec;
    spec << "mlp:";
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      ls.push_back(Dense{prev, hidden[i]});
      ls.push_back(Relu{});
      prev = hidden[i];
      spec << (i ? "," : "") << hidden[i];
    }
    ls.push_back(Dense{prev, classes});
    return Model(h, w, c, classes, std::move(ls), spec.str());
  }

  /// Three stride-2 convs and a dense head; small enough to train on a
  /// laptop CPU in seconds at 32x32.
  static Model small_convnet(int h, int w, int c, int classes) {
    std::vector<Layer> ls;
    ls.push_back(Conv{c, 12, 3, 2, 1});
    ls.push_back(Relu{});
    int ch = (h + 1) / 2, cw = (w + 1) / 2;
    ls.push_back(Conv{12, 24, 3, 2, 1});
    ls.push_back(Relu{});
    ch = (ch + 1) / 2;
    cw = (cw + 1) / 2;
    ls.push_back(Conv{24, 24, 3, 2, 1});
    ls.push_back(Relu{});
    ch = (ch + 1) / 2;
    cw = (cw + 1) / 2;
    ls.push_back(Flatten{});
    ls.push_back(Dense{ch * cw * 24, classes});
    return Model(h, w, c, classes, std::move(ls), "smallconvnet");
  }

  static Model linear(int h, int w, int c, int classes) {
    std::vector<Layer> ls;
    ls.push_back(Flatten{});
    ls.push_back(Dense{h * w * c, classes});
    return Model(h, w, c, classes, std::move(ls), "linear");
  }

  /// Build from a spec string: "smallconvnet", "linear", or "mlp:48,32".
  static Model from_spec(const std::string& spec, int h, int w, int c, int classes) {
    if (spec == "smallconvnet") return small_convnet(h, w, c, classes);
    if (spec == "linear") return linear(h, w, c, classes);
    if (spec.rfind("mlp", 0) == 0) {
      std::vector<int> widths;
      if (spec.size() > 4) {
        std::istringstream is(spec.substr(4));
        std::string tok;
        while (std::getline(is, tok, ',')) {
          if (!tok.empty()) widths.push_back(std::stoi(tok));
        }
      }
      return mlp(h, w, c, classes, widths);
    }
    throw std::invalid_argument("model: unknown spec '" + spec + "'");
  }

  void init_he(Rng& rng) {
    std::size_t li = 0;
    for (const Layer& l : layers_) {
      if (const Dense* d = std::get_if<Dense>(&l)) {
        fill_normal(rng, slices_[li], std::sqrt(2.0 / d->in));
        fill_zero(slices_[li + 1]);
        li += 2;
      } else if (const Conv* cv = std::get_if<Conv>(&l)) {
        fill_normal(rng, slices_[li], std::sqrt(2.0 / (cv->k * cv->k * cv->in_ch)));
        fill_zero(slices_[li + 1]);
        li += 2;
      }
    }
  }

  int forward(Graph& g, int input, Binding* binding = nullptr) const {
    const Shape& s = g.val(input).shape;
    if (s.size() != 4 || s[1] != h_ || s[2] != w_ || s[3] != c_) {
      throw std::invalid_argument("forward: batch " + shape_str(s) + " does not match model input [B," +
                                  std::to_string(h_) + "," + std::to_string(w_) + "," +
                                  std::to_string(c_) + "] (layer 0 " +
                                  (layers_.empty() ? "?" : layer_name(layers_[0])) + ")");
    }
    const int batch = s[0];
    int cur = input;
    std::size_t li = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (const Dense* d = std::get_if<Dense>(&l)) {
        const int wn = param_leaf(g, slices_[li], {d->in, d->out}, binding);
        const int bn = param_leaf(g, slices_[li + 1], {d->out}, binding);
        li += 2;
        cur = g.add_rowvec(g.matmul(cur, wn), bn);
      } else if (const Conv* cv = std::get_if<Conv>(&l)) {
        const Shape& cs = g.val(cur).shape;
        ConvGeom geom;
        geom.in_h = cs[1];
        geom.in_w = cs[2];
        geom.in_ch = cv->in_ch;
        geom.out_ch = cv->out_ch;
        geom.k = cv->k;
        geom.stride = cv->stride;
        geom.pad = cv->pad;
        const int wn = param_leaf(g, slices_[li], {cv->k * cv->k * cv->in_ch, cv->out_ch}, binding);
        const int bn = param_leaf(g, slices_[li + 1], {cv->out_ch}, binding);
        li += 2;
        const int y = g.conv2d(cur, wn, geom);
        const Shape& ys = g.val(y).shape;
        const int yr = g.reshape(y, {ys[0] * ys[1] * ys[2], ys[3]});
        cur = g.reshape(g.add_rowvec(yr, bn), ys);
      } else if (std::holds_alternative<Relu>(l)) {
        if (binding) binding->relu_inputs.push_back(cur);
        cur = g.relu(cur);
      } else {
        cur = g.reshape(cur, {batch, static_cast<int>(g.val(cur).numel()) / batch});
      }
    }
    return cur;
  }

  /// Forward from a raw batch tensor; the batch enters as a constant.
  Tensor logits(const Tensor& batch) const {
    Graph g;
    const int x = g.leaf(batch, false);
    const int out = forward(g, x);
    return g.val(out);
  }

  bool second_order_capable() const {
    for (const Layer& l : layers_) {
      if (std::holds_alternative<Conv>(l)) return false;
    }
    return true;
  }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return total_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::string& spec() const { return spec_; }
  int input_h() const { return h_; }
  int input_w() const { return w_; }
  int input_c() const { return c_; }
  int classes() const { return classes_; }

 private:
  static void layer_error(std::size_t idx, const std::string& msg) {
    throw std::invalid_argument("model layer " + std::to_string(idx) + ": " + msg);
  }

  int param_leaf(Graph& g, const Slice& sl, Shape shape, Binding* binding) const {
    Tensor t(std::move(shape),
             std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(sl.offset),
                                 params_.begin() + static_cast<std::ptrdiff_t>(sl.offset + sl.size)));
    const int id = g.leaf(std::move(t), true);
    if (binding) {
      binding->nodes.push_back(id);
      binding->slices.push_back(sl);
    }
    return id;
  }

  void fill_normal(Rng& rng, const Slice& sl, double stddev) {
    for (std::size_t i = 0; i < sl.size; ++i) params_[sl.offset + i] = rng.normal(0.0, stddev);
  }
  void fill_zero(const Slice& sl) {
    for (std::size_t i = 0; i < sl.size; ++i) params_[sl.offset + i] = 0.0;
  }

  int h_, w_, c_, classes_;
  std::vector<Layer> layers_;
  std::string spec_;
  std::vector<Slice> slices_;
  std::size_t total_ = 0;
  std::vector<double> params_;
};

/// Mean softmax cross-entropy over the batch against (possibly soft) labels.
/// Each label row must be nonnegative and sum to 1 within 1e-9.
inline int cross_entropy(Graph& g, int logits, const Tensor& soft_labels) {
  const Shape& ls = g.val(logits).shape;
  if (soft_labels.shape != ls) {
    throw std::invalid_argument("cross_entropy: labels " + shape_str(soft_labels.shape) +
                                " vs logits " + shape_str(ls));
  }
  const int rows = ls[0], cols = ls[1];
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double y = soft_labels[static_cast<std::size_t>(r) * cols + c];
      if (y < 0.0)
        throw std::invalid_argument("cross_entropy: negative label entry in row " +
                                    std::to_string(r));
      sum += y;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("cross_entropy: label row " + std::to_string(r) + " sums to " +
                                  std::to_string(sum));
    }
  }
  const int lab = g.constant(soft_labels);
  const int per = g.xent_vec(logits, lab);
  const int ones = g.constant(Tensor::full({rows}, 1.0));
  return g.scale(g.dot(per, ones), 1.0 / rows);
}

/// Flat parameter gradient with the Model::params layout. Consumes the tape.
inline std::vector<double> grad_params(Graph& g, int loss, const Model::Binding& binding,
                                       std::size_t param_count) {
  std::vector<Tensor> grads = g.grad(loss, binding.nodes);
  std::vector<double> flat(param_count, 0.0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Model::Slice& sl = binding.slices[i];
    for (std::size_t j = 0; j < sl.size; ++j) flat[sl.offset + j] = grads[i][j];
  }
  return flat;
}

/// Gradient of the loss with respect to the input batch leaf. Consumes the tape.
inline Tensor grad_inputs(Graph& g, int loss, int input_leaf) {
  return g.grad(loss, {input_leaf})[0];
}

/// Records 1 - cos(grad_nodes, target) on the tape and returns the node.
/// grad_nodes must come from grad_graph so the result stays differentiable.
inline int alignment_node(Graph& g, const std::vector<int>& grad_nodes,
                          const Model::Binding& binding, const std::vector<double>& target) {
  double tt = 0.0;
  for (double t : target) tt += t * t;
  if (tt == 0.0) throw std::invalid_argument("alignment: target gradient is zero");
  int num = -1, gg = -1;
  for (std::size_t i = 0; i < grad_nodes.size(); ++i) {
    const Model::Slice& sl = binding.slices[i];
    Tensor tslice(g.val(grad_nodes[i]).shape,
                  std::vector<double>(target.begin() + static_cast<std::ptrdiff_t>(sl.offset),
                                      target.begin() +
                                          static_cast<std::ptrdiff_t>(sl.offset + sl.size)));
    const int tn = g.constant(std::move(tslice));
    const int d = g.dot(grad_nodes[i], tn);
    const int q = g.dot(grad_nodes[i], grad_nodes[i]);
    num = num < 0 ? d : g.add(num, d);
    gg = gg < 0 ? q : g.add(gg, q);
  }
  if (g.val(gg)[0] <= 0.0) {
    throw std::runtime_error("alignment: training gradient is zero, cosine undefined");
  }
  const int denom = g.sqrt_ew(g.scale(gg, tt));
  const int cosine = g.div(num, denom);
  return g.sub(g.constant(Tensor::scalar(1.0)), cosine);
}

struct AlignmentResult {
  double value = 0.0;   // 1 - cos, in [0,2]
  Tensor grad;          // d(value)/d(batch), same shape as the batch
};

/// Alignment loss between the parameter gradient of the batch loss and a
/// target gradient; optionally its gradient with respect to the batch via a
/// second reverse pass (dense-path models only).
inline AlignmentResult alignment(const Model& model, const Tensor& batch,
                                 const Tensor& soft_labels, const std::vector<double>& target,
                                 bool with_batch_grad) {
  if (target.size() != model.param_count()) {
    throw std::invalid_argument("alignment: target gradient has wrong length");
  }
  if (with_batch_grad && !model.second_order_capable()) {
    throw std::runtime_error(
        "alignment: model has a conv layer without second-order support; use a dense-path model");
  }
  Graph g;
  const int x = g.leaf(batch, with_batch_grad);
  Model::Binding binding;
  const int logits = model.forward(g, x, &binding);
  const int loss = cross_entropy(g, logits, soft_labels);
  const std::vector<int> grads = g.grad_graph(loss, binding.nodes);
  const int align = alignment_node(g, grads, binding, target);
  AlignmentResult res;
  res.value = g.val(align)[0];
  if (with_batch_grad) res.grad = g.grad(align, {x})[0];
  return res;
}

inline double alignment_loss(const Model& model, const Tensor& batch, const Tensor& soft_labels,
                             const std::vector<double>& target) {
  return alignment(model, batch, soft_labels, target, false).value;
}

inline Tensor grad_of_alignment(const Model& model, const Tensor& batch, const Tensor& soft_labels,
                                const std::vector<double>& target) {
  return alignment(model, batch, soft_labels, target, true).grad;
}

struct SgdState {
  std::vector<double> velocity;
};

/// Momentum SGD update: v <- momentum*v + grad; theta <- theta - lr*v.
/// Rejects non-finite gradients without touching parameters.
inline void sgd_step(Model& model, SgdState& state, const std::vector<double>& grad, double lr,
                     double momentum) {
  if (grad.size() != model.param_count()) {
    throw std::invalid_argument("sgd_step: gradient length mismatch");
  }
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("sgd_step: momentum must lie in [0,1)");
  }
  if (!all_finite(grad)) {
    throw std::runtime_error("sgd_step: non-finite gradient entries");
  }
  if (state.velocity.size() != grad.size()) state.velocity.assign(grad.size(), 0.0);
  std::vector<double>& p = model.params();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.velocity[i] = momentum * state.velocity[i] + grad[i];
    p[i] -= lr * state.velocity[i];
  }
}

}  // namespace nn
}  // namespace poisonlab

#endif  // POISONLAB_MODEL_HPP_
