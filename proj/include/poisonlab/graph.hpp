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

#ifndef POISONLAB_GRAPH_HPP_
#define POISONLAB_GRAPH_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisonlab/tensor.hpp"

namespace poisonlab {
namespace nn {

namespace detail {

// C[m,n] += op(A) * op(B), where op transposes the stored matrix when the
// corresponding flag is set. Loop orders keep the innermost stride unit
// wherever possible.
inline void matmul_acc(const double* a, const double* b, double* c, int m, int n, int k,
                       bool ta, bool tb) {
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (ta && !tb) {
    // A stored [k,m]
    for (int p = 0; p < k; ++p) {
      const double* arow = a + static_cast<std::size_t>(p) * m;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    // B stored [n,k]
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<std::size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  } else {
    // A stored [k,m], B stored [n,k]
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<std::size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(p) * m + i] * brow[p];
        crow[j] += acc;
      }
    }
  }
}

}  // namespace detail

/// Static geometry of a conv2d op (NHWC activations, [k*k*in_ch, out_ch] kernel).
struct ConvGeom {
  int in_h = 0, in_w = 0, in_ch = 0, out_ch = 0;
  int k = 0, stride = 1, pad = 0;
  int out_h = 0, out_w = 0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kMatmul,
  kAddRowVec,
  kColSum,
  kRowSum,
  kBcastRow,
  kBcastCol,
  kRelu,
  kReshape,
  kSoftmax,
  kXentVec,
  kDot,
  kSMul,
  kSqrt,
  kConv2d,
  kConv2dDx,
  kConv2dDw,
};

struct Node {
  Op op = Op::kConstant;
  std::array<int, 2> in{-1, -1};
  Tensor val;
  bool needs_grad = false;
  bool twice_diff = true;
  double c = 0.0;  // kScale factor / kBcast* extent
  bool ta = false, tb = false;
  ConvGeom conv;
};

/// Computation tape: ops append in topological order and evaluate eagerly;
/// reverse passes walk the record backwards. A reverse pass may itself be
/// recorded (grad_graph), which is what makes gradient-of-gradient work on
/// the dense path.
class Graph {
 public:
  int leaf(Tensor t, bool requires_grad = true) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(t);
    n.needs_grad = requires_grad;
    return push(std::move(n));
  }

  int constant(Tensor t) {
    Node n;
    n.op = Op::kConstant;
    n.val = std::move(t);
    return push(std::move(n));
  }

  int add(int a, int b) {
    require_same_shape("add", a, b);
    Node n = binary(Op::kAdd, a, b, Tensor(val(a).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] + val(b)[i];
    return push(std::move(n));
  }

  int sub(int a, int b) {
    require_same_shape("sub", a, b);
    Node n = binary(Op::kSub, a, b, Tensor(val(a).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] - val(b)[i];
    return push(std::move(n));
  }

  int mul(int a, int b) {
    require_same_shape("mul", a, b);
    Node n = binary(Op::kMul, a, b, Tensor(val(a).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] * val(b)[i];
    return push(std::move(n));
  }

  int div(int a, int b) {
    require_same_shape("div", a, b);
    Node n = binary(Op::kDiv, a, b, Tensor(val(a).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = val(a)[i] / val(b)[i];
    return push(std::move(n));
  }

  int scale(int a, double c) {
    Node n = unary(Op::kScale, a, Tensor(val(a).shape));
    n.c = c;
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = c * val(a)[i];
    return push(std::move(n));
  }

  int matmul(int a, int b, bool ta = false, bool tb = false) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const int ra = val(a).shape[0], ca = val(a).shape[1];
    const int rb = val(b).shape[0], cb = val(b).shape[1];
    const int m = ta ? ca : ra, ka = ta ? ra : ca;
    const int kb = tb ? cb : rb, nn = tb ? rb : cb;
    if (ka != kb) {
      throw std::invalid_argument("matmul: inner extents disagree: " + shape_str(val(a).shape) +
                                  (ta ? "^T" : "") + " x " + shape_str(val(b).shape) +
                                  (tb ? "^T" : ""));
    }
    Node n = binary(Op::kMatmul, a, b, Tensor({m, nn}));
    n.ta = ta;
    n.tb = tb;
    detail::matmul_acc(val(a).data.data(), val(b).data.data(), n.val.data.data(), m, nn, ka, ta,
                       tb);
    return push(std::move(n));
  }

  /// x[R,C] + v[C] broadcast over rows.
  int add_rowvec(int x, int v) {
    require_rank("add_rowvec", x, 2);
    const int rows = val(x).shape[0], cols = val(x).shape[1];
    if (static_cast<int>(val(v).numel()) != cols) {
      throw std::invalid_argument("add_rowvec: vector length " + std::to_string(val(v).numel()) +
                                  " vs row width " + std::to_string(cols));
    }
    Node n = binary(Op::kAddRowVec, x, v, Tensor({rows, cols}));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        n.val[static_cast<std::size_t>(r) * cols + c] =
            val(x)[static_cast<std::size_t>(r) * cols + c] + val(v)[c];
    return push(std::move(n));
  }

  int col_sum(int x) {
    require_rank("col_sum", x, 2);
    const int rows = val(x).shape[0], cols = val(x).shape[1];
    Node n = unary(Op::kColSum, x, Tensor({cols}));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) n.val[c] += val(x)[static_cast<std::size_t>(r) * cols + c];
    return push(std::move(n));
  }

  int row_sum(int x) {
    require_rank("row_sum", x, 2);
    const int rows = val(x).shape[0], cols = val(x).shape[1];
    Node n = unary(Op::kRowSum, x, Tensor({rows, 1}));
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int c = 0; c < cols; ++c) acc += val(x)[static_cast<std::size_t>(r) * cols + c];
      n.val[r] = acc;
    }
    return push(std::move(n));
  }

  int bcast_row(int v, int rows) {
    const int cols = static_cast<int>(val(v).numel());
    Node n = unary(Op::kBcastRow, v, Tensor({rows, cols}));
    n.c = rows;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) n.val[static_cast<std::size_t>(r) * cols + c] = val(v)[c];
    return push(std::move(n));
  }

  int bcast_col(int x, int cols) {
    require_rank("bcast_col", x, 2);
    if (val(x).shape[1] != 1) throw std::invalid_argument("bcast_col: expects shape [R,1]");
    const int rows = val(x).shape[0];
    Node n = unary(Op::kBcastCol, x, Tensor({rows, cols}));
    n.c = cols;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) n.val[static_cast<std::size_t>(r) * cols + c] = val(x)[r];
    return push(std::move(n));
  }

  int relu(int x) {
    Node n = unary(Op::kRelu, x, Tensor(val(x).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::max(0.0, val(x)[i]);
    return push(std::move(n));
  }

  int reshape(int x, Shape shape) {
    if (shape_numel(shape) != val(x).numel()) {
      throw std::invalid_argument("reshape: " + shape_str(val(x).shape) + " -> " +
                                  shape_str(shape) + " changes element count");
    }
    Node n = unary(Op::kReshape, x, Tensor(shape, val(x).data));
    return push(std::move(n));
  }

  /// Row-wise softmax of a [B,K] matrix, computed against the row max.
  int softmax(int x) {
    require_rank("softmax", x, 2);
    const int rows = val(x).shape[0], cols = val(x).shape[1];
    Node n = unary(Op::kSoftmax, x, Tensor({rows, cols}));
    for (int r = 0; r < rows; ++r) {
      const double* zr = val(x).data.data() + static_cast<std::size_t>(r) * cols;
      double* sr = n.val.data.data() + static_cast<std::size_t>(r) * cols;
      double mx = zr[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
      double denom = 0.0;
      for (int c = 0; c < cols; ++c) {
        sr[c] = std::exp(zr[c] - mx);
        denom += sr[c];
      }
      for (int c = 0; c < cols; ++c) sr[c] /= denom;
    }
    return push(std::move(n));
  }

  /// Per-example softmax cross-entropy, log-sum-exp form: out[b] =
  /// lse(z_b) - <y_b, z_b>. Labels are expected to be a constant node.
  int xent_vec(int logits, int labels) {
    require_rank("xent_vec", logits, 2);
    require_same_shape("xent_vec", logits, labels);
    const int rows = val(logits).shape[0], cols = val(logits).shape[1];
    Node n = binary(Op::kXentVec, logits, labels, Tensor({rows}));
    for (int r = 0; r < rows; ++r) {
      const double* zr = val(logits).data.data() + static_cast<std::size_t>(r) * cols;
      const double* yr = val(labels).data.data() + static_cast<std::size_t>(r) * cols;
      double mx = zr[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
      double sumexp = 0.0, dotzy = 0.0;
      for (int c = 0; c < cols; ++c) {
        sumexp += std::exp(zr[c] - mx);
        dotzy += yr[c] * zr[c];
      }
      n.val[r] = mx + std::log(sumexp) - dotzy;
    }
    return push(std::move(n));
  }

  /// Flat dot product of two tensors with equal element count -> scalar.
  int dot(int a, int b) {
    if (val(a).numel() != val(b).numel()) {
      throw std::invalid_argument("dot: element counts disagree");
    }
    Node n = binary(Op::kDot, a, b, Tensor::scalar(0.0));
    double acc = 0.0;
    for (std::size_t i = 0; i < val(a).numel(); ++i) acc += val(a)[i] * val(b)[i];
    n.val[0] = acc;
    return push(std::move(n));
  }

  /// Tensor times scalar node.
  int smul(int t, int s) {
    if (val(s).numel() != 1) throw std::invalid_argument("smul: scalar operand must have 1 element");
    Node n = binary(Op::kSMul, t, s, Tensor(val(t).shape));
    const double sv = val(s)[0];
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = sv * val(t)[i];
    return push(std::move(n));
  }

  int sqrt_ew(int x) {
    Node n = unary(Op::kSqrt, x, Tensor(val(x).shape));
    for (std::size_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::sqrt(val(x)[i]);
    return push(std::move(n));
  }

  /// conv2d without bias. x: [B,H,W,Cin], w: [k*k*Cin, Cout].
  /// First-order differentiable only; its reverse ops reject a second pass.
  int conv2d(int x, int w, const ConvGeom& geom_in) {
    require_rank("conv2d", x, 4);
    ConvGeom g = geom_in;
    g.out_h = (g.in_h + 2 * g.pad - g.k) / g.stride + 1;
    g.out_w = (g.in_w + 2 * g.pad - g.k) / g.stride + 1;
    const Shape& xs = val(x).shape;
    if (xs[1] != g.in_h || xs[2] != g.in_w || xs[3] != g.in_ch) {
      throw std::invalid_argument("conv2d: input " + shape_str(xs) + " does not match geometry");
    }
    const int patch = g.k * g.k * g.in_ch;
    if (val(w).shape != Shape{patch, g.out_ch}) {
      throw std::invalid_argument("conv2d: kernel " + shape_str(val(w).shape) + " expected " +
                                  shape_str({patch, g.out_ch}));
    }
    const int batch = xs[0];
    Node n = binary(Op::kConv2d, x, w, Tensor({batch, g.out_h, g.out_w, g.out_ch}));
    n.conv = g;
    std::vector<double> cols(static_cast<std::size_t>(g.out_h) * g.out_w * patch);
    for (int b = 0; b < batch; ++b) {
      im2col(val(x).data.data() + static_cast<std::size_t>(b) * g.in_h * g.in_w * g.in_ch, g,
             cols.data());
      detail::matmul_acc(cols.data(), val(w).data.data(),
                         n.val.data.data() +
                             static_cast<std::size_t>(b) * g.out_h * g.out_w * g.out_ch,
                         g.out_h * g.out_w, g.out_ch, patch, false, false);
    }
    return push(std::move(n));
  }

  const Tensor& val(int id) const { return nodes_.at(static_cast<std::size_t>(id)).val; }
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

  /// Reverse pass for a scalar node. Consumes the tape: a second plain
  /// reverse pass on this graph is rejected. Adjoint scratch nodes are
  /// discarded before returning.
  std::vector<Tensor> grad(int f, const std::vector<int>& wrt) {
    const std::size_t n0 = nodes_.size();
    std::vector<int> ids = backward_impl(f, wrt);
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(val(id));
    nodes_.resize(n0);
    consumed_ = true;
    return out;
  }

  /// Reverse pass whose adjoint arithmetic is itself recorded, so the
  /// returned gradient nodes can be differentiated again. Leaves the tape
  /// active.
  std::vector<int> grad_graph(int f, const std::vector<int>& wrt) {
    return backward_impl(f, wrt);
  }

 private:
  Node unary(Op op, int a, Tensor v) {
    Node n;
    n.op = op;
    n.in = {check_id(a), -1};
    n.val = std::move(v);
    n.needs_grad = nodes_[a].needs_grad;
    return n;
  }

  Node binary(Op op, int a, int b, Tensor v) {
    Node n;
    n.op = op;
    n.in = {check_id(a), check_id(b)};
    n.val = std::move(v);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return n;
  }

  int check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw std::out_of_range("graph: bad node id " + std::to_string(id));
    }
    return id;
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void require_same_shape(const char* what, int a, int b) const {
    if (!val(a).same_shape(val(b))) {
      throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(val(a).shape) +
                                  " vs " + shape_str(val(b).shape));
    }
  }

  void require_rank(const char* what, int x, std::size_t rank) const {
    if (val(x).shape.size() != rank) {
      throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                  ", got " + shape_str(val(x).shape));
    }
  }

  static void im2col(const double* x, const ConvGeom& g, double* cols) {
    std::size_t idx = 0;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              const double* src = x + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_ch;
              for (int c = 0; c < g.in_ch; ++c) cols[idx++] = src[c];
            } else {
              for (int c = 0; c < g.in_ch; ++c) cols[idx++] = 0.0;
            }
          }
        }
      }
    }
  }

  static void col2im_acc(const double* cols, const ConvGeom& g, double* x) {
    std::size_t idx = 0;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              double* dst = x + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_ch;
              for (int c = 0; c < g.in_ch; ++c) dst[c] += cols[idx++];
            } else {
              idx += static_cast<std::size_t>(g.in_ch);
            }
          }
        }
      }
    }
  }

  // d(conv)/dx: scatter G * W^T back through the patch geometry.
  int conv2d_dx(int gid, int w, const ConvGeom& g) {
    const int patch = g.k * g.k * g.in_ch;
    const int batch = val(gid).shape[0];
    Node n = binary(Op::kConv2dDx, gid, w, Tensor({batch, g.in_h, g.in_w, g.in_ch}));
    n.conv = g;
    n.twice_diff = false;
    std::vector<double> dcols(static_cast<std::size_t>(g.out_h) * g.out_w * patch);
    for (int b = 0; b < batch; ++b) {
      std::fill(dcols.begin(), dcols.end(), 0.0);
      detail::matmul_acc(val(gid).data.data() +
                             static_cast<std::size_t>(b) * g.out_h * g.out_w * g.out_ch,
                         val(w).data.data(), dcols.data(), g.out_h * g.out_w, patch, g.out_ch,
                         false, true);
      col2im_acc(dcols.data(), g,
                 n.val.data.data() + static_cast<std::size_t>(b) * g.in_h * g.in_w * g.in_ch);
    }
    return push(std::move(n));
  }

  // d(conv)/dw: im2col(x)^T * G, recomputing the patch matrix.
  int conv2d_dw(int gid, int x, const ConvGeom& g) {
    const int patch = g.k * g.k * g.in_ch;
    const int batch = val(gid).shape[0];
    Node n = binary(Op::kConv2dDw, gid, x, Tensor({patch, g.out_ch}));
    n.conv = g;
    n.twice_diff = false;
    std::vector<double> cols(static_cast<std::size_t>(g.out_h) * g.out_w * patch);
    for (int b = 0; b < batch; ++b) {
      im2col(val(x).data.data() + static_cast<std::size_t>(b) * g.in_h * g.in_w * g.in_ch, g,
             cols.data());
      detail::matmul_acc(cols.data(),
                         val(gid).data.data() +
                             static_cast<std::size_t>(b) * g.out_h * g.out_w * g.out_ch,
                         n.val.data.data(), patch, g.out_ch, g.out_h * g.out_w, true, false);
    }
    return push(std::move(n));
  }

  std::vector<int> backward_impl(int f, const std::vector<int>& wrt) {
    if (consumed_) {
      throw std::logic_error("graph: tape already consumed by a previous reverse pass");
    }
    check_id(f);
    if (val(f).numel() != 1) {
      throw std::invalid_argument("grad: objective must be scalar, got " +
                                  shape_str(val(f).shape));
    }
    for (int w : wrt) {
      check_id(w);
      if (!nodes_[static_cast<std::size_t>(w)].needs_grad) {
        // Differentiating w.r.t. a pure constant is a caller bug.
        if (nodes_[static_cast<std::size_t>(w)].op == Op::kConstant) {
          throw std::invalid_argument("grad: wrt node is a constant");
        }
      }
    }

    const int n0 = static_cast<int>(nodes_.size());
    std::vector<int> adj(static_cast<std::size_t>(n0), -1);
    adj[static_cast<std::size_t>(f)] = constant(Tensor::full(val(f).shape, 1.0));

    for (int i = f; i >= 0; --i) {
      const int g = adj[static_cast<std::size_t>(i)];
      if (g < 0) continue;
      const Op op = nodes_[static_cast<std::size_t>(i)].op;
      if (op == Op::kLeaf || op == Op::kConstant) continue;
      if (!nodes_[static_cast<std::size_t>(i)].needs_grad) continue;
      emit_backward(i, g, adj);
    }

    std::vector<int> out;
    out.reserve(wrt.size());
    for (int w : wrt) {
      int a = adj[static_cast<std::size_t>(w)];
      if (a < 0) a = constant(Tensor::zeros(val(w).shape));
      out.push_back(a);
    }
    return out;
  }

  void accumulate(std::vector<int>& adj, int target, int contrib) {
    if (target < 0 || static_cast<std::size_t>(target) >= adj.size()) return;
    if (!nodes_[static_cast<std::size_t>(target)].needs_grad) return;
    int& slot = adj[static_cast<std::size_t>(target)];
    slot = slot < 0 ? contrib : add(slot, contrib);
  }

  void emit_backward(int i, int g, std::vector<int>& adj) {
    const Op op = nodes_[static_cast<std::size_t>(i)].op;
    const int a = nodes_[static_cast<std::size_t>(i)].in[0];
    const int b = nodes_[static_cast<std::size_t>(i)].in[1];
    switch (op) {
      case Op::kAdd:
        accumulate(adj, a, g);
        accumulate(adj, b, g);
        break;
      case Op::kSub:
        accumulate(adj, a, g);
        if (b >= 0 && nodes_[static_cast<std::size_t>(b)].needs_grad)
          accumulate(adj, b, scale(g, -1.0));
        break;
      case Op::kMul:
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) accumulate(adj, a, mul(g, b));
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) accumulate(adj, b, mul(g, a));
        break;
      case Op::kDiv:
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) accumulate(adj, a, div(g, b));
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
          const int num = mul(g, a);
          const int den = mul(b, b);
          accumulate(adj, b, scale(div(num, den), -1.0));
        }
        break;
      case Op::kScale:
        accumulate(adj, a, scale(g, nodes_[static_cast<std::size_t>(i)].c));
        break;
      case Op::kMatmul: {
        const bool ta = nodes_[static_cast<std::size_t>(i)].ta;
        const bool tb = nodes_[static_cast<std::size_t>(i)].tb;
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) {
          accumulate(adj, a, ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb));
        }
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
          accumulate(adj, b, tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false));
        }
        break;
      }
      case Op::kAddRowVec:
        accumulate(adj, a, g);
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) accumulate(adj, b, col_sum(g));
        break;
      case Op::kColSum:
        accumulate(adj, a, bcast_row(g, val(a).shape[0]));
        break;
      case Op::kRowSum:
        accumulate(adj, a, bcast_col(g, val(a).shape[1]));
        break;
      case Op::kBcastRow:
        accumulate(adj, a, col_sum(g));
        break;
      case Op::kBcastCol:
        accumulate(adj, a, row_sum(g));
        break;
      case Op::kRelu: {
        // Mask is a constant of the pass: relu'' == 0 everywhere by
        // convention, including at the kink.
        Tensor mask(val(a).shape);
        for (std::size_t j = 0; j < mask.numel(); ++j) mask[j] = val(a)[j] > 0.0 ? 1.0 : 0.0;
        accumulate(adj, a, mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kReshape:
        accumulate(adj, a, reshape(g, val(a).shape));
        break;
      case Op::kSoftmax: {
        const int gs = mul(g, i);
        const int inner = bcast_col(row_sum(gs), val(i).shape[1]);
        accumulate(adj, a, mul(i, sub(g, inner)));
        break;
      }
      case Op::kXentVec: {
        const int rows = val(a).shape[0], cols = val(a).shape[1];
        const int gcol = bcast_col(reshape(g, {rows, 1}), cols);
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) {
          accumulate(adj, a, mul(gcol, sub(softmax(a), b)));
        }
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) {
          accumulate(adj, b, mul(gcol, scale(a, -1.0)));
        }
        break;
      }
      case Op::kDot:
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) accumulate(adj, a, smul(b, g));
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) accumulate(adj, b, smul(a, g));
        break;
      case Op::kSMul:
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) accumulate(adj, a, smul(g, b));
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) accumulate(adj, b, dot(g, a));
        break;
      case Op::kSqrt:
        accumulate(adj, a, scale(div(g, i), 0.5));
        break;
      case Op::kConv2d: {
        const ConvGeom cg = nodes_[static_cast<std::size_t>(i)].conv;
        if (nodes_[static_cast<std::size_t>(a)].needs_grad) accumulate(adj, a, conv2d_dx(g, b, cg));
        if (nodes_[static_cast<std::size_t>(b)].needs_grad) accumulate(adj, b, conv2d_dw(g, a, cg));
        break;
      }
      case Op::kConv2dDx:
      case Op::kConv2dDw:
        throw std::runtime_error(
            "conv2d is not second-order differentiable; gradient-of-gradient requires a "
            "dense-path model");
      case Op::kLeaf:
      case Op::kConstant:
        break;
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace nn
}  // namespace poisonlab

#endif  // POISONLAB_GRAPH_HPP_
