// Copyright 2026 The FAVA-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FAVA_AUTODIFF_HPP_
#define FAVA_AUTODIFF_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fava/common.hpp"

// Tape-based reverse-mode differentiation over dense row-major matrices.
// Every tensor on the tape is 2-D; higher-rank activations use a documented
// row layout, e.g. rows ordered (t, h, w) and one column per channel.
namespace fava::ad {

template <typename Scalar>
class Graph;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* g, int id) : graph_(g), id_(id) {}

  const Matrix<Scalar>& value() const { return graph_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph<Scalar>* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  // Called with (d loss / d output, output value).
  using Backward = std::function<void(const Mat&, const Mat&)>;

  // With record = false nothing is kept for a backward pass.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<Scalar> constant(Mat value) { return push(std::move(value), false); }

  // A leaf whose gradient is wanted, e.g. an input under test.
  Var<Scalar> input(Mat value) { return push(std::move(value), record_); }

  // Parameters are deduplicated by name so that reuse accumulates.
  Var<Scalar> param(const std::string& name, const Mat& value) {
    auto it = params_.find(name);
    if (it != params_.end()) return Var<Scalar>(this, it->second);
    Var<Scalar> v = push(value, record_);
    params_.emplace(name, v.id());
    return v;
  }

  // A parameter that must not receive gradient (frozen tensors).
  Var<Scalar> frozen(const std::string& name, const Mat& value) {
    auto it = params_.find(name);
    if (it != params_.end()) return Var<Scalar>(this, it->second);
    return push(value, false);
  }

  template <typename Parents>
  Var<Scalar> op_impl(Mat value, const Parents& parents, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    }
    Var<Scalar> v = push(std::move(value), needs);
    if (needs) nodes_[v.id()].backward = std::move(backward);
    return v;
  }
  Var<Scalar> op(Mat value, std::initializer_list<Var<Scalar>> parents, Backward backward) {
    return op_impl(std::move(value), parents, std::move(backward));
  }
  Var<Scalar> op(Mat value, const std::vector<Var<Scalar>>& parents, Backward backward) {
    return op_impl(std::move(value), parents, std::move(backward));
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Zero-initialized gradient buffer for scatter-style accumulation, or
  // nullptr when the node does not need a gradient.
  Mat* grad_buffer(int id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  void backward(const Var<Scalar>& loss) {
    if (!record_) throw Error("backward on a graph built without recording");
    if (loss.rows() != 1 || loss.cols() != 1) throw Error("backward: loss must be a scalar");
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Mat::Constant(1, 1, Scalar(1));
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(n.grad, n.value);
    }
  }

  // Gradient of a node after backward(); zeros if none reached it.
  Mat grad(const Var<Scalar>& v) const { return grad(v.id()); }
  Mat grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::map<std::string, Mat> param_grads() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, id] : params_) out.emplace(name, grad(id));
    return out;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, nullptr});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
};

// ---------------------------------------------------------------------------
// Linear algebra and elementwise ops.

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.cols() != b.rows()) throw Error("matmul: inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  return g->op(a.value() * b.value(), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    if (g->requires_grad(ia)) g->accumulate(ia, gr * g->value(ib).transpose());
    if (g->requires_grad(ib)) g->accumulate(ib, g->value(ia).transpose() * gr);
  });
}

// a * b^T
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  return g->op(a.value() * b.value().transpose(), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    if (g->requires_grad(ia)) g->accumulate(ia, gr * g->value(ib));
    if (g->requires_grad(ib)) g->accumulate(ib, gr.transpose() * g->value(ia));
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("add: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return g->op(a.value() + b.value(), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    g->accumulate(ia, gr);
    g->accumulate(ib, gr);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("sub: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return g->op(a.value() - b.value(), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    g->accumulate(ia, gr);
    g->accumulate(ib, -gr);
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("mul: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return g->op(a.value().cwiseProduct(b.value()), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    if (g->requires_grad(ia)) g->accumulate(ia, gr.cwiseProduct(g->value(ib)));
    if (g->requires_grad(ib)) g->accumulate(ib, gr.cwiseProduct(g->value(ia)));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(a.value() * s, {a}, [g, ia, s](const Matrix<S>& gr, const Matrix<S>&) { g->accumulate(ia, gr * s); });
}

// a + b broadcast over rows; b is 1 x cols.
template <typename S>
Var<S> add_row(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (b.rows() != 1 || b.cols() != a.cols()) throw Error("add_row: bias shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix<S> y = a.value();
  y.rowwise() += b.value().row(0);
  return g->op(std::move(y), {a, b}, [g, ia, ib](const Matrix<S>& gr, const Matrix<S>&) {
    g->accumulate(ia, gr);
    if (g->requires_grad(ib)) g->accumulate(ib, gr.colwise().sum());
  });
}

// x W + b
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return add_row(matmul(x, w), b);
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(a.value().cwiseMax(S(0)), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>& y) {
    g->accumulate(ia, (y.array() > S(0)).select(gr, S(0)));
  });
}

template <typename S>
Matrix<S> sigmoid_value(const Matrix<S>& x) {
  return x.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(sigmoid_value(a.value()), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>& y) {
    g->accumulate(ia, (gr.array() * y.array() * (S(1) - y.array())).matrix());
  });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(a.value().array().tanh().matrix(), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>& y) {
    g->accumulate(ia, (gr.array() * (S(1) - y.array().square())).matrix());
  });
}

// x * sigmoid(x)
template <typename S>
Var<S> swish(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  const Matrix<S> sig = sigmoid_value(a.value());
  return g->op(a.value().cwiseProduct(sig), {a}, [g, ia, sig](const Matrix<S>& gr, const Matrix<S>&) {
    const auto& x = g->value(ia).array();
    g->accumulate(ia, (gr.array() * (sig.array() * (S(1) + x * (S(1) - sig.array())))).matrix());
  });
}

// First half of the columns gated by the sigmoid of the second half.
template <typename S>
Var<S> glu(const Var<S>& a) {
  auto* g = a.graph();
  if (a.cols() % 2 != 0) throw Error("glu: odd number of columns");
  const Eigen::Index n = a.cols() / 2;
  const int ia = a.id();
  const Matrix<S> gate = sigmoid_value<S>(a.value().rightCols(n));
  Matrix<S> y = a.value().leftCols(n).cwiseProduct(gate);
  return g->op(std::move(y), {a}, [g, ia, n, gate](const Matrix<S>& gr, const Matrix<S>&) {
    const auto& x = g->value(ia);
    Matrix<S> d(x.rows(), 2 * n);
    d.leftCols(n) = gr.cwiseProduct(gate);
    d.rightCols(n) = (gr.array() * x.leftCols(n).array() * gate.array() * (S(1) - gate.array())).matrix();
    g->accumulate(ia, d);
  });
}

// Per-row normalization with learned gain and bias (1 x cols each).
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  auto* g = x.graph();
  const Eigen::Index n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw Error("layer_norm: parameter shape mismatch");
  const auto& xv = x.value();
  Matrix<S> xhat(xv.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const S mean = xv.row(r).mean();
    const S var = (xv.row(r).array() - mean).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  Matrix<S> y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return g->op(std::move(y), {x, gamma, beta}, [g, ix, ig, ib, xhat, inv_std, n](const Matrix<S>& gr, const Matrix<S>&) {
    if (g->requires_grad(ig)) g->accumulate(ig, gr.cwiseProduct(xhat).colwise().sum());
    if (g->requires_grad(ib)) g->accumulate(ib, gr.colwise().sum());
    if (g->requires_grad(ix)) {
      const Matrix<S> dxhat = gr.array().rowwise() * g->value(ig).row(0).array();
      Matrix<S> dx(dxhat.rows(), n);
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const S m1 = dxhat.row(r).mean();
        const S m2 = dxhat.row(r).dot(xhat.row(r)) / S(n);
        dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std[r];
      }
      g->accumulate(ix, dx);
    }
  });
}

// Row softmax restricted to the first `valid_cols` columns; the remaining
// columns get exactly zero probability.
template <typename S>
Var<S> softmax_rows(const Var<S>& a, Eigen::Index valid_cols) {
  auto* g = a.graph();
  const auto& x = a.value();
  valid_cols = std::clamp<Eigen::Index>(valid_cols, 1, x.cols());
  Matrix<S> y = Matrix<S>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r).head(valid_cols);
    const S mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    y.row(r).head(valid_cols) = e / e.sum();
  }
  const int ia = a.id();
  return g->op(std::move(y), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>& p) {
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dots = gr.cwiseProduct(p).rowwise().sum();
    g->accumulate(ia, (p.array() * (gr.colwise() - dots).array()).matrix());
  });
}

template <typename S>
Matrix<S> log_softmax_value(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    const S lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

template <typename S>
Var<S> log_softmax_rows(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(log_softmax_value(a.value()), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>& y) {
    const Eigen::Matrix<S, Eigen::Dynamic, 1> sums = gr.rowwise().sum();
    g->accumulate(ia, gr - (y.array().exp().colwise() * sums.array()).matrix());
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  auto* g = a.graph();
  const int ia = a.id();
  Matrix<S> y(1, 1);
  y(0, 0) = a.value().sum();
  return g->op(std::move(y), {a}, [g, ia](const Matrix<S>& gr, const Matrix<S>&) {
    const auto& x = g->value(ia);
    g->accumulate(ia, Matrix<S>::Constant(x.rows(), x.cols(), gr(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index first, Eigen::Index count) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(a.value().middleCols(first, count), {a}, [g, ia, first, count](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* d = g->grad_buffer(ia)) d->middleCols(first, count) += gr;
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index first, Eigen::Index count) {
  auto* g = a.graph();
  const int ia = a.id();
  return g->op(a.value().middleRows(first, count), {a}, [g, ia, first, count](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* d = g->grad_buffer(ia)) d->middleRows(first, count) += gr;
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
  auto* g = parts.front().graph();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw Error("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<S> y(parts.front().rows(), cols);
  std::vector<std::pair<int, Eigen::Index>> where;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    where.emplace_back(p.id(), c);
    c += p.cols();
  }
  return g->op(std::move(y), parts, [g, where](const Matrix<S>& gr, const Matrix<S>&) {
    for (const auto& [id, first] : where) {
      if (g->requires_grad(id)) g->accumulate(id, gr.middleCols(first, g->value(id).cols()));
    }
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw Error("concat_rows: nothing to concatenate");
  auto* g = parts.front().graph();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw Error("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<S> y(rows, parts.front().cols());
  std::vector<std::pair<int, Eigen::Index>> where;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    where.emplace_back(p.id(), r);
    r += p.rows();
  }
  return g->op(std::move(y), parts, [g, where](const Matrix<S>& gr, const Matrix<S>&) {
    for (const auto& [id, first] : where) {
      if (g->requires_grad(id)) g->accumulate(id, gr.middleRows(first, g->value(id).rows()));
    }
  });
}

// Row-major reinterpretation.
template <typename S>
Var<S> reshape(const Var<S>& a, Eigen::Index rows, Eigen::Index cols) {
  auto* g = a.graph();
  if (rows * cols != a.value().size()) throw Error("reshape: size mismatch");
  const int ia = a.id();
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  Matrix<S> y = Eigen::Map<const Matrix<S>>(a.value().data(), rows, cols);
  return g->op(std::move(y), {a}, [g, ia, r0, c0](const Matrix<S>& gr, const Matrix<S>&) {
    g->accumulate(ia, Eigen::Map<const Matrix<S>>(gr.data(), r0, c0));
  });
}

// Row i of the output is table row ids[i].
template <typename S>
Var<S> gather_rows(const Var<S>& table, const std::vector<int>& ids) {
  auto* g = table.graph();
  const auto& t = table.value();
  Matrix<S> y(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) throw Error("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  const int it = table.id();
  return g->op(std::move(y), {table}, [g, it, ids](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* d = g->grad_buffer(it)) {
      for (size_t i = 0; i < ids.size(); ++i) d->row(ids[i]) += gr.row(static_cast<Eigen::Index>(i));
    }
  });
}

// Zeroes rows at or beyond `valid`.
template <typename S>
Var<S> mask_rows(const Var<S>& a, Eigen::Index valid) {
  if (valid >= a.rows()) return a;
  auto* g = a.graph();
  const int ia = a.id();
  Matrix<S> y = a.value();
  y.bottomRows(y.rows() - valid).setZero();
  return g->op(std::move(y), {a}, [g, ia, valid](const Matrix<S>& gr, const Matrix<S>&) {
    Matrix<S> d = gr;
    d.bottomRows(d.rows() - valid).setZero();
    g->accumulate(ia, d);
  });
}

// Output row (t * U + u) = a_t + b_u.
template <typename S>
Var<S> outer_add_rows(const Var<S>& a, const Var<S>& b) {
  auto* g = a.graph();
  if (a.cols() != b.cols()) throw Error("outer_add_rows: column mismatch");
  const Eigen::Index T = a.rows(), U = b.rows();
  Matrix<S> y(T * U, a.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    y.middleRows(t * U, U) = b.value().rowwise() + a.value().row(t);
  }
  const int ia = a.id(), ib = b.id();
  return g->op(std::move(y), {a, b}, [g, ia, ib, T, U](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* da = g->grad_buffer(ia)) {
      for (Eigen::Index t = 0; t < T; ++t) da->row(t) += gr.middleRows(t * U, U).colwise().sum();
    }
    if (Matrix<S>* db = g->grad_buffer(ib)) {
      for (Eigen::Index t = 0; t < T; ++t) *db += gr.middleRows(t * U, U);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions.

// "Same" padding split the usual way: the extra element goes after.
struct SamePad {
  Eigen::Index out = 0;
  Eigen::Index before = 0;
};
inline SamePad same_pad(Eigen::Index in, Eigen::Index kernel, Eigen::Index stride) {
  SamePad p;
  p.out = (in + stride - 1) / stride;
  const Eigen::Index total = std::max<Eigen::Index>((p.out - 1) * stride + kernel - in, 0);
  p.before = total / 2;
  return p;
}

// Geometry of a batch of 2-D maps stored as rows (n, a, b) x channels.
struct Conv2dShape {
  Eigen::Index batch = 1;
  Eigen::Index height = 0;  // "a" axis, e.g. time
  Eigen::Index width = 0;   // "b" axis, e.g. frequency
  Eigen::Index kernel_h = 3, kernel_w = 3;
  Eigen::Index stride_h = 1, stride_w = 1;

  Eigen::Index out_h() const { return same_pad(height, kernel_h, stride_h).out; }
  Eigen::Index out_w() const { return same_pad(width, kernel_w, stride_w).out; }
};

// Weight layout: (kernel_h * kernel_w * in_channels) x out_channels with row
// index (kh * kernel_w + kw) * in_channels + c; bias 1 x out_channels.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Conv2dShape& s, const Var<S>& w, const Var<S>& b) {
  auto* g = x.graph();
  const Eigen::Index cin = x.cols();
  if (x.rows() != s.batch * s.height * s.width) throw Error("conv2d: input rows do not match geometry");
  if (w.rows() != s.kernel_h * s.kernel_w * cin) throw Error("conv2d: weight shape mismatch");
  const SamePad ph = same_pad(s.height, s.kernel_h, s.stride_h);
  const SamePad pw = same_pad(s.width, s.kernel_w, s.stride_w);
  const Eigen::Index out_rows = s.batch * ph.out * pw.out;
  const Eigen::Index patch = s.kernel_h * s.kernel_w * cin;
  // Source row for every (output row, kernel tap); -1 for padding.
  std::vector<Eigen::Index> src(static_cast<size_t>(out_rows * s.kernel_h * s.kernel_w), -1);
  const auto& xv = x.value();
  Matrix<S> cols = Matrix<S>::Zero(out_rows, patch);
  for (Eigen::Index n = 0; n < s.batch; ++n) {
    for (Eigen::Index oh = 0; oh < ph.out; ++oh) {
      for (Eigen::Index ow = 0; ow < pw.out; ++ow) {
        const Eigen::Index orow = (n * ph.out + oh) * pw.out + ow;
        for (Eigen::Index kh = 0; kh < s.kernel_h; ++kh) {
          const Eigen::Index ih = oh * s.stride_h + kh - ph.before;
          if (ih < 0 || ih >= s.height) continue;
          for (Eigen::Index kw = 0; kw < s.kernel_w; ++kw) {
            const Eigen::Index iw = ow * s.stride_w + kw - pw.before;
            if (iw < 0 || iw >= s.width) continue;
            const Eigen::Index irow = (n * s.height + ih) * s.width + iw;
            const Eigen::Index tap = kh * s.kernel_w + kw;
            src[static_cast<size_t>(orow * s.kernel_h * s.kernel_w + tap)] = irow;
            cols.block(orow, tap * cin, 1, cin) = xv.row(irow);
          }
        }
      }
    }
  }
  Matrix<S> y = cols * w.value();
  y.rowwise() += b.value().row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  const Eigen::Index taps = s.kernel_h * s.kernel_w;
  return g->op(std::move(y), {x, w, b},
               [g, ix, iw, ib, cols = std::move(cols), src = std::move(src), taps, cin](const Matrix<S>& gr,
                                                                                        const Matrix<S>&) {
                 if (g->requires_grad(iw)) g->accumulate(iw, cols.transpose() * gr);
                 if (g->requires_grad(ib)) g->accumulate(ib, gr.colwise().sum());
                 if (Matrix<S>* dx = g->grad_buffer(ix)) {
                   const Matrix<S> dcols = gr * g->value(iw).transpose();
                   for (Eigen::Index orow = 0; orow < dcols.rows(); ++orow) {
                     for (Eigen::Index tap = 0; tap < taps; ++tap) {
                       const Eigen::Index irow = src[static_cast<size_t>(orow * taps + tap)];
                       if (irow >= 0) dx->row(irow) += dcols.block(orow, tap * cin, 1, cin);
                     }
                   }
                 }
               });
}

// Per-channel 1-D convolution along rows with same padding.
// w: kernel x channels, b: 1 x channels.
template <typename S>
Var<S> depthwise_conv1d(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  auto* g = x.graph();
  const Eigen::Index T = x.rows(), C = x.cols(), K = w.rows();
  if (w.cols() != C || b.cols() != C) throw Error("depthwise_conv1d: parameter shape mismatch");
  const Eigen::Index before = same_pad(T, K, 1).before;
  Matrix<S> y(T, C);
  y.rowwise() = b.value().row(0);
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const Eigen::Index src = t + k - before;
      if (src < 0 || src >= T) continue;
      y.row(t) += xv.row(src).cwiseProduct(wv.row(k));
    }
  }
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return g->op(std::move(y), {x, w, b}, [g, ix, iw, ib, T, K, before](const Matrix<S>& gr, const Matrix<S>&) {
    const auto& xv = g->value(ix);
    const auto& wv = g->value(iw);
    Matrix<S>* dx = g->grad_buffer(ix);
    Matrix<S>* dw = g->grad_buffer(iw);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index k = 0; k < K; ++k) {
        const Eigen::Index src = t + k - before;
        if (src < 0 || src >= T) continue;
        if (dx) dx->row(src) += gr.row(t).cwiseProduct(wv.row(k));
        if (dw) dw->row(k) += gr.row(t).cwiseProduct(xv.row(src));
      }
    }
    if (g->requires_grad(ib)) g->accumulate(ib, gr.colwise().sum());
  });
}

// Rows (n, s) x C averaged over s: output n x C.
template <typename S>
Var<S> mean_pool_groups(const Var<S>& x, Eigen::Index groups) {
  auto* g = x.graph();
  if (groups <= 0 || x.rows() % groups != 0) throw Error("mean_pool_groups: rows not divisible");
  const Eigen::Index per = x.rows() / groups;
  Matrix<S> y(groups, x.cols());
  for (Eigen::Index n = 0; n < groups; ++n) y.row(n) = x.value().middleRows(n * per, per).colwise().mean();
  const int ix = x.id();
  return g->op(std::move(y), {x}, [g, ix, groups, per](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* dx = g->grad_buffer(ix)) {
      for (Eigen::Index n = 0; n < groups; ++n) {
        dx->middleRows(n * per, per).rowwise() += gr.row(n) / S(per);
      }
    }
  });
}

// T x T matrix with entry (i, j) = table[clamp(j - i, -R, R) + R], where the
// table is 1 x (2R + 1).
template <typename S>
Var<S> relative_bias(const Var<S>& table, Eigen::Index T) {
  auto* g = table.graph();
  const Eigen::Index R = (table.cols() - 1) / 2;
  Matrix<S> y(T, T);
  for (Eigen::Index i = 0; i < T; ++i) {
    for (Eigen::Index j = 0; j < T; ++j) y(i, j) = table.value()(0, std::clamp(j - i, -R, R) + R);
  }
  const int it = table.id();
  return g->op(std::move(y), {table}, [g, it, T, R](const Matrix<S>& gr, const Matrix<S>&) {
    if (Matrix<S>* d = g->grad_buffer(it)) {
      for (Eigen::Index i = 0; i < T; ++i) {
        for (Eigen::Index j = 0; j < T; ++j) (*d)(0, std::clamp(j - i, -R, R) + R) += gr(i, j);
      }
    }
  });
}

// Scalar loss node whose gradient w.r.t. `input` was computed alongside
// the value.
template <typename S>
Var<S> loss_node(const Var<S>& input, S value, Matrix<S> grad) {
  auto* g = input.graph();
  const int ii = input.id();
  Matrix<S> y(1, 1);
  y(0, 0) = value;
  return g->op(std::move(y), {input}, [g, ii, grad = std::move(grad)](const Matrix<S>& gr, const Matrix<S>&) {
    g->accumulate(ii, grad * gr(0, 0));
  });
}

}  // namespace fava::ad

#endif  // FAVA_AUTODIFF_HPP_
