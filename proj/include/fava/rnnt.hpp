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

#ifndef FAVA_RNNT_HPP_
#define FAVA_RNNT_HPP_

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fava/autodiff.hpp"
#include "fava/model.hpp"

namespace fava::rnnt {

inline constexpr int kBlank = 0;

struct Vocabulary {
  std::vector<std::string> symbols;  // index 0 is the blank

  int size() const { return static_cast<int>(symbols.size()); }
  int id(const std::string& symbol) const;
  // Space-separated symbols; throws on unknown or blank symbols.
  std::vector<int> encode(const std::string& transcript) const;
  std::string decode(const std::vector<int>& ids) const;

  // Blank plus the given number of single-letter symbols "a", "b", ...
  static Vocabulary letters(int num_symbols = 16);
};

template <typename S>
S log_add(S a, S b) {
  if (a == -std::numeric_limits<S>::infinity()) return b;
  if (b == -std::numeric_limits<S>::infinity()) return a;
  return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
}

// Lattice layout: row t * (U + 1) + u holds the V log-probabilities at
// node (t, u).
template <typename S>
void check_lattice(const Matrix<S>& lattice, Eigen::Index T, const std::vector<int>& labels) {
  if (T < 1) throw Error("label too long");
  const Eigen::Index U1 = static_cast<Eigen::Index>(labels.size()) + 1;
  if (lattice.rows() != T * U1) throw Error("rnnt: lattice rows do not match T x (U + 1)");
  for (int y : labels) {
    if (y == kBlank || y < 0 || y >= lattice.cols()) throw Error("rnnt: invalid label id");
  }
}

template <typename S>
struct RnntResult {
  S loss = 0;
  Matrix<S> grad;  // d loss / d lattice
};

// Forward-backward over the transducer lattice in log space.
template <typename S>
RnntResult<S> rnnt_loss_and_grad(const Matrix<S>& lattice, Eigen::Index T, const std::vector<int>& labels,
                                 bool with_grad = true) {
  check_lattice(lattice, T, labels);
  const Eigen::Index U = static_cast<Eigen::Index>(labels.size());
  const Eigen::Index U1 = U + 1;
  auto lp = [&](Eigen::Index t, Eigen::Index u, int k) { return lattice(t * U1 + u, k); };
  constexpr S kNegInf = -std::numeric_limits<S>::infinity();

  Matrix<S> alpha(T, U1);
  alpha(0, 0) = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index u = 0; u < U1; ++u) {
      if (t == 0 && u == 0) continue;
      S a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + lp(t - 1, u, kBlank);
      if (u > 0) a = log_add(a, alpha(t, u - 1) + lp(t, u - 1, labels[u - 1]));
      alpha(t, u) = a;
    }
  }
  const S log_z = alpha(T - 1, U) + lp(T - 1, U, kBlank);
  RnntResult<S> out;
  out.loss = -log_z;
  if (!with_grad) return out;

  Matrix<S> beta(T, U1);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    for (Eigen::Index u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) {
        beta(t, u) = lp(t, u, kBlank);
        continue;
      }
      S b = kNegInf;
      if (t < T - 1) b = beta(t + 1, u) + lp(t, u, kBlank);
      if (u < U) b = log_add(b, beta(t, u + 1) + lp(t, u, labels[u]));
      beta(t, u) = b;
    }
  }
  out.grad = Matrix<S>::Zero(lattice.rows(), lattice.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index u = 0; u < U1; ++u) {
      const Eigen::Index row = t * U1 + u;
      if (t < T - 1) {
        out.grad(row, kBlank) = -std::exp(alpha(t, u) + lp(t, u, kBlank) + beta(t + 1, u) - log_z);
      } else if (u == U) {
        out.grad(row, kBlank) = -std::exp(alpha(t, u) + lp(t, u, kBlank) - log_z);
      }
      if (u < U) {
        out.grad(row, labels[u]) = -std::exp(alpha(t, u) + lp(t, u, labels[u]) + beta(t, u + 1) - log_z);
      }
    }
  }
  return out;
}

template <typename S>
S rnnt_loss(const Matrix<S>& lattice, Eigen::Index T, const std::vector<int>& labels) {
  return rnnt_loss_and_grad(lattice, T, labels, false).loss;
}

template <typename S>
Matrix<S> rnnt_grad(const Matrix<S>& lattice, Eigen::Index T, const std::vector<int>& labels) {
  return rnnt_loss_and_grad(lattice, T, labels, true).grad;
}

// Loss node over log-softmaxed joiner output.
template <typename S>
ad::Var<S> rnnt_loss(const ad::Var<S>& log_probs, Eigen::Index T, const std::vector<int>& labels) {
  auto r = rnnt_loss_and_grad(log_probs.value(), T, labels, log_probs.graph()->recording());
  return ad::loss_node(log_probs, r.loss, std::move(r.grad));
}

// ---------------------------------------------------------------------------
// Predictor: two-layer LSTM over label embeddings. Row 0 of its output is
// the step taken with an all-zero input from the zero state.

template <typename S>
struct PredictorState {
  std::vector<RowVector<S>> h;
  std::vector<RowVector<S>> c;
};

template <typename S>
PredictorState<S> initial_state(const model::ModelConfig& cfg) {
  PredictorState<S> st;
  st.h.assign(cfg.pred_layers, RowVector<S>::Zero(cfg.pred_hidden));
  st.c.assign(cfg.pred_layers, RowVector<S>::Zero(cfg.pred_hidden));
  return st;
}

template <typename S, typename Derived>
RowVector<S> sigmoid_row(const Eigen::MatrixBase<Derived>& v) {
  return v.unaryExpr([](S z) { return S(1) / (S(1) + std::exp(-z)); });
}

// Advances the state by one label (label < 0 is the start step) and returns
// the top-layer output.
template <typename S>
RowVector<S> predictor_step(const model::ModelConfig& cfg, const ParameterTree<S>& params, PredictorState<S>& st,
                            int label) {
  const Eigen::Index H = cfg.pred_hidden;
  RowVector<S> x;
  if (label < 0) {
    x = RowVector<S>::Zero(cfg.pred_embed);
  } else {
    if (label == kBlank || label >= cfg.vocab_size) throw Error("predictor: invalid label id");
    x = params.value("predictor/embed").row(label);
  }
  for (int l = 0; l < cfg.pred_layers; ++l) {
    const std::string pre = "predictor/lstm" + std::to_string(l);
    RowVector<S> gates = x * params.value(pre + "/w_ih");
    gates += params.value(pre + "/b").row(0);
    gates += st.h[l] * params.value(pre + "/w_hh");
    const RowVector<S> i = sigmoid_row<S>(gates.segment(0, H));
    const RowVector<S> f = sigmoid_row<S>(gates.segment(H, H));
    const RowVector<S> g = gates.segment(2 * H, H).array().tanh();
    const RowVector<S> o = sigmoid_row<S>(gates.segment(3 * H, H));
    st.c[l] = f.cwiseProduct(st.c[l]) + i.cwiseProduct(g);
    st.h[l] = o.cwiseProduct(st.c[l].array().tanh().matrix());
    x = st.h[l];
  }
  return x;
}

// (U + 1) x pred_hidden; row u conditions on the first u labels.
template <typename S>
Matrix<S> predictor_forward(const std::vector<int>& labels, const model::ModelConfig& cfg,
                            const ParameterTree<S>& params) {
  auto st = initial_state<S>(cfg);
  Matrix<S> out(static_cast<Eigen::Index>(labels.size()) + 1, cfg.pred_hidden);
  out.row(0) = predictor_step(cfg, params, st, -1);
  for (size_t u = 0; u < labels.size(); ++u) {
    out.row(static_cast<Eigen::Index>(u) + 1) = predictor_step(cfg, params, st, labels[u]);
  }
  return out;
}

template <typename S>
ad::Var<S> predictor(const model::Context<S>& c, const std::vector<int>& labels) {
  const Eigen::Index H = c.cfg.pred_hidden;
  for (int y : labels) {
    if (y == kBlank || y < 0 || y >= c.cfg.vocab_size) throw Error("predictor: invalid label id");
  }
  ad::Var<S> x = c.g.constant(Matrix<S>::Zero(1, c.cfg.pred_embed));
  if (!labels.empty()) x = ad::concat_rows<S>({x, ad::gather_rows(c.p("predictor/embed"), labels)});
  const Eigen::Index steps = x.rows();
  for (int l = 0; l < c.cfg.pred_layers; ++l) {
    const std::string pre = "predictor/lstm" + std::to_string(l);
    auto xw = ad::add_row(ad::matmul(x, c.p(pre + "/w_ih")), c.p(pre + "/b"));
    auto w_hh = c.p(pre + "/w_hh");
    ad::Var<S> h = c.g.constant(Matrix<S>::Zero(1, H));
    ad::Var<S> cell = c.g.constant(Matrix<S>::Zero(1, H));
    std::vector<ad::Var<S>> outs;
    for (Eigen::Index u = 0; u < steps; ++u) {
      auto gates = ad::add(ad::slice_rows(xw, u, 1), ad::matmul(h, w_hh));
      auto i = ad::sigmoid(ad::slice_cols(gates, 0, H));
      auto f = ad::sigmoid(ad::slice_cols(gates, H, H));
      auto g = ad::tanh(ad::slice_cols(gates, 2 * H, H));
      auto o = ad::sigmoid(ad::slice_cols(gates, 3 * H, H));
      cell = ad::add(ad::mul(f, cell), ad::mul(i, g));
      h = ad::mul(o, ad::tanh(cell));
      outs.push_back(h);
    }
    x = ad::concat_rows(outs);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Joiner: logits = W2 tanh(W1 (enc_proj e + pred_proj p) + b1) + b2.

template <typename S>
RowVector<S> joiner_forward(const RowVector<S>& enc_t, const RowVector<S>& pred_u, const ParameterTree<S>& params) {
  const RowVector<S> z = enc_t * params.value("joiner/enc_proj") + pred_u * params.value("joiner/pred_proj");
  RowVector<S> h = z * params.value("joiner/w1");
  h += params.value("joiner/b1").row(0);
  h = h.array().tanh();
  RowVector<S> logits = h * params.value("joiner/w2");
  logits += params.value("joiner/b2").row(0);
  return logits;
}

// (T * (U + 1)) x V logits, row t * (U + 1) + u.
template <typename S>
ad::Var<S> joiner(const model::Context<S>& c, const ad::Var<S>& enc, const ad::Var<S>& pred) {
  auto z = ad::outer_add_rows(ad::matmul(enc, c.p("joiner/enc_proj")), ad::matmul(pred, c.p("joiner/pred_proj")));
  auto h = ad::tanh(ad::linear(z, c.p("joiner/w1"), c.p("joiner/b1")));
  return ad::linear(h, c.p("joiner/w2"), c.p("joiner/b2"));
}

// Full transducer loss for one utterance given encoder output.
template <typename S>
ad::Var<S> transducer_loss(const model::Context<S>& c, const ad::Var<S>& enc, const std::vector<int>& labels) {
  auto logits = joiner(c, enc, predictor(c, labels));
  return rnnt_loss(ad::log_softmax_rows(logits), enc.rows(), labels);
}

struct DecodeStats {
  int64_t joiner_calls = 0;
};

// Per frame: take the argmax (lowest index on ties), emit and advance the
// predictor while it is non-blank, at most max_symbols_per_frame times.
template <typename S>
std::vector<int> greedy_decode(const Matrix<S>& encoded, const model::ModelConfig& cfg, const ParameterTree<S>& params,
                               int max_symbols_per_frame = 10, DecodeStats* stats = nullptr) {
  std::vector<int> hyp;
  if (encoded.rows() == 0) return hyp;
  const Matrix<S> enc_proj = encoded * params.value("joiner/enc_proj");
  const Matrix<S>& pred_proj = params.value("joiner/pred_proj");
  const Matrix<S>& w1 = params.value("joiner/w1");
  const Matrix<S>& w2 = params.value("joiner/w2");
  const RowVector<S> b1 = params.value("joiner/b1").row(0);
  const RowVector<S> b2 = params.value("joiner/b2").row(0);
  auto st = initial_state<S>(cfg);
  RowVector<S> pred = predictor_step(cfg, params, st, -1) * pred_proj;
  for (Eigen::Index t = 0; t < encoded.rows(); ++t) {
    for (int n = 0; n < max_symbols_per_frame; ++n) {
      RowVector<S> h = (enc_proj.row(t) + pred) * w1 + b1;
      h = h.array().tanh();
      const RowVector<S> logits = h * w2 + b2;
      if (stats) ++stats->joiner_calls;
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < logits.size(); ++k) {
        if (logits[k] > logits[best]) best = k;
      }
      if (best == kBlank) break;
      hyp.push_back(static_cast<int>(best));
      pred = predictor_step(cfg, params, st, static_cast<int>(best)) * pred_proj;
    }
  }
  return hyp;
}

}  // namespace fava::rnnt

#endif  // FAVA_RNNT_HPP_
