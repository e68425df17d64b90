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

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "fava/rnnt.hpp"

namespace fava::rnnt {
namespace {

using model::ModelConfig;

TEST(RnntLoss, MatchesBruteForceEnumeration) {
  Rng rng(1, "rnnt/brute");
  for (int T = 1; T <= 4; ++T) {
    for (int U = 0; U <= 3; ++U) {
      for (int rep = 0; rep < 100; ++rep) {
        std::vector<int> labels;
        for (int u = 0; u < U; ++u) labels.push_back(1 + static_cast<int>(rng.uniform_int(4)));
        const MatrixD lat = oracle::random_lattice(T * (U + 1), 5, rng);
        long orderings = 0;
        const double want = oracle::brute_force_rnnt(lat, T, labels, &orderings);
        const double got = rnnt_loss(lat, T, labels);
        ASSERT_NEAR(got, want, 1e-6 * std::abs(want)) << "T=" << T << " U=" << U;
        ASSERT_EQ(orderings, oracle::binomial(T + U, U));
        const double p = std::exp(-got);
        ASSERT_GT(p, 0.0);
        ASSERT_LE(p, 1.0 + 1e-12);
      }
    }
  }
}

TEST(RnntLoss, HandCases) {
  Rng rng(2);
  MatrixD one = oracle::random_lattice(1, 5, rng);
  EXPECT_DOUBLE_EQ(rnnt_loss(one, 1, {}), -one(0, 0));

  // T=2, U=1: the three monotonic paths written out.
  MatrixD lat = oracle::random_lattice(4, 5, rng);
  const int y = 3;
  auto p = [&](int t, int u, int k) { return std::exp(lat(t * 2 + u, k)); };
  const double total = p(0, 0, y) * p(0, 1, 0) * p(1, 1, 0) + p(0, 0, 0) * p(1, 0, y) * p(1, 1, 0);
  EXPECT_NEAR(rnnt_loss(lat, 2, {y}), -std::log(total), 1e-12);

  MatrixD certain = MatrixD::Constant(3, 5, -1e9);
  certain.col(0).setZero();
  EXPECT_NEAR(rnnt_loss(certain, 3, {}), 0.0, 1e-12);
}

TEST(RnntLoss, Errors) {
  MatrixD lat = MatrixD::Zero(4, 5);
  EXPECT_THROW(rnnt_loss(lat, 0, {}), Error);
  EXPECT_THROW(rnnt_loss(lat, 2, {1, 2}), Error);
  EXPECT_THROW(rnnt_loss(lat, 2, {0}), Error);
  EXPECT_THROW(rnnt_loss(lat, 2, {5}), Error);
  try {
    rnnt_loss(lat, 0, {});
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "label too long");
  }
}

TEST(RnntLoss, IgnoresStructurallyExcludedEntries) {
  Rng rng(3);
  const std::vector<int> labels = {2, 4};
  const int T = 3, U1 = 3;
  const MatrixD lat = oracle::random_lattice(T * U1, 6, rng);
  MatrixD other = lat;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u < U1; ++u) {
      for (int k = 1; k < 6; ++k) {
        const bool used = u < 2 && k == labels[u];
        if (!used) other(t * U1 + u, k) = rng.normal();
      }
    }
  }
  // Blanks out of the last frame other than the terminal one are never taken.
  other(2 * U1 + 0, 0) = rng.normal();
  other(2 * U1 + 1, 0) = rng.normal();
  EXPECT_EQ(rnnt_loss(lat, T, labels), rnnt_loss(other, T, labels));
}

TEST(RnntGrad, MatchesFiniteDifferences) {
  Rng rng(4, "rnnt/fd");
  for (int T = 1; T <= 4; ++T) {
    for (int U = 0; U <= 3; ++U) {
      std::vector<int> labels;
      for (int u = 0; u < U; ++u) labels.push_back(1 + static_cast<int>(rng.uniform_int(4)));
      MatrixD lat = oracle::random_lattice(T * (U + 1), 5, rng);
      const MatrixD g = rnnt_grad(lat, T, labels);
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < lat.size(); ++i) {
        const double x = lat.data()[i];
        lat.data()[i] = x + h;
        const double fp = rnnt_loss(lat, T, labels);
        lat.data()[i] = x - h;
        const double fm = rnnt_loss(lat, T, labels);
        lat.data()[i] = x;
        const double num = (fp - fm) / (2 * h);
        const double diff = std::abs(num - g.data()[i]);
        ASSERT_TRUE(diff <= 1e-5 * std::max(std::abs(num), std::abs(g.data()[i])) || diff <= 1e-9)
            << "T=" << T << " U=" << U << " i=" << i << " analytic " << g.data()[i] << " numeric " << num;
      }
    }
  }
}

TEST(RnntGrad, OccupancyConservation) {
  Rng rng(5);
  for (int T = 1; T <= 4; ++T) {
    for (int U = 0; U <= 3; ++U) {
      std::vector<int> labels(U, 1);
      for (int u = 0; u < U; ++u) labels[u] = 1 + static_cast<int>(rng.uniform_int(4));
      const MatrixD g = rnnt_grad(oracle::random_lattice(T * (U + 1), 5, rng), T, labels);
      EXPECT_NEAR(-g.sum(), T + U, 1e-9);
      EXPECT_LE(g.maxCoeff(), 0.0);
    }
  }
}

TEST(RnntGrad, StructuralZeros) {
  Rng rng(6);
  const std::vector<int> labels = {1, 2};
  const MatrixD g = rnnt_grad(oracle::random_lattice(3 * 3, 5, rng), 3, labels);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(g(t * 3 + 0, 2), 0.0);  // label 2 is never emitted from u = 0
    for (int k : {3, 4}) {
      for (int u = 0; u < 3; ++u) EXPECT_EQ(g(t * 3 + u, k), 0.0);
    }
  }
}

TEST(RnntLoss, GraphNodeBackward) {
  Rng rng(7);
  const MatrixD lat = oracle::random_lattice(6, 5, rng);
  ad::Graph<double> g;
  auto x = g.constant(lat);
  auto loss = rnnt_loss(x, 3, {4});
  EXPECT_DOUBLE_EQ(loss.value()(0, 0), rnnt_loss(lat, 3, {4}));
}

class PredictorTest : public ::testing::Test {
 protected:
  ModelConfig cfg = ModelConfig::desk();
  ParameterTree<float> params = model::init_params(cfg, {model::kPredictor, model::kJoiner}, 9);
};

TEST_F(PredictorTest, Shapes) {
  EXPECT_EQ(predictor_forward({}, cfg, params).rows(), 1);
  const auto out = predictor_forward({1, 2, 3}, cfg, params);
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), cfg.pred_hidden);
  EXPECT_TRUE(out.allFinite());
  EXPECT_THROW(predictor_forward({0}, cfg, params), Error);
  EXPECT_THROW(predictor_forward({17}, cfg, params), Error);
}

TEST_F(PredictorTest, IncrementalEqualsBatch) {
  const std::vector<int> labels = {3, 1, 16, 7, 7};
  const MatrixF whole = predictor_forward(labels, cfg, params);
  auto st = initial_state<float>(cfg);
  EXPECT_TRUE(predictor_step(cfg, params, st, -1) == whole.row(0));
  for (size_t u = 0; u < labels.size(); ++u) {
    EXPECT_TRUE(predictor_step(cfg, params, st, labels[u]) == whole.row(static_cast<Eigen::Index>(u) + 1)) << u;
  }
  ad::Graph<float> g(false);
  model::Context<float> c{g, cfg, params};
  EXPECT_TRUE(predictor(c, labels).value() == whole);
}

TEST_F(PredictorTest, PrefixRowsDoNotSeeTheFuture) {
  const MatrixF a = predictor_forward({3, 1, 2}, cfg, params);
  const MatrixF b = predictor_forward({3, 1, 9}, cfg, params);
  EXPECT_TRUE(a.topRows(3) == b.topRows(3));
  EXPECT_FALSE(a.row(3) == b.row(3));
}

TEST_F(PredictorTest, JoinerZeroWeightsGiveZeroLogits) {
  auto zero = params;
  for (auto& [name, t] : zero.tensors()) {
    if (root_of(name) == model::kJoiner) t.value.setZero();
  }
  Rng rng(10);
  const RowVector<float> e = RowVector<float>::Random(cfg.d_model);
  const RowVector<float> p = RowVector<float>::Random(cfg.pred_hidden);
  const auto logits = joiner_forward(e, p, zero);
  EXPECT_EQ(logits.size(), cfg.vocab_size);
  EXPECT_TRUE(logits.isZero());
}

TEST_F(PredictorTest, JoinerSwapSymmetry) {
  ASSERT_EQ(cfg.d_model, cfg.pred_hidden);
  auto swapped = params;
  std::swap(swapped.at("joiner/enc_proj").value, swapped.at("joiner/pred_proj").value);
  const RowVector<float> e = RowVector<float>::Random(cfg.d_model);
  const RowVector<float> p = RowVector<float>::Random(cfg.pred_hidden);
  EXPECT_TRUE(joiner_forward(e, p, params).isApprox(joiner_forward(p, e, swapped), 1e-6f));
}

TEST_F(PredictorTest, JoinerGraphMatchesDirect) {
  Rng rng(11);
  const MatrixF enc = fixture::random_features(3, cfg.d_model, rng);
  const std::vector<int> labels = {2, 5};
  ad::Graph<float> g(false);
  model::Context<float> c{g, cfg, params};
  const MatrixF pred = predictor_forward(labels, cfg, params);
  const MatrixF lattice = joiner(c, g.constant(enc), g.constant(pred)).value();
  ASSERT_EQ(lattice.rows(), 9);
  for (int t = 0; t < 3; ++t) {
    for (int u = 0; u < 3; ++u) {
      const RowVector<float> want = joiner_forward<float>(enc.row(t), pred.row(u), params);
      EXPECT_TRUE(lattice.row(t * 3 + u).isApprox(want, 1e-5f));
    }
  }
}

// Joiner that only listens to encoder dimension 0: +1 votes for "a",
// anything else leaves the blank bias on top.
ParameterTree<float> forcing_params(const ModelConfig& cfg, ParameterTree<float> p) {
  for (auto& [name, t] : p.tensors()) {
    if (root_of(name) == model::kJoiner) t.value.setZero();
  }
  p.at("joiner/enc_proj").value(0, 0) = 1;
  p.at("joiner/w1").value(0, 0) = 5;
  p.at("joiner/w2").value(0, 1) = 10;
  p.at("joiner/b2").value(0, 0) = 1;
  (void)cfg;
  return p;
}

TEST_F(PredictorTest, GreedyDecodeConstructedFixture) {
  const auto p = forcing_params(cfg, params);
  MatrixF enc = MatrixF::Zero(3, cfg.d_model);
  enc(0, 0) = 1;
  DecodeStats stats;
  EXPECT_EQ(greedy_decode(enc, cfg, p, 1, &stats), std::vector<int>{1});
  EXPECT_EQ(stats.joiner_calls, 3);
  EXPECT_TRUE(greedy_decode(MatrixF(MatrixF::Zero(3, cfg.d_model)), cfg, p).empty());
  EXPECT_TRUE(greedy_decode(MatrixF(0, cfg.d_model), cfg, p).empty());
}

TEST_F(PredictorTest, GreedyDecodeEmissionCap) {
  const auto p = forcing_params(cfg, params);
  MatrixF loud = MatrixF::Zero(4, cfg.d_model);
  loud.col(0).setConstant(1);
  DecodeStats stats;
  const auto hyp = greedy_decode(loud, cfg, p, 10, &stats);
  EXPECT_EQ(hyp.size(), 40u);
  EXPECT_EQ(stats.joiner_calls, 40);
}

TEST_F(PredictorTest, GreedyDecodeContract) {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const MatrixF enc = fixture::random_features(6, cfg.d_model, rng) * 3.0f;
    DecodeStats stats;
    const auto hyp = greedy_decode(enc, cfg, params, 10, &stats);
    EXPECT_LE(stats.joiner_calls, 60);
    for (int y : hyp) {
      EXPECT_GT(y, kBlank);
      EXPECT_LT(y, cfg.vocab_size);
    }
  }
}

TEST(Vocabulary, LettersRoundTrip) {
  const auto v = Vocabulary::letters();
  EXPECT_EQ(v.size(), 17);
  EXPECT_EQ(v.id("a"), 1);
  EXPECT_EQ(v.id("p"), 16);
  EXPECT_EQ(v.encode("c a b"), (std::vector<int>{3, 1, 2}));
  EXPECT_EQ(v.decode({3, 1, 2}), "c a b");
  EXPECT_EQ(v.decode({}), "");
  EXPECT_THROW(v.id("<blank>"), Error);
  EXPECT_THROW(v.encode("a z"), Error);
  EXPECT_THROW(v.decode({0}), Error);
  EXPECT_THROW(Vocabulary::letters(0), Error);
}

}  // namespace
}  // namespace fava::rnnt
