#include "higen/objectives.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "higen/gradcheck.hpp"
#include "oracles.hpp"

using namespace higen;

namespace {

DistributionTrace trace_from_logits(const nn::Matrix& logits,
                                    const std::vector<int>& gold,
                                    const std::vector<char>& flags) {
  DistributionTrace t;
  t.logits = logits;
  t.probs = nn::softmax_rows(logits);
  t.gold = gold;
  t.node_flag = flags;
  return t;
}

DistributionTrace random_trace(Rng& rng, long k, long v) {
  nn::Matrix logits(k, v);
  for (long c = 0; c < v; ++c)
    for (long r = 0; r < k; ++r) logits(r, c) = rng.normal(0.0, 1.5);
  std::vector<int> gold(k);
  std::vector<char> flags(k);
  for (long r = 0; r < k; ++r) {
    gold[r] = static_cast<int>(rng.uniform_int(v));
    flags[r] = rng.bernoulli(0.5) ? 1 : 0;
  }
  return trace_from_logits(logits, gold, flags);
}

// --- language-modeling loss -------------------------------------------------

TEST(LmLoss, ZeroWhenAllMassOnGold) {
  nn::Matrix logits(1, 4);
  logits << 200, 0, 0, 0;
  DistributionTrace t = trace_from_logits(logits, {0}, {1});
  EXPECT_NEAR(lm_loss(t).value, 0.0, 1e-12);
}

TEST(LmLoss, UniformIsLogVocab) {
  nn::Matrix logits = nn::Matrix::Zero(1, 10);
  DistributionTrace t = trace_from_logits(logits, {3}, {0});
  EXPECT_NEAR(lm_loss(t).value, std::log(10.0), 1e-12);
}

TEST(LmLoss, MatchesNaiveRecomputation) {
  Rng rng(31);
  for (int i = 0; i < 60; ++i) {
    DistributionTrace t = random_trace(rng, 3, 9);
    EXPECT_NEAR(lm_loss(t).value, oracles::naive_lm(t), 1e-9);
  }
}

// --- output-space loss -------------------------------------------------------

TEST(OutputSpaceLoss, ParentAlreadyDominant) {
  // Only the parent/child coordinates enter the hinge.
  nn::Matrix probs(1, 4);
  probs << 0.8, 0.75, 0.0, 0.0;
  DistributionTrace t;
  t.logits = nn::Matrix::Zero(1, 4);
  t.probs = probs;
  t.gold = {0};
  t.node_flag = {1};
  EXPECT_DOUBLE_EQ(output_space_loss(t, {{0, 1}}).value, 0.0);
}

TEST(OutputSpaceLoss, ChildExceedsParent) {
  nn::Matrix probs(1, 4);
  probs << 0.6, 0.75, 0.0, 0.0;
  DistributionTrace t;
  t.logits = nn::Matrix::Zero(1, 4);
  t.probs = probs;
  t.gold = {0};
  t.node_flag = {1};
  EXPECT_NEAR(output_space_loss(t, {{0, 1}}).value, 0.15, 1e-12);
  // Asymmetry: swapping parent and child changes the value.
  EXPECT_DOUBLE_EQ(output_space_loss(t, {{1, 0}}).value, 0.0);
}

TEST(OutputSpaceLoss, MatchesTripleLoopOracle) {
  Rng rng(37);
  for (int i = 0; i < 60; ++i) {
    DistributionTrace t = random_trace(rng, 4, 12);
    auto edges = gradcheck_detail::random_edges(rng, 12, 3);
    EXPECT_NEAR(output_space_loss(t, edges).value,
                oracles::naive_output_space(t, edges), 1e-9);
  }
}

TEST(OutputSpaceLoss, ZeroExactlyWhenParentDominatesEverywhere) {
  // Adversarial trace: equality at one position, strict dominance elsewhere.
  nn::Matrix probs(2, 3);
  probs << 0.4, 0.4, 0.2,   // equal: hinge inactive by the 0-subgradient rule
      0.5, 0.3, 0.2;        // parent dominates
  DistributionTrace t;
  t.logits = nn::Matrix::Zero(2, 3);
  t.probs = probs;
  t.gold = {0, 0};
  t.node_flag = {1, 1};
  EXPECT_DOUBLE_EQ(output_space_loss(t, {{0, 1}}).value, 0.0);
  // One epsilon violation flips it strictly positive.
  t.probs(0, 1) += 1e-9;
  EXPECT_GT(output_space_loss(t, {{0, 1}}).value, 0.0);
}

TEST(OutputSpaceLoss, InvariantToNonEdgeMass) {
  nn::Matrix p1(1, 5), p2(1, 5);
  p1 << 0.3, 0.4, 0.1, 0.1, 0.1;
  p2 << 0.3, 0.4, 0.25, 0.05, 0.0;
  DistributionTrace a, b;
  a.logits = b.logits = nn::Matrix::Zero(1, 5);
  a.probs = p1;
  b.probs = p2;
  a.gold = b.gold = {0};
  a.node_flag = b.node_flag = {1};
  EXPECT_DOUBLE_EQ(output_space_loss(a, {{0, 1}}).value,
                   output_space_loss(b, {{0, 1}}).value);
}

TEST(OutputSpaceLoss, OnlyFlaggedPositionsCount) {
  Rng rng(41);
  DistributionTrace t = random_trace(rng, 3, 6);
  t.node_flag = {0, 0, 0};
  auto edges = gradcheck_detail::random_edges(rng, 6, 4);
  EXPECT_DOUBLE_EQ(output_space_loss(t, edges).value, 0.0);
}

// --- token-constraint loss ---------------------------------------------------

TEST(TokenConstraintLoss, ZeroWhenAllMassAllowed) {
  nn::Matrix probs(2, 4);
  probs << 0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0;
  DistributionTrace t;
  t.logits = nn::Matrix::Zero(2, 4);
  t.probs = probs;
  t.gold = {0, 0};
  t.node_flag = {0, 0};
  EXPECT_DOUBLE_EQ(token_constraint_loss(t, {1, 1, 0, 0}).value, 0.0);
}

TEST(TokenConstraintLoss, LeakedMass) {
  nn::Matrix probs(1, 5);
  probs << 0.5, 0.2, 0.1, 0.1, 0.1;
  DistributionTrace t;
  t.logits = nn::Matrix::Zero(1, 5);
  t.probs = probs;
  t.gold = {0};
  t.node_flag = {0};
  EXPECT_NEAR(token_constraint_loss(t, {1, 1, 0, 0, 0}).value, 0.3, 1e-12);
}

TEST(TokenConstraintLoss, ComplementIdentityOnRandomTraces) {
  Rng rng(43);
  for (int i = 0; i < 60; ++i) {
    DistributionTrace t = random_trace(rng, 4, 10);
    std::vector<char> allowed(10);
    for (int v = 0; v < 10; ++v) allowed[v] = rng.bernoulli(0.5) ? 1 : 0;
    double loss = token_constraint_loss(t, allowed).value;
    EXPECT_NEAR(loss, oracles::naive_token_constraint(t, allowed), 1e-9);
    // loss = 1 - mean in-vocabulary mass
    double in_mass = 0;
    for (long r = 0; r < t.probs.rows(); ++r)
      for (int v = 0; v < 10; ++v)
        if (allowed[v]) in_mass += t.probs(r, v);
    in_mass /= t.probs.rows();
    EXPECT_NEAR(loss, 1.0 - in_mass, 1e-9);
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, 1.0);
  }
}

// --- semantic loss -------------------------------------------------------------

TEST(SemanticLoss, HandEnumeratedTwoExampleBatch) {
  nn::Matrix et(2, 2), el(2, 2);
  et << 1, 0, 0, 1;
  el << 1, 0, 0, 1;
  std::vector<std::vector<int>> classes = {{0}, {1}};
  SemanticResult r = semantic_loss(et, {el}, classes, {0.1});
  // positives: (0,0) and (1,1), distance 0 -> gamma+ = 0
  // negatives: (0,1) and (1,0), distance sqrt(2) -> gamma- = sqrt(2)
  EXPECT_DOUBLE_EQ(r.stats[0].gamma_pos, 0.0);
  EXPECT_NEAR(r.stats[0].gamma_neg, std::sqrt(2.0), 1e-12);
  EXPECT_EQ(r.stats[0].n_pos, 2);
  EXPECT_EQ(r.stats[0].n_neg, 2);
  EXPECT_DOUBLE_EQ(r.value, 0.0);  // max(0, 0 - 1.4142 + 0.1)
}

TEST(SemanticLoss, MarginFloorWhenAllEmbeddingsCoincide) {
  nn::Matrix et(2, 2), el(2, 2);
  et << 1, 0, 1, 0;
  el << 1, 0, 1, 0;
  std::vector<std::vector<int>> classes = {{0}, {1}};
  SemanticResult r = semantic_loss(et, {el}, classes, {0.1});
  EXPECT_DOUBLE_EQ(r.stats[0].gamma_pos, 0.0);
  EXPECT_DOUBLE_EQ(r.stats[0].gamma_neg, 0.0);
  EXPECT_NEAR(r.value, 0.1, 1e-12);
}

TEST(SemanticLoss, LevelWithoutNegativesContributesZero) {
  nn::Matrix et(2, 2), el(2, 2);
  et << 1, 0, 0, 1;
  el << 0, 1, 1, 0;
  std::vector<std::vector<int>> classes = {{5}, {5}};  // same class everywhere
  SemanticResult r = semantic_loss(et, {el}, classes, {0.5});
  EXPECT_EQ(r.stats[0].n_neg, 0);
  EXPECT_DOUBLE_EQ(r.value, 0.0);
  EXPECT_DOUBLE_EQ(r.d_text.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SemanticLoss, PairCountsPartitionNSquared) {
  Rng rng(47);
  for (int i = 0; i < 20; ++i) {
    int n = 2 + static_cast<int>(rng.uniform_int(3));
    nn::Matrix et(n, 3), el(n, 3);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < 3; ++c) {
        et(r, c) = rng.normal();
        el(r, c) = rng.normal();
      }
    std::vector<std::vector<int>> classes(n, std::vector<int>(1));
    for (int r = 0; r < n; ++r) classes[r][0] = static_cast<int>(rng.uniform_int(2));
    SemanticResult res = semantic_loss(et, {el}, classes, {0.1});
    EXPECT_EQ(res.stats[0].n_pos + res.stats[0].n_neg, n * n);
    EXPECT_NEAR(res.value, oracles::naive_semantic(et, {el}, classes, {0.1}), 1e-9);
  }
}

TEST(SemanticLoss, BatchOfOneRejected) {
  nn::Matrix et(1, 2), el(1, 2);
  et << 1, 0;
  el << 0, 1;
  EXPECT_THROW(semantic_loss(et, {el}, {{0}}, {0.1}),
               BatchTooSmallForSemanticLoss);
}

TEST(SemanticLoss, MonotoneInMarginAndNegativeDistance) {
  nn::Matrix et(2, 2), el(2, 2);
  et << 1, 0, 0.6, 0.8;
  el << 0.8, 0.6, 0, 1;
  std::vector<std::vector<int>> classes = {{0}, {1}};
  double base = semantic_loss(et, {el}, classes, {0.3}).value;
  double larger_margin = semantic_loss(et, {el}, classes, {0.4}).value;
  EXPECT_GE(larger_margin, base);
  // Pushing a negative label embedding further away cannot increase the loss.
  nn::Matrix el2 = el;
  el2.row(1) << -3, 4;  // farther from et.row(0) than before
  double pushed = semantic_loss(et, {el2}, classes, {0.3}).value;
  EXPECT_LE(pushed, base + 1e-12);
}

TEST(LossWeights, ValidatesMargins) {
  LossWeights w;
  w.alphas = {0.1, 0.05};
  EXPECT_THROW(w.validate(), Error);
  w.alphas = {0.05, 0.1};
  EXPECT_NO_THROW(w.validate());
  w.lambda1 = -1;
  EXPECT_THROW(w.validate(), Error);
}

// --- composite ---------------------------------------------------------------

TEST(Composite, ReducesToLmWhenWeightsZero) {
  LossWeights w;
  w.lambda1 = w.lambda2 = w.lambda3 = 0;
  w.alphas = {0.05};
  CompositeLoss c = composite(1.37, 9.9, 0.8, 2.2, w);
  EXPECT_DOUBLE_EQ(c.total, 1.37);
}

TEST(Composite, LinearInEachWeight) {
  LossWeights w;
  w.alphas = {0.05};
  w.lambda1 = 0.25;
  w.lambda2 = 0.5;
  w.lambda3 = 2.0;
  CompositeLoss c1 = composite(1.0, 2.0, 3.0, 4.0, w);
  w.lambda1 = 0.5;
  CompositeLoss c2 = composite(1.0, 2.0, 3.0, 4.0, w);
  EXPECT_NEAR(c2.total - c1.total, 0.25 * 2.0, 1e-12);
}

TEST(Composite, DefaultWeightsMatchReportedConfiguration) {
  LossWeights w;
  EXPECT_DOUBLE_EQ(w.lambda1, 1e-3);
  EXPECT_DOUBLE_EQ(w.lambda2, 1e-5);
  EXPECT_DOUBLE_EQ(w.lambda3, 1.0);
  CompositeLoss c = composite(2.0, 10.0, 1.0, 0.5, w);
  EXPECT_NEAR(c.total, 2.0 + 1e-3 * 10.0 + 1e-5 * 1.0 + 0.5, 1e-12);
}

// --- finite differences --------------------------------------------------------

TEST(GradCheck, AllLossesPassAtDefaultTolerance) {
  GradCheckConfig cfg;
  cfg.points = 25;  // the acceptance suite runs the full 50
  GradCheckReport report = run_gradcheck(cfg);
  ASSERT_EQ(report.entries.size(), 5u);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.pass) << e.name << " max_rel_err=" << e.max_rel_err;
    EXPECT_LT(e.max_rel_err, 1e-4) << e.name;
  }
  // 64-bit central differences on the smooth LM loss are much tighter.
  EXPECT_LT(report.entries[0].max_rel_err, 1e-5);
  EXPECT_TRUE(report.all_pass());
  EXPECT_EQ(report.to_json()["losses"].size(), 5u);
}

TEST(GradCheck, NonFiniteLossDetected) {
  nn::Matrix x = nn::Matrix::Zero(1, 2);
  nn::Matrix analytic = nn::Matrix::Zero(1, 2);
  auto bad = [&]() { return std::numeric_limits<double>::quiet_NaN(); };
  EXPECT_THROW(finite_difference_check(bad, x, analytic, 1e-4), NonFinite);
}

}  // namespace
