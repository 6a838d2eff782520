#include <gtest/gtest.h>

#include <cmath>

#include <argpersona/metrics.hpp>

#include "fixtures.hpp"

using namespace argpersona;

namespace {

std::vector<std::size_t> repeat(std::size_t label, std::size_t n) { return std::vector<std::size_t>(n, label); }

std::vector<std::size_t> kialo_test_golds() {
  std::vector<std::size_t> g = repeat(0, 646);
  for (auto x : repeat(1, 207)) g.push_back(x);
  for (auto x : repeat(2, 255)) g.push_back(x);
  return g;
}

// Per-class counts straight from the two lists, no confusion matrix.
void reference_prf(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold, std::size_t n,
                   double& p, double& r, double& f) {
  p = r = f = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == c && gold[i] == c) ++tp;
      if (pred[i] == c && gold[i] != c) ++fp;
      if (pred[i] != c && gold[i] == c) ++fn;
    }
    const double pc = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    p += pc;
    r += rc;
    f += pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0.0;
  }
  p *= 100.0 / n;
  r *= 100.0 / n;
  f *= 100.0 / n;
}

}  // namespace

TEST(MacroPrf, KialoMajorityBaseline) {
  const auto golds = kialo_test_golds();
  const auto prf = macro_prf(repeat(0, golds.size()), golds, 3);
  EXPECT_DOUBLE_EQ(round2(prf.precision), 19.43);
  EXPECT_DOUBLE_EQ(round2(prf.recall), 33.33);
  EXPECT_DOUBLE_EQ(round2(prf.f1), 24.55);
  EXPECT_TRUE(prf.zero_division);
  EXPECT_TRUE(prf.per_class[1].precision_undefined);
  EXPECT_FALSE(prf.per_class[0].precision_undefined);
}

TEST(MacroPrf, PerfectPrediction) {
  const std::vector<std::size_t> g{0, 1, 2, 1, 0};
  const auto prf = macro_prf(g, g, 3);
  EXPECT_DOUBLE_EQ(prf.f1, 100.0);
  EXPECT_FALSE(prf.zero_division);
}

TEST(MacroPrf, MatchesReferenceOnEveryLengthFourSequence) {
  // all 3^4 gold x 3^4 prediction sequences
  std::vector<std::size_t> g(4), p(4);
  std::size_t checked = 0;
  for (int gi = 0; gi < 81; ++gi) {
    for (int k = 0, v = gi; k < 4; ++k, v /= 3) g[k] = static_cast<std::size_t>(v % 3);
    for (int pi = 0; pi < 81; ++pi) {
      for (int k = 0, v = pi; k < 4; ++k, v /= 3) p[k] = static_cast<std::size_t>(v % 3);
      double rp, rr, rf;
      reference_prf(p, g, 3, rp, rr, rf);
      const auto prf = macro_prf(p, g, 3);
      ASSERT_NEAR(prf.precision, rp, 1e-9);
      ASSERT_NEAR(prf.recall, rr, 1e-9);
      ASSERT_NEAR(prf.f1, rf, 1e-9);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 81u * 81u);
}

TEST(MacroPrf, AbstentionCountsAgainstRecallOnly) {
  const std::vector<std::size_t> g{0, 0, 1, 1};
  const std::vector<std::size_t> p{0, kAbstain, 1, 1};
  const auto prf = macro_prf(p, g, 2);
  EXPECT_DOUBLE_EQ(prf.per_class[0].precision, 100.0);
  EXPECT_DOUBLE_EQ(prf.per_class[0].recall, 50.0);
  EXPECT_DOUBLE_EQ(prf.per_class[1].precision, 100.0);
  EXPECT_DOUBLE_EQ(accuracy(p, g), 75.0);
}

TEST(MacroPrf, LengthMismatchThrows) {
  EXPECT_THROW(macro_prf({0, 1}, {0}, 2), ContractError);
  EXPECT_THROW(macro_prf({}, {}, 2), ContractError);
  EXPECT_THROW(macro_prf({3}, {0}, 2), ContractError);
}

TEST(Accuracy, MajorityEqualsMajorityShare) {
  auto rng = make_rng(7, "majority-share");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 500);
    std::vector<std::size_t> g(n);
    std::size_t pro = 0;
    for (auto& x : g) pro += (x = uniform_index(rng, 2));
    const std::size_t majority = pro * 2 >= n ? 1 : 0;
    const double share = 100.0 * static_cast<double>(majority ? pro : n - pro) / static_cast<double>(n);
    EXPECT_DOUBLE_EQ(accuracy(repeat(majority, n), g), share);
  }
}

TEST(Accuracy, DdoMajorityShare) {
  std::vector<std::size_t> g = repeat(1, 1633);
  for (auto x : repeat(0, 2608 - 1633)) g.push_back(x);
  EXPECT_DOUBLE_EQ(round2(accuracy(repeat(1, g.size()), g)), 62.62);
}

TEST(Buckets, ExactLengthsWithCap) {
  std::vector<ScoredRecord> recs{{0, 0, 1}, {1, 0, 1}, {1, 1, 3}, {0, 0, 12}, {1, 1, 10}};
  const auto b = bucket_by_context_length(recs, 2, 10);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.at(1).count, 2u);
  EXPECT_EQ(b.at(3).count, 1u);
  EXPECT_EQ(b.at(10).count, 2u);
  EXPECT_DOUBLE_EQ(b.at(10).f1, 100.0);
  EXPECT_FALSE(b.count(2));
}

TEST(Report, RoundsAndSerializes) {
  std::vector<ScoredRecord> recs{{0, 0, 0}, {kAbstain, 1, 2}, {1, 1, 2}};
  const auto rep = make_report(recs, {"Con", "Pro"}, 10, true);
  EXPECT_DOUBLE_EQ(rep.accuracy, 66.67);
  ASSERT_TRUE(rep.abstain_rate);
  EXPECT_DOUBLE_EQ(*rep.abstain_rate, 33.33);
  const auto j = to_json(rep);
  EXPECT_EQ(j["instances"], 3);
  EXPECT_TRUE(j["per_class"].contains("Pro"));
  EXPECT_TRUE(j["context_length_buckets"].contains("2"));
  EXPECT_THROW(make_report({}, {"Con", "Pro"}), ContractError);
}

TEST(PairedTTest, HandDerivedThreePairs) {
  const auto r = paired_t_test({3, 5, 7}, {2, 3, 4});
  EXPECT_NEAR(r.t, 3.4641, 1e-3);
  EXPECT_EQ(r.dof, 2u);
  // dof 2 has the closed form p = 1 - t / sqrt(t^2 + 2)
  EXPECT_NEAR(r.p, 1.0 - r.t / std::sqrt(r.t * r.t + 2.0), 1e-6);
  EXPECT_NEAR(r.p, 0.0741799, 1e-6);
}

TEST(PairedTTest, FourPairsAgainstTabulatedValue) {
  const auto r = paired_t_test({70.1, 68.3, 71.2, 69.0}, {68.2, 67.9, 69.5, 68.8});
  EXPECT_NEAR(r.t, 2.4035999, 1e-6);
  EXPECT_NEAR(r.p, 0.0955647, 1e-6);
}

TEST(PairedTTest, SymmetricAndLargeT) {
  const auto a = paired_t_test({1, 2, 3.5}, {0, 0, 0});
  const auto b = paired_t_test({0, 0, 0}, {1, 2, 3.5});
  EXPECT_DOUBLE_EQ(a.t, -b.t);
  EXPECT_DOUBLE_EQ(a.p, b.p);
  const auto big = paired_t_test({100, 101, 102, 103}, {0, 1, 2, 3.01});
  EXPECT_LT(big.p, 1e-6);
  EXPECT_GE(big.p, 0.0);
}

TEST(PairedTTest, DegenerateInputs) {
  EXPECT_THROW(paired_t_test({1, 2}, {0, 1}), DegenerateSampleError);
  EXPECT_THROW(paired_t_test({1}, {0}), ContractError);
  EXPECT_THROW(paired_t_test({1, 2}, {0}), ContractError);
}

TEST(StudentT, TwoSidedPValues) {
  EXPECT_DOUBLE_EQ(student_t_two_sided_p(0.0, 5), 1.0);
  // dof 1 is Cauchy: p = 1 - 2 atan(t) / pi
  EXPECT_NEAR(student_t_two_sided_p(1.0, 1), 0.5, 1e-9);
  EXPECT_NEAR(student_t_two_sided_p(2.0, 1), 1.0 - 2.0 * std::atan(2.0) / M_PI, 1e-9);
  EXPECT_NEAR(student_t_two_sided_p(2.228139, 10), 0.05, 1e-5);
}

TEST(FleissKappa, PerfectAgreement) {
  RatingMatrix m{{{1, 1, 1}, {0, 0, 0}, {1, 1, 1}}};
  EXPECT_DOUBLE_EQ(fleiss_kappa(m), 1.0);
}

TEST(FleissKappa, HandDerivedTwoItems) {
  RatingMatrix m{{{0, 0, 1}, {0, 1, 1}}};
  EXPECT_NEAR(fleiss_kappa(m), -1.0 / 3.0, 1e-12);
}

TEST(FleissKappa, ThreeCategories) {
  RatingMatrix m{{{0, 0, 0}, {1, 1, 1}, {0, 1, 2}, {1, 1, 2}, {0, 0, 2}}};
  EXPECT_NEAR(fleiss_kappa(m), 0.2708333333, 1e-9);
}

TEST(FleissKappa, UndefinedAndMalformed) {
  EXPECT_THROW(fleiss_kappa(RatingMatrix{{{1, 1}, {1, 1}}}), UndefinedKappaError);
  EXPECT_THROW(fleiss_kappa(RatingMatrix{{{1, 0}, {1}}}), ContractError);
  EXPECT_THROW(fleiss_kappa(RatingMatrix{}), ContractError);
  EXPECT_THROW(fleiss_kappa(RatingMatrix{{{1}, {0}}}), ContractError);
}

TEST(Agreement, PairwiseAndMajority) {
  RatingMatrix m{{{0, 0, 1}, {1, 1, 1}}};
  EXPECT_NEAR(pairwise_agreement(m), (1.0 / 3.0 + 1.0) / 2.0, 1e-12);
  EXPECT_EQ(majority_vote({0, 0, 1}), 0);
  EXPECT_EQ(majority_vote({2, 1, 2, 2}), 2);
  EXPECT_FALSE(majority_vote({0, 1}).has_value());
}

TEST(RatingsCsv, ParsesAspectsInItemOrder) {
  const auto m = parse_ratings_csv(
      "item_id,annotator_id,aspect,score\n"
      "b,r1,relevance,1\n"
      "a,r1,relevance,0\n"
      "a,r2,relevance,0\n"
      "b,r2,relevance,1\n"
      "a,r1,\"fluency, overall\",1\n"
      "a,r2,\"fluency, overall\",1\n");
  ASSERT_EQ(m.size(), 2u);
  const auto& rel = m.at("relevance");
  ASSERT_EQ(rel.items(), 2u);
  EXPECT_EQ(rel.ratings[0], (std::vector<int>{0, 0}));
  EXPECT_EQ(rel.ratings[1], (std::vector<int>{1, 1}));
  EXPECT_DOUBLE_EQ(fleiss_kappa(rel), 1.0);
  EXPECT_EQ(m.at("fluency, overall").items(), 1u);
}

TEST(RatingsCsv, RejectsBadInput) {
  EXPECT_THROW(parse_ratings_csv("item,annotator,aspect,score\n"), ParseError);
  EXPECT_THROW(parse_ratings_csv("item_id,annotator_id,aspect,score\na,r1,x,1\na,r1,x,0\n"), ParseError);
  EXPECT_THROW(parse_ratings_csv("item_id,annotator_id,aspect,score\na,r1,x,high\n"), ParseError);
  EXPECT_THROW(parse_ratings_csv("item_id,annotator_id,aspect,score\na,r1,x,1\na,r2,x,1\nb,r1,x,0\n"),
               ContractError);
}

TEST(Round2, HalfEven) {
  EXPECT_DOUBLE_EQ(round2(24.554999), 24.55);
  EXPECT_DOUBLE_EQ(round2(0.125), 0.12);
  EXPECT_DOUBLE_EQ(round2(0.375), 0.38);
}
