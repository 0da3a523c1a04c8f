#include <gtest/gtest.h>

#include <random>
#include <set>
#include <vector>

#include "gsfm/executor.hpp"
#include "gsfm/retrieval.hpp"

using namespace gsfm;

namespace {

std::set<std::pair<int, int>> as_set(const PairCandidateList& l) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : l.pairs) s.insert({p.i, p.j});
  return s;
}

std::vector<GlobalDescriptor> random_descriptors(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<GlobalDescriptor> out;
  for (int k = 0; k < n; ++k) {
    std::vector<float> v(dim);
    for (auto& x : v) x = g(rng);
    out.push_back(GlobalDescriptor::make(k, v));
  }
  return out;
}

}  // namespace

TEST(SequentialPairs, SmallCases) {
  EXPECT_EQ(as_set(sequential_pairs(3, 10)), (std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}}));
  EXPECT_EQ(as_set(sequential_pairs(5, 1)), (std::set<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
}

TEST(SequentialPairs, CountMatchesSum) {
  for (int n : {2, 7, 100, 131}) {
    for (int h : {1, 3, 10, 200}) {
      std::size_t expected = 0;
      for (int d = 1; d <= h; ++d) expected += std::max(0, n - d);
      const auto l = sequential_pairs(n, h);
      EXPECT_EQ(l.size(), expected);
      for (const auto& p : l.pairs) {
        EXPECT_LT(p.i, p.j);
        EXPECT_LE(p.j - p.i, h);
        EXPECT_EQ(p.source, PairSource::kSequential);
      }
    }
  }
  EXPECT_EQ(sequential_pairs(100, 10).size(), 945u);
  EXPECT_THROW(sequential_pairs(10, 0), Error);
}

TEST(GlobalDescriptor, IsNormalized) {
  const auto d = GlobalDescriptor::make(3, {3.0f, 0.0f, 4.0f});
  EXPECT_NEAR(d.vector[0], 0.6f, 1e-6);
  EXPECT_NEAR(d.vector[2], 0.8f, 1e-6);
  EXPECT_THROW(GlobalDescriptor::make(0, {0.0f, 0.0f}), Error);
}

TEST(BlockedSimilarity, IdenticalAndOrthogonal) {
  std::vector<GlobalDescriptor> d{GlobalDescriptor::make(0, {1, 0, 0}), GlobalDescriptor::make(1, {1, 0, 0}),
                                  GlobalDescriptor::make(2, {0, 1, 0})};
  const auto s = blocked_similarity(d, 2);
  EXPECT_DOUBLE_EQ(s(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(s(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(s(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(s(2, 1), 0.0);
}

TEST(BlockedSimilarity, BlockSizeInvariantBitwise) {
  const auto d = random_descriptors(120, 64, 5);
  const auto single = blocked_similarity(d, 120);
  Executor ex(4);
  for (int block : {1, 7, 50, 119, 500}) {
    const auto m = blocked_similarity(d, block, &ex);
    ASSERT_EQ(m.rows(), 120);
    for (int a = 0; a < 120; ++a) {
      for (int b = 0; b < 120; ++b) EXPECT_EQ(m(a, b), single(a, b)) << block;
    }
  }
  // Independent dot-product oracle.
  for (int a = 0; a < 120; a += 13) {
    for (int b = 0; b < 120; b += 11) {
      double s = 0.0;
      for (int k = 0; k < 64; ++k) s += static_cast<double>(d[a].vector[k]) * d[b].vector[k];
      EXPECT_NEAR(single(a, b), s, 1e-12);
    }
  }
}

TEST(BlockedSimilarity, DimensionMismatch) {
  std::vector<GlobalDescriptor> d{GlobalDescriptor::make(0, {1, 0, 0}), GlobalDescriptor::make(1, {1, 0})};
  try {
    blocked_similarity(d, 50);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  EXPECT_THROW(blocked_similarity(d, 0), Error);
}

TEST(SelectSimilarityPairs, AllBelowThresholdIsEmpty) {
  SimilarityMatrix s = SimilarityMatrix::Constant(4, 4, 0.29);
  EXPECT_EQ(select_similarity_pairs(s, 3, 0.3).size(), 0u);
}

TEST(SelectSimilarityPairs, HandEnumeratedTopOne) {
  SimilarityMatrix s = SimilarityMatrix::Identity(3, 3);
  s(0, 1) = s(1, 0) = 0.9;
  s(0, 2) = s(2, 0) = 0.5;
  s(1, 2) = s(2, 1) = 0.2;
  const auto l = select_similarity_pairs(s, 1, 0.3);
  EXPECT_EQ(as_set(l), (std::set<std::pair<int, int>>{{0, 1}, {0, 2}}));
  for (const auto& p : l.pairs) {
    ASSERT_TRUE(p.score);
    EXPECT_EQ(p.source, PairSource::kSimilarity);
  }
}

TEST(SelectSimilarityPairs, CompleteGraphWhenUnrestricted) {
  const auto d = random_descriptors(9, 8, 6);
  const auto l = select_similarity_pairs(blocked_similarity(d, 4), 8, -1.0);
  EXPECT_EQ(l.size(), 36u);
}

TEST(SelectSimilarityPairs, TiesGoToLowerIndex) {
  SimilarityMatrix s = SimilarityMatrix::Constant(4, 4, 0.5);
  const auto l = select_similarity_pairs(s, 1, 0.3);
  // Every image picks the lowest other index.
  EXPECT_EQ(as_set(l), (std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {0, 3}}));
}

TEST(SelectSimilarityPairs, SubsetAndBestPartnerProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = random_descriptors(30, 4, 100 + seed);
    const auto s = blocked_similarity(d, 8);
    const double min_score = 0.3;
    const int k = 1 + static_cast<int>(seed % 5);
    const auto l = select_similarity_pairs(s, k, min_score);
    const auto set = as_set(l);
    for (const auto& p : l.pairs) {
      EXPECT_LT(p.i, p.j);
      EXPECT_GE(s(p.i, p.j), min_score);
    }
    for (int a = 0; a < 30; ++a) {
      int best = -1;
      for (int b = 0; b < 30; ++b) {
        if (b != a && (best < 0 || s(a, b) > s(a, best))) best = b;
      }
      if (s(a, best) >= min_score) EXPECT_TRUE(set.count({std::min(a, best), std::max(a, best)})) << a;
    }
  }
}

TEST(SelectSimilarityPairs, TranslatesImageIds) {
  SimilarityMatrix s = SimilarityMatrix::Identity(2, 2);
  s(0, 1) = s(1, 0) = 0.8;
  const std::vector<int> ids{40, 7};
  const auto l = select_similarity_pairs(s, 1, 0.3, ids);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_EQ(l.pairs[0].i, 7);
  EXPECT_EQ(l.pairs[0].j, 40);
}

TEST(RetrievalK, SwitchesAtFiveHundred) {
  EXPECT_EQ(retrieval_k(499), 5);
  EXPECT_EQ(retrieval_k(500), 15);
  EXPECT_EQ(retrieval_k(30, 2, 9, 20), 9);
}

TEST(MergePairLists, UnionIsDeduplicated) {
  const int n = 40;
  const auto seq = sequential_pairs(n, 10);
  const auto d = random_descriptors(n, 4, 9);
  const auto sim = select_similarity_pairs(blocked_similarity(d, 50), 5, 0.3);
  const auto u = merge_pair_lists(seq, sim);
  auto expected = as_set(seq);
  for (const auto& p : sim.pairs) expected.insert({p.i, p.j});
  EXPECT_EQ(as_set(u), expected);
  EXPECT_EQ(u.size(), expected.size());
  EXPECT_LE(u.size(), static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::size_t k = 1; k < u.pairs.size(); ++k) EXPECT_TRUE(u.pairs[k - 1] < u.pairs[k]);
  // Sequential provenance wins, but similarity scores fill in.
  for (const auto& p : u.pairs) {
    if (seq.contains(p.i, p.j)) EXPECT_EQ(p.source, PairSource::kSequential);
    if (sim.contains(p.i, p.j)) EXPECT_TRUE(p.score.has_value());
  }
}
