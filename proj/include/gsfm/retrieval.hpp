#pragma once

// Candidate image-pair selection: fixed-horizon sequential pairs plus top-k
// global-descriptor similarity pairs. Similarity is computed in independent
// square blocks so the work can fan out across the executor.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"

namespace gsfm {

struct GlobalDescriptor {
  int image_id = 0;
  std::vector<float> vector;  // L2-normalized

  /// Normalizes `v`; throws ZeroVector for an all-zero input.
  static GlobalDescriptor make(int image_id, std::vector<float> v) {
    double n2 = 0.0;
    for (float x : v) n2 += static_cast<double>(x) * x;
    if (!(n2 > 0.0)) throw Error(ErrorCode::kZeroVector, "descriptor has zero norm");
    const double inv = 1.0 / std::sqrt(n2);
    for (float& x : v) x = static_cast<float>(x * inv);
    return {image_id, std::move(v)};
  }
};

enum class PairSource { kSequential, kSimilarity };

struct PairCandidate {
  int i = 0;  // i < j
  int j = 0;
  std::optional<double> score;  // similarity in [-1, 1] when known
  PairSource source = PairSource::kSequential;

  bool operator<(const PairCandidate& o) const { return std::pair(i, j) < std::pair(o.i, o.j); }
};

/// Sorted by (i, j), no duplicates, i < j.
struct PairCandidateList {
  std::vector<PairCandidate> pairs;

  std::size_t size() const { return pairs.size(); }
  bool contains(int a, int b) const {
    const PairCandidate key{std::min(a, b), std::max(a, b), std::nullopt, PairSource::kSequential};
    return std::binary_search(pairs.begin(), pairs.end(), key);
  }
};

/// All (i, j) with 0 < j - i <= lookahead.
inline PairCandidateList sequential_pairs(int n_images, int lookahead) {
  if (n_images < 0 || lookahead < 1) {
    throw Error(ErrorCode::kInvalidArgument, "sequential_pairs needs lookahead >= 1");
  }
  PairCandidateList out;
  for (int i = 0; i < n_images; ++i) {
    for (int j = i + 1; j < n_images && j - i <= lookahead; ++j) {
      out.pairs.push_back({i, j, std::nullopt, PairSource::kSequential});
    }
  }
  return out;
}

/// Dense symmetric similarity matrix; entry (a, b) is the dot product of the
/// descriptors at list positions a and b.
using SimilarityMatrix = Eigen::MatrixXd;

inline double descriptor_dot(std::span<const float> a, std::span<const float> b) {
  // Fixed left-to-right summation keeps the value independent of blocking.
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return s;
}

/// Upper-triangle blocks of size `block` are independent executor tasks; the
/// lower triangle is mirrored afterwards.
inline SimilarityMatrix blocked_similarity(std::span<const GlobalDescriptor> descs, int block,
                                           Executor* executor = nullptr) {
  if (block < 1) throw Error(ErrorCode::kInvalidArgument, "block size must be >= 1");
  const int n = static_cast<int>(descs.size());
  for (const auto& d : descs) {
    if (d.vector.size() != descs.front().vector.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "descriptor lengths differ");
    }
  }
  SimilarityMatrix sim = SimilarityMatrix::Zero(n, n);
  const int nb = (n + block - 1) / block;
  std::vector<std::pair<int, int>> tiles;
  for (int bi = 0; bi < nb; ++bi) {
    for (int bj = bi; bj < nb; ++bj) tiles.emplace_back(bi, bj);
  }
  auto compute_tile = [&](std::size_t t) {
    const auto [bi, bj] = tiles[t];
    for (int a = bi * block; a < std::min(n, (bi + 1) * block); ++a) {
      for (int b = std::max(a, bj * block); b < std::min(n, (bj + 1) * block); ++b) {
        sim(a, b) = descriptor_dot(descs[a].vector, descs[b].vector);
      }
    }
  };
  if (executor) {
    executor->for_each("retrieval.similarity", tiles.size(), compute_tile);
  } else {
    for (std::size_t t = 0; t < tiles.size(); ++t) compute_tile(t);
  }
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) sim(b, a) = sim(a, b);
  }
  return sim;
}

/// For each image, its top-k partners by score (ties to the lower index), then
/// those below `min_score` dropped. Indices are positions in `sim`; pass
/// `image_ids` to translate them.
inline PairCandidateList select_similarity_pairs(const SimilarityMatrix& sim, int k, double min_score,
                                                 std::span<const int> image_ids = {}) {
  const int n = static_cast<int>(sim.rows());
  if (sim.cols() != n) throw Error(ErrorCode::kDimensionMismatch, "similarity matrix must be square");
  if (!image_ids.empty() && static_cast<int>(image_ids.size()) != n) {
    throw Error(ErrorCode::kDimensionMismatch, "image id list does not match the matrix");
  }
  auto id = [&](int a) { return image_ids.empty() ? a : image_ids[a]; };
  std::map<std::pair<int, int>, double> chosen;
  std::vector<int> order;
  for (int a = 0; a < n; ++a) {
    order.clear();
    for (int b = 0; b < n; ++b) {
      if (b != a) order.push_back(b);
    }
    auto score = [&](int b) { return sim(std::min(a, b), std::max(a, b)); };
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return score(x) > score(y); });
    const int take = std::min<int>(std::max(k, 0), static_cast<int>(order.size()));
    for (int r = 0; r < take; ++r) {
      const int b = order[r];
      const double s = score(b);
      if (s < min_score) continue;
      const int ia = id(a);
      const int ib = id(b);
      chosen[{std::min(ia, ib), std::max(ia, ib)}] = s;
    }
  }
  PairCandidateList out;
  for (const auto& [key, s] : chosen) out.pairs.push_back({key.first, key.second, s, PairSource::kSimilarity});
  return out;
}

/// Retrieval count per image: 5 below `large_threshold` images, 15 otherwise.
inline int retrieval_k(int n_images, int k_small = 5, int k_large = 15, int large_threshold = 500) {
  return n_images < large_threshold ? k_small : k_large;
}

/// Union of two candidate lists; the first list's provenance wins on overlap
/// and a known score fills in a missing one.
inline PairCandidateList merge_pair_lists(const PairCandidateList& a, const PairCandidateList& b) {
  std::map<std::pair<int, int>, PairCandidate> m;
  for (const auto& p : a.pairs) m[{p.i, p.j}] = p;
  for (const auto& p : b.pairs) {
    auto [it, inserted] = m.try_emplace({p.i, p.j}, p);
    if (!inserted && !it->second.score) it->second.score = p.score;
  }
  PairCandidateList out;
  for (auto& [key, p] : m) out.pairs.push_back(p);
  return out;
}

}  // namespace gsfm
