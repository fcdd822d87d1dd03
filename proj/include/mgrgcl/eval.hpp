#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mgrgcl/error.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

struct EvalProtocol {
  /// Drop gallery items sharing both identity and camera with the query.
  bool exclude_same_camera_same_id = true;
  std::vector<int> ranks{1, 5, 10};
  Metric metric = Metric::Cosine;
  /// Target split: the first this-many samples of each identity are queries,
  /// the rest form the gallery.
  int queries_per_identity = 4;

  void validate() const {
    if (ranks.empty()) fail(Errc::InvalidConfig, "eval.ranks must not be empty");
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (ranks[i] < 1 || (i > 0 && ranks[i] <= ranks[i - 1])) fail(Errc::InvalidConfig, "eval.ranks must be positive and ascending");
    }
    if (queries_per_identity < 1) fail(Errc::InvalidConfig, "eval.queries_per_identity must be >= 1");
  }
};

struct RankingResult {
  double mAP = 0.0;
  std::map<int, double> cmc;
  int num_valid_queries = 0;
};

/// Gallery indices ordered by ascending distance, ties broken by index.
inline std::vector<std::size_t> rank_gallery(std::span<const double> distances) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  return order;
}

inline RankingResult evaluate_retrieval(const Matrix& query_feats, std::span<const int> query_ids, std::span<const int> query_cams,
                                        const Matrix& gallery_feats, std::span<const int> gallery_ids, std::span<const int> gallery_cams,
                                        const EvalProtocol& protocol) {
  protocol.validate();
  if (query_ids.size() != query_feats.rows() || query_cams.size() != query_feats.rows()) fail(Errc::DimensionMismatch, "query metadata length");
  if (gallery_ids.size() != gallery_feats.rows() || gallery_cams.size() != gallery_feats.rows()) fail(Errc::DimensionMismatch, "gallery metadata length");
  if (query_feats.rows() > 0 && gallery_feats.rows() > 0 && query_feats.cols() != gallery_feats.cols()) {
    fail(Errc::DimensionMismatch, "query and gallery feature dimensions differ");
  }
  RankingResult res;
  std::vector<std::size_t> first_hit_counts(protocol.ranks.size(), 0);
  double ap_sum = 0.0;
  std::vector<double> dist(gallery_feats.rows());
  for (std::size_t q = 0; q < query_feats.rows(); ++q) {
    for (std::size_t g = 0; g < gallery_feats.rows(); ++g) dist[g] = distance(protocol.metric, query_feats.row(q), gallery_feats.row(g));
    std::size_t rank = 0, hits = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t g : rank_gallery(dist)) {
      const bool same_id = gallery_ids[g] == query_ids[q];
      if (protocol.exclude_same_camera_same_id && same_id && gallery_cams[g] == query_cams[q]) continue;
      ++rank;
      if (!same_id) continue;
      ++hits;
      if (first_hit == 0) first_hit = rank;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
    if (hits == 0) continue;
    ++res.num_valid_queries;
    ap_sum += precision_sum / static_cast<double>(hits);
    for (std::size_t r = 0; r < protocol.ranks.size(); ++r) {
      if (first_hit <= static_cast<std::size_t>(protocol.ranks[r])) ++first_hit_counts[r];
    }
  }
  if (res.num_valid_queries == 0) fail(Errc::NoValidQueries, "no query has a valid positive in the gallery");
  const double nq = res.num_valid_queries;
  res.mAP = ap_sum / nq;
  for (std::size_t r = 0; r < protocol.ranks.size(); ++r) res.cmc[protocol.ranks[r]] = static_cast<double>(first_hit_counts[r]) / nq;
  return res;
}

}  // namespace mgrgcl
