#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mgrgcl/dataset.hpp"
#include "mgrgcl/error.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

struct ClusteringConfig {
  double eps = 0.2;
  /// Core threshold; the point itself counts toward it.
  int min_pts = 4;
  Metric metric = Metric::Cosine;

  void validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) fail(Errc::InvalidConfig, "clustering.eps must be finite and > 0");
    if (min_pts < 1) fail(Errc::InvalidConfig, "clustering.min_pts must be >= 1");
  }
};

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // group id in [0, num_groups) or kNoise
  int num_groups = 0;

  std::size_t noise_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
  }
  std::vector<std::size_t> group_sizes() const {
    std::vector<std::size_t> sizes(num_groups, 0);
    for (int l : labels) {
      if (l >= 0) ++sizes[l];
    }
    return sizes;
  }
};

/// Renumbers non-negative labels to 0..k-1 in order of first appearance.
inline int canonicalize_labels(std::vector<int>& labels) {
  std::map<int, int> remap;
  for (int& l : labels) {
    if (l < 0) continue;
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  return static_cast<int>(remap.size());
}

/// Exact DBSCAN. Seeds are tried in ascending index order and each cluster is
/// expanded breadth-first, so a border point joins the earliest-created cluster
/// with a core inside its eps-ball.
inline ClusterAssignment dbscan(const Matrix& features, const ClusteringConfig& cfg) {
  cfg.validate();
  const std::size_t n = features.rows();
  if (n == 0) fail(Errc::EmptyInput, "dbscan on an empty feature set");

  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (distance(cfg.metric, features.row(i), features.row(j)) <= cfg.eps) neighbors[i].push_back(j);
    }
  }
  const auto min_pts = static_cast<std::size_t>(cfg.min_pts);
  auto is_core = [&](std::size_t i) { return neighbors[i].size() >= min_pts; };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(n, kUnvisited);
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    if (!is_core(i)) {
      labels[i] = kNoise;
      continue;
    }
    labels[i] = cluster;
    std::deque<std::size_t> frontier(neighbors[i].begin(), neighbors[i].end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (labels[j] == kNoise) labels[j] = cluster;  // border point
      if (labels[j] != kUnvisited) continue;
      labels[j] = cluster;
      if (is_core(j)) frontier.insert(frontier.end(), neighbors[j].begin(), neighbors[j].end());
    }
    ++cluster;
  }

  ClusterAssignment out;
  out.labels = std::move(labels);
  out.num_groups = canonicalize_labels(out.labels);
  return out;
}

/// The relabeled target split of one clustering round; noise is dropped.
struct PseudoLabeledDataset {
  std::vector<SampleRecord> records;      // identity := group id
  std::vector<std::size_t> source_rows;   // row of each record in the clustered set
  int num_groups = 0;
  int round = 0;

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& r : records) out.push_back(static_cast<int>(*r.identity));
    return out;
  }
};

inline PseudoLabeledDataset assign_pseudo_labels(const DatasetManifest& target, const ClusterAssignment& assignment, int round = 0) {
  if (assignment.labels.size() != target.records.size()) {
    fail(Errc::LengthMismatch, "assignment covers " + std::to_string(assignment.labels.size()) + " samples, manifest has " +
                                   std::to_string(target.records.size()));
  }
  PseudoLabeledDataset out;
  out.num_groups = assignment.num_groups;
  out.round = round;
  for (std::size_t i = 0; i < target.records.size(); ++i) {
    const int g = assignment.labels[i];
    if (g < 0) continue;
    SampleRecord r = target.records[i];
    r.identity = static_cast<std::uint32_t>(g);
    out.records.push_back(r);
    out.source_rows.push_back(i);
  }
  return out;
}

}  // namespace mgrgcl
