#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgrgcl/error.hpp"
#include "mgrgcl/memory.hpp"
#include "mgrgcl/mgr.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

struct TripletConfig {
  double margin = 0.5;
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;
};

struct TripletResult {
  double loss = 0.0;
  Matrix grad;
  std::vector<double> terms;            // hinged per-anchor terms
  std::vector<std::size_t> hardest_positive;
  std::vector<std::size_t> hardest_negative;
};

/// Batch-hard triplet loss, averaged over anchors. The anchor is excluded from
/// its own positives. Ties pick the lowest index.
inline TripletResult batch_hard_triplet(const Matrix& features, std::span<const int> labels, const TripletConfig& cfg) {
  const std::size_t n = features.rows();
  if (labels.size() != n) fail(Errc::LengthMismatch, "labels and features differ in count");
  if (!(cfg.margin >= 0.0) || !std::isfinite(cfg.margin)) fail(Errc::InvalidConfig, "triplet margin must be finite and >= 0");
  if (n == 0) fail(Errc::DegenerateBatch, "empty batch");
  const Matrix dist = pairwise_distances(features, features);
  TripletResult res;
  res.grad = Matrix(n, features.cols());
  res.terms.assign(n, 0.0);
  res.hardest_positive.assign(n, 0);
  res.hardest_negative.assign(n, 0);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos == n || dist(a, j) > dist(a, pos)) pos = j;
      } else if (neg == n || dist(a, j) < dist(a, neg)) {
        neg = j;
      }
    }
    if (pos == n || neg == n) {
      fail(Errc::DegenerateBatch, "anchor " + std::to_string(a) + " (label " + std::to_string(labels[a]) + ") has no " +
                                      (pos == n ? "positive" : "negative"));
    }
    res.hardest_positive[a] = pos;
    res.hardest_negative[a] = neg;
    const double term = cfg.margin + dist(a, pos) - dist(a, neg);
    if (term <= 0.0) continue;
    res.terms[a] = term;
    res.loss += term * scale;
    const auto fa = features.row(a);
    auto ga = res.grad.row(a);
    if (dist(a, pos) > 0.0) {
      const auto fp = features.row(pos);
      auto gp = res.grad.row(pos);
      for (std::size_t k = 0; k < fa.size(); ++k) {
        const double g = scale * (fa[k] - fp[k]) / dist(a, pos);
        ga[k] += g;
        gp[k] -= g;
      }
    }
    if (dist(a, neg) > 0.0) {
      const auto fn = features.row(neg);
      auto gn = res.grad.row(neg);
      for (std::size_t k = 0; k < fa.size(); ++k) {
        const double g = scale * (fa[k] - fn[k]) / dist(a, neg);
        ga[k] -= g;
        gn[k] += g;
      }
    }
  }
  return res;
}

/// Mean softmax cross-entropy; grad = (softmax - onehot) / n.
inline LossAndGrad identity_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows();
  if (labels.size() != n) fail(Errc::LengthMismatch, "labels and logits differ in count");
  LossAndGrad res;
  res.grad = Matrix(n, logits.cols());
  if (n == 0) return res;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      fail(Errc::LabelOutOfRange, "label " + std::to_string(labels[i]) + " outside [0," + std::to_string(logits.cols()) + ")");
    }
    const auto z = logits.row(i);
    res.loss += scale * (log_sum_exp(z) - z[labels[i]]);
    const RealVector p = softmax(z);
    auto g = res.grad.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) g[k] = scale * (p[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0));
  }
  return res;
}

struct SupervisedLoss {
  double total = 0.0;
  double triplet = 0.0;
  double identity = 0.0;
  UpstreamGrad grad;
};

/// Triplet averaged over the three global features plus cross-entropy averaged
/// over the part classifiers.
inline SupervisedLoss supervised_loss(const BatchOutput& out, std::span<const int> labels, const TripletConfig& cfg) {
  SupervisedLoss res;
  for (std::size_t b = 0; b < 3; ++b) {
    TripletResult t = batch_hard_triplet(out.global[b], labels, cfg);
    res.triplet += t.loss / 3.0;
    for (double& g : t.grad.data()) g /= 3.0;
    res.grad.global[b] = std::move(t.grad);
  }
  const std::size_t heads = out.logits.size();
  for (std::size_t j = 0; j < heads; ++j) {
    LossAndGrad ce = identity_cross_entropy(out.logits[j], labels);
    res.identity += ce.loss / static_cast<double>(heads);
    for (double& g : ce.grad.data()) g /= static_cast<double>(heads);
    res.grad.logits.push_back(std::move(ce.grad));
  }
  res.total = res.triplet + res.identity;
  return res;
}

struct ContrastiveResult {
  double loss = 0.0;
  RealVector grad;
};

/// -log softmax((C q) / tau)[positive] over every memory entry.
inline ContrastiveResult group_contrastive(std::span<const double> query, const Matrix& entries, std::size_t positive, double temperature) {
  if (!(temperature > 0.0)) fail(Errc::NonPositiveTemperature, "temperature must be > 0");
  if (positive >= entries.rows()) {
    fail(Errc::BadIndex, "positive index " + std::to_string(positive) + " with " + std::to_string(entries.rows()) + " memory entries");
  }
  if (query.size() != entries.cols()) fail(Errc::DimensionMismatch, "query and memory dimensions differ");
  RealVector logits(entries.rows());
  for (std::size_t i = 0; i < entries.rows(); ++i) logits[i] = dot(query, entries.row(i)) / temperature;
  ContrastiveResult res;
  res.loss = log_sum_exp(logits) - logits[positive];
  const RealVector p = softmax(logits);
  res.grad.assign(query.size(), 0.0);
  for (std::size_t i = 0; i < entries.rows(); ++i) {
    const double w = (p[i] - (i == positive ? 1.0 : 0.0)) / temperature;
    const auto c = entries.row(i);
    for (std::size_t k = 0; k < res.grad.size(); ++k) res.grad[k] += w * c[k];
  }
  return res;
}

inline ContrastiveResult group_contrastive(std::span<const double> query, const GroupMemory& memory, std::size_t positive) {
  return group_contrastive(query, memory.entries, positive, memory.temperature);
}

struct BatchContrastive {
  double loss = 0.0;
  Matrix grad;      // w.r.t. the raw (unnormalized) features
  Matrix queries;   // the normalized features used as queries
};

/// Mean group contrastive loss over a batch of raw features, each normalized
/// to a unit query first; the gradient flows back through the normalization.
inline BatchContrastive group_contrastive_batch(const Matrix& features, std::span<const int> groups, const GroupMemory& memory) {
  const std::size_t n = features.rows();
  if (groups.size() != n) fail(Errc::LengthMismatch, "groups and features differ in count");
  BatchContrastive res;
  res.grad = Matrix(n, features.cols());
  res.queries = Matrix(n, features.cols());
  if (n == 0) return res;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.row(i);
    const double norm = l2_norm(f);
    const RealVector q = l2_normalize(f);
    std::copy(q.begin(), q.end(), res.queries.row(i).begin());
    if (groups[i] < 0) fail(Errc::BadIndex, "negative group id");
    const ContrastiveResult c = group_contrastive(q, memory, static_cast<std::size_t>(groups[i]));
    res.loss += scale * c.loss;
    // d q / d f = (I - q q^T) / |f|
    const double along = dot(q, c.grad);
    auto g = res.grad.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * (c.grad[k] - q[k] * along) / norm;
  }
  return res;
}

}  // namespace mgrgcl
