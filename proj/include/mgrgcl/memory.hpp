#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgrgcl/clustering.hpp"
#include "mgrgcl/error.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

/// One unit-norm representative per pseudo group.
struct GroupMemory {
  Matrix entries;  // N_c x d
  double momentum = 0.2;
  double temperature = 0.2;

  std::size_t size() const noexcept { return entries.rows(); }
  std::size_t dim() const noexcept { return entries.cols(); }
};

inline void validate_memory_hyper(double momentum, double temperature) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) fail(Errc::InvalidConfig, "memory.momentum must lie in [0,1]");
  if (!(temperature > 0.0)) fail(Errc::NonPositiveTemperature, "memory.temperature must be > 0");
}

/// Row k = normalized mean of the features labeled k; noise rows are skipped.
inline GroupMemory init_memory(const Matrix& features, const ClusterAssignment& assignment, double momentum, double temperature) {
  validate_memory_hyper(momentum, temperature);
  if (assignment.labels.size() != features.rows()) fail(Errc::LengthMismatch, "assignment and feature counts differ");
  if (assignment.num_groups < 1) fail(Errc::EmptyGroup, "no groups to initialize memory from");
  const std::size_t d = features.cols();
  Matrix sums(assignment.num_groups, d);
  std::vector<std::size_t> counts(assignment.num_groups, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int g = assignment.labels[i];
    if (g < 0) continue;
    if (g >= assignment.num_groups) fail(Errc::BadIndex, "group id " + std::to_string(g) + " out of range");
    ++counts[g];
    auto row = sums.row(g);
    const auto f = features.row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] += f[k];
  }
  GroupMemory mem{Matrix(assignment.num_groups, d), momentum, temperature};
  for (int g = 0; g < assignment.num_groups; ++g) {
    if (counts[g] == 0) fail(Errc::EmptyGroup, "group " + std::to_string(g) + " has no members");
    auto row = sums.row(g);
    for (double& x : row) x /= static_cast<double>(counts[g]);
    const RealVector unit = l2_normalize(row);
    std::copy(unit.begin(), unit.end(), mem.entries.row(g).begin());
  }
  return mem;
}

/// c_k <- normalize(m c_k + (1 - m) q_k) for every group k present in the batch,
/// where q_k is the mean of that group's queries. Other rows are untouched.
inline void update_memory(GroupMemory& memory, const Matrix& queries, const std::vector<int>& groups) {
  if (queries.rows() != groups.size()) fail(Errc::LengthMismatch, "query and group-id counts differ");
  if (queries.rows() > 0 && queries.cols() != memory.dim()) fail(Errc::DimensionMismatch, "query dimension differs from memory");
  const std::size_t d = memory.dim();
  std::map<int, std::pair<RealVector, std::size_t>> means;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int g = groups[i];
    if (g < 0 || static_cast<std::size_t>(g) >= memory.size()) fail(Errc::BadIndex, "group id " + std::to_string(g) + " not in memory");
    auto& [sum, count] = means[g];
    if (sum.empty()) sum.assign(d, 0.0);
    const auto q = queries.row(i);
    for (std::size_t k = 0; k < d; ++k) sum[k] += q[k];
    ++count;
  }
  const double m = memory.momentum;
  for (auto& [g, acc] : means) {
    auto& [sum, count] = acc;
    auto row = memory.entries.row(g);
    RealVector blended(d);
    for (std::size_t k = 0; k < d; ++k) blended[k] = m * row[k] + (1.0 - m) * (sum[k] / static_cast<double>(count));
    const RealVector unit = l2_normalize(blended);
    std::copy(unit.begin(), unit.end(), row.begin());
  }
}

}  // namespace mgrgcl
