#include <gtest/gtest.h>

#include "mgrgcl/clustering.hpp"
#include "test_support.hpp"

using namespace mgrgcl;

namespace {

template <class F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an mgrgcl::Error";
  return Errc::IoError;
}

/// Gaussian blobs plus uniform background clutter.
Matrix blobs(Rng& rng, std::size_t n, std::size_t d) {
  const std::size_t centers = 1 + rng.uniform_index(6);
  std::vector<RealVector> mu;
  for (std::size_t c = 0; c < centers; ++c) {
    RealVector m(d);
    for (double& x : m) x = rng.uniform(-3.0, 3.0);
    mu.push_back(m);
  }
  const double spread = rng.uniform(0.1, 0.6);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const bool clutter = rng.uniform() < 0.15;
    const RealVector& m = mu[rng.uniform_index(centers)];
    for (std::size_t k = 0; k < d; ++k) x(i, k) = clutter ? rng.uniform(-4.0, 4.0) : m[k] + rng.normal(0.0, spread);
  }
  return x;
}

}  // namespace

TEST(Dbscan, CollinearChainIsOneCluster) {
  const Matrix x = Matrix::from_rows({{0.0}, {0.1}, {0.2}, {0.3}, {0.4}});
  const ClusterAssignment a = dbscan(x, {0.15, 2, Metric::Euclidean});
  EXPECT_EQ(a.num_groups, 1);
  EXPECT_EQ(a.labels, (std::vector<int>{0, 0, 0, 0, 0}));
  EXPECT_EQ(a.labels, oracle::density_clusters(x, 0.15, 2, false));
}

TEST(Dbscan, IsolatedPointIsNoise) {
  const ClusterAssignment a = dbscan(Matrix::from_rows({{0.0}}), {0.5, 2, Metric::Euclidean});
  EXPECT_EQ(a.labels, (std::vector<int>{kNoise}));
  EXPECT_EQ(a.num_groups, 0);
}

TEST(Dbscan, TwoSeparatedBlobs) {
  Rng rng(3);
  Matrix x(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    const double base = i % 2 == 0 ? 0.0 : 100.0;
    x(i, 0) = base + rng.uniform(0.0, 0.1);
    x(i, 1) = base + rng.uniform(0.0, 0.1);
  }
  const ClusterAssignment a = dbscan(x, {1.0, 3, Metric::Euclidean});
  EXPECT_EQ(a.num_groups, 2);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.labels[i], static_cast<int>(i % 2));
  EXPECT_EQ(a.labels, oracle::density_clusters(x, 1.0, 3, false));
}

TEST(Dbscan, BorderPointJoinsEarliestCluster) {
  // Point 2 is a border point within eps of cores in two different clusters.
  const Matrix x = Matrix::from_rows({{0.0}, {0.1}, {0.5}, {0.9}, {1.0}});
  const ClusterAssignment a = dbscan(x, {0.41, 2, Metric::Euclidean});
  EXPECT_EQ(a.labels, oracle::density_clusters(x, 0.41, 2, false));
  const ClusterAssignment b = dbscan(x, {0.45, 3, Metric::Euclidean});
  EXPECT_EQ(b.labels, oracle::density_clusters(x, 0.45, 3, false));
}

TEST(Dbscan, MatchesOracleOnRandomInstances) {
  Rng rng(2024);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 1 + rng.uniform_index(120);
    const std::size_t d = 1 + rng.uniform_index(5);
    const Matrix x = blobs(rng, n, d);
    const bool cos = rng.uniform() < 0.5;
    const double eps = cos ? rng.uniform(0.01, 0.3) : rng.uniform(0.1, 1.5);
    const int min_pts = 1 + static_cast<int>(rng.uniform_index(8));
    const ClusterAssignment a = dbscan(x, {eps, min_pts, cos ? Metric::Cosine : Metric::Euclidean});
    ASSERT_EQ(a.labels, oracle::density_clusters(x, eps, min_pts, cos)) << "instance " << t;
  }
}

TEST(Dbscan, MinPtsOneMeansNoNoise) {
  Rng rng(5);
  const Matrix x = blobs(rng, 80, 3);
  EXPECT_EQ(dbscan(x, {0.2, 1, Metric::Euclidean}).noise_count(), 0u);
}

TEST(Dbscan, EuclideanScaleInvariance) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = blobs(rng, 60, 2);
    // Powers of two keep the scaled distances exact.
    const double exact = std::ldexp(1.0, static_cast<int>(rng.uniform_index(4)));
    Matrix z = x;
    for (double& v : z.data()) v *= exact;
    EXPECT_EQ(dbscan(x, {0.5, 4, Metric::Euclidean}).labels, dbscan(z, {0.5 * exact, 4, Metric::Euclidean}).labels);
  }
}

TEST(Dbscan, CosineIgnoresPerPointScale) {
  Rng rng(7);
  const Matrix x = blobs(rng, 60, 3);
  Matrix y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double s = std::ldexp(1.0, static_cast<int>(rng.uniform_index(6)));
    for (double& v : y.row(i)) v *= s;
  }
  EXPECT_EQ(dbscan(x, {0.05, 3, Metric::Cosine}).labels, dbscan(y, {0.05, 3, Metric::Cosine}).labels);
}

TEST(Dbscan, ConfigAndInputErrors) {
  EXPECT_EQ(error_code([] { dbscan(Matrix(0, 2), {}); }), Errc::EmptyInput);
  EXPECT_EQ(error_code([] { dbscan(Matrix(2, 2), {0.0, 2, Metric::Cosine}); }), Errc::InvalidConfig);
  EXPECT_EQ(error_code([] { dbscan(Matrix(2, 2), {0.1, 0, Metric::Cosine}); }), Errc::InvalidConfig);
}

TEST(Labels, CanonicalRenumbering) {
  std::vector<int> l{5, -1, 5, 2, 9, 2};
  EXPECT_EQ(canonicalize_labels(l), 3);
  EXPECT_EQ(l, (std::vector<int>{0, -1, 0, 1, 2, 1}));
}

TEST(Labels, GroupSizesAndNoise) {
  const ClusterAssignment a{{0, -1, 1, 0, -1}, 2};
  EXPECT_EQ(a.noise_count(), 2u);
  EXPECT_EQ(a.group_sizes(), (std::vector<std::size_t>{2, 1}));
}

namespace {

DatasetManifest target_manifest(std::size_t n) {
  DatasetManifest m;
  m.map_shape = {1, 1, 1};
  for (std::size_t i = 0; i < n; ++i) {
    m.records.push_back({static_cast<std::uint32_t>(100 + i), std::nullopt, static_cast<std::uint32_t>(i % 2), Domain::Target,
                         static_cast<std::uint32_t>(i)});
  }
  return m;
}

}  // namespace

TEST(PseudoLabels, AllNoiseGivesEmptySet) {
  const PseudoLabeledDataset p = assign_pseudo_labels(target_manifest(3), {{-1, -1, -1}, 0});
  EXPECT_TRUE(p.records.empty());
  EXPECT_EQ(p.num_groups, 0);
}

TEST(PseudoLabels, NoNoiseKeepsEveryRecord) {
  const PseudoLabeledDataset p = assign_pseudo_labels(target_manifest(4), {{0, 1, 1, 0}, 2}, 3);
  EXPECT_EQ(p.records.size(), 4u);
  EXPECT_EQ(p.labels(), (std::vector<int>{0, 1, 1, 0}));
  EXPECT_EQ(p.round, 3);
}

TEST(PseudoLabels, MixedDropsNoise) {
  const PseudoLabeledDataset p = assign_pseudo_labels(target_manifest(5), {{0, -1, 1, -1, 0}, 2});
  EXPECT_EQ(p.records.size(), 3u);
  EXPECT_EQ(p.source_rows, (std::vector<std::size_t>{0, 2, 4}));
  EXPECT_EQ(p.records[1].sample_id, 102u);
  EXPECT_EQ(p.records[1].camera, 0u);
}

TEST(PseudoLabels, LengthMismatch) {
  EXPECT_EQ(error_code([] { assign_pseudo_labels(target_manifest(3), {{0, 0}, 1}); }), Errc::LengthMismatch);
}
