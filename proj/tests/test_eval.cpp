#include <gtest/gtest.h>

#include "mgrgcl/eval.hpp"
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

EvalProtocol euclidean_protocol(bool exclude = false) {
  EvalProtocol p;
  p.metric = Metric::Euclidean;
  p.exclude_same_camera_same_id = exclude;
  return p;
}

}  // namespace

TEST(Retrieval, PerfectRanking) {
  const Matrix q = Matrix::from_rows({{0.0}, {10.0}});
  const Matrix g = Matrix::from_rows({{0.1}, {0.2}, {10.1}, {10.2}});
  const RankingResult r = evaluate_retrieval(q, std::vector<int>{0, 1}, std::vector<int>{0, 0}, g, std::vector<int>{0, 0, 1, 1},
                                             std::vector<int>{1, 1, 1, 1}, euclidean_protocol());
  EXPECT_EQ(r.mAP, 1.0);
  EXPECT_EQ(r.cmc.at(1), 1.0);
  EXPECT_EQ(r.num_valid_queries, 2);
}

TEST(Retrieval, AveragePrecisionExample) {
  // Relevant items land at ranks 1 and 3: AP = (1/1 + 2/3) / 2.
  const Matrix q = Matrix::from_rows({{0.0}});
  const Matrix g = Matrix::from_rows({{1.0}, {2.0}, {3.0}});
  const RankingResult r = evaluate_retrieval(q, std::vector<int>{7}, std::vector<int>{0}, g, std::vector<int>{7, 8, 7},
                                             std::vector<int>{1, 1, 1}, euclidean_protocol());
  EXPECT_NEAR(r.mAP, 0.83333, 1e-5);
  EXPECT_EQ(r.cmc.at(1), 1.0);
}

TEST(Retrieval, CmcFirstHitAtRankTwo) {
  const Matrix q = Matrix::from_rows({{0.0}});
  const Matrix g = Matrix::from_rows({{1.0}, {2.0}, {3.0}});
  EvalProtocol p = euclidean_protocol();
  p.ranks = {1, 2, 3};
  const RankingResult r =
      evaluate_retrieval(q, std::vector<int>{1}, std::vector<int>{0}, g, std::vector<int>{2, 1, 3}, std::vector<int>{1, 1, 1}, p);
  EXPECT_EQ(r.cmc.at(1), 0.0);
  EXPECT_EQ(r.cmc.at(2), 1.0);
  EXPECT_EQ(r.cmc.at(3), 1.0);
  EXPECT_NEAR(r.mAP, 0.5, 1e-15);
}

TEST(Retrieval, SameCameraSameIdentityExcluded) {
  const Matrix q = Matrix::from_rows({{0.0}});
  const Matrix g = Matrix::from_rows({{0.1}, {1.0}, {2.0}});
  const std::vector<int> gid{5, 6, 5}, gcam{0, 1, 1};
  const RankingResult kept = evaluate_retrieval(q, std::vector<int>{5}, std::vector<int>{0}, g, gid, gcam, euclidean_protocol(false));
  EXPECT_NEAR(kept.mAP, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  const RankingResult dropped = evaluate_retrieval(q, std::vector<int>{5}, std::vector<int>{0}, g, gid, gcam, euclidean_protocol(true));
  EXPECT_NEAR(dropped.mAP, 0.5, 1e-15);
}

TEST(Retrieval, NoValidQueries) {
  const Matrix q = Matrix::from_rows({{0.0}});
  const Matrix g = Matrix::from_rows({{1.0}});
  EXPECT_EQ(error_code([&] {
              evaluate_retrieval(q, std::vector<int>{1}, std::vector<int>{0}, g, std::vector<int>{2}, std::vector<int>{0}, EvalProtocol{});
            }),
            Errc::NoValidQueries);
}

TEST(Retrieval, QueriesWithoutPositivesAreSkipped) {
  const Matrix q = Matrix::from_rows({{0.0}, {5.0}});
  const Matrix g = Matrix::from_rows({{0.5}, {9.0}});
  const RankingResult r = evaluate_retrieval(q, std::vector<int>{1, 2}, std::vector<int>{0, 0}, g, std::vector<int>{1, 3},
                                             std::vector<int>{1, 1}, euclidean_protocol());
  EXPECT_EQ(r.num_valid_queries, 1);
  EXPECT_EQ(r.mAP, 1.0);
}

TEST(Retrieval, MetadataLengthChecked) {
  const Matrix q = Matrix::from_rows({{0.0}});
  const Matrix g = Matrix::from_rows({{1.0}});
  EXPECT_EQ(error_code([&] {
              evaluate_retrieval(q, std::vector<int>{1, 2}, std::vector<int>{0}, g, std::vector<int>{1}, std::vector<int>{0}, EvalProtocol{});
            }),
            Errc::DimensionMismatch);
}

TEST(Retrieval, RankGalleryBreaksTiesByIndex) {
  const std::vector<double> d{0.5, 0.1, 0.5, 0.1};
  EXPECT_EQ(rank_gallery(d), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Retrieval, MatchesOracleOnRandomInstances) {
  Rng rng(99);
  for (int t = 0; t < 40; ++t) {
    const std::size_t nq = 1 + rng.uniform_index(15), ng = 1 + rng.uniform_index(40), d = 1 + rng.uniform_index(6);
    const int ids = 1 + static_cast<int>(rng.uniform_index(6)), cams = 1 + static_cast<int>(rng.uniform_index(3));
    const Matrix q = oracle::random_matrix(rng, nq, d), g = oracle::random_matrix(rng, ng, d);
    std::vector<int> qid(nq), qcam(nq), gid(ng), gcam(ng);
    for (auto& x : qid) x = static_cast<int>(rng.uniform_index(ids));
    for (auto& x : qcam) x = static_cast<int>(rng.uniform_index(cams));
    for (auto& x : gid) x = static_cast<int>(rng.uniform_index(ids));
    for (auto& x : gcam) x = static_cast<int>(rng.uniform_index(cams));
    EvalProtocol p;
    p.exclude_same_camera_same_id = rng.uniform() < 0.5;
    p.metric = rng.uniform() < 0.5 ? Metric::Cosine : Metric::Euclidean;
    const auto want = oracle::retrieval(q, qid, qcam, g, gid, gcam, p.exclude_same_camera_same_id, p.ranks, p.metric == Metric::Cosine);
    if (want.valid == 0) {
      EXPECT_EQ(error_code([&] { evaluate_retrieval(q, qid, qcam, g, gid, gcam, p); }), Errc::NoValidQueries);
      continue;
    }
    const RankingResult got = evaluate_retrieval(q, qid, qcam, g, gid, gcam, p);
    EXPECT_EQ(got.num_valid_queries, want.valid);
    EXPECT_NEAR(got.mAP, want.mAP, 1e-12);
    for (int r : p.ranks) EXPECT_NEAR(got.cmc.at(r), want.cmc.at(r), 1e-12);
  }
}

TEST(Retrieval, InvariantToGalleryPermutation) {
  Rng rng(100);
  for (int t = 0; t < 20; ++t) {
    const std::size_t ng = 30;
    const Matrix q = oracle::random_matrix(rng, 6, 4), g = oracle::random_matrix(rng, ng, 4);
    std::vector<int> qid(6), qcam(6, 0), gid(ng), gcam(ng, 1);
    for (auto& x : qid) x = static_cast<int>(rng.uniform_index(3));
    for (auto& x : gid) x = static_cast<int>(rng.uniform_index(3));
    std::vector<std::size_t> perm(ng);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix g2(ng, 4);
    std::vector<int> gid2(ng);
    for (std::size_t i = 0; i < ng; ++i) {
      std::copy(g.row(perm[i]).begin(), g.row(perm[i]).end(), g2.row(i).begin());
      gid2[i] = gid[perm[i]];
    }
    const RankingResult a = evaluate_retrieval(q, qid, qcam, g, gid, gcam, EvalProtocol{});
    const RankingResult b = evaluate_retrieval(q, qid, qcam, g2, gid2, gcam, EvalProtocol{});
    EXPECT_NEAR(a.mAP, b.mAP, 1e-12);
    for (int r : {1, 5, 10}) EXPECT_NEAR(a.cmc.at(r), b.cmc.at(r), 1e-12);
  }
}

TEST(Retrieval, ProtocolValidation) {
  EvalProtocol p;
  p.ranks = {5, 1};
  EXPECT_EQ(error_code([&] { p.validate(); }), Errc::InvalidConfig);
}
