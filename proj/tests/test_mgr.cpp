#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "mgrgcl/mgr.hpp"
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

FeatureMap random_map(Rng& rng, MapShape s) {
  FeatureMap m(s);
  for (float& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

MGRParams small_params(std::size_t C, Rng& rng, PartLayout layout = PartLayout::Full) {
  return MGRParams::init(C, 5, 4, 3, layout, rng);
}

}  // namespace

TEST(Pooling, ConstantMap) {
  for (double v : global_max_pool(FeatureMap({3, 2, 2}, 2.0f))) EXPECT_EQ(v, 2.0);
}

TEST(Pooling, SingleChannelExample) {
  FeatureMap m({1, 2, 2});
  m.values() = {1, 3, 2, 0};
  EXPECT_EQ(global_max_pool(m), (RealVector{3}));
}

TEST(Pooling, LargeEntryDominates) {
  FeatureMap m({2, 3, 3});
  m.at(0, 2, 1) = 9.0f;
  EXPECT_EQ(global_max_pool(m)[0], 9.0);
}

TEST(Pooling, TiesGoToFirstRowMajorPosition) {
  FeatureMap m({1, 2, 2}, 1.0f);
  std::vector<std::size_t> arg;
  max_pool_region(m, {0, 2, 0, 2}, &arg);
  EXPECT_EQ(arg[0], 0u);
  m.at(0, 1, 0) = 5.0f;
  m.at(0, 1, 1) = 5.0f;
  max_pool_region(m, {0, 2, 0, 2}, &arg);
  EXPECT_EQ(arg[0], m.index(0, 1, 0));
}

TEST(Partition, EvenVerticalSplit) {
  const auto parts = partition(FeatureMap({1, 6, 4}), Axis::Vertical, 3);
  ASSERT_EQ(parts.size(), 3u);
  for (const auto& p : parts) {
    EXPECT_EQ(p.height(), 2u);
    EXPECT_EQ(p.width(), 4u);
  }
}

TEST(Partition, RemainderGoesToFirstStripes) {
  const auto parts = partition(FeatureMap({1, 5, 2}), Axis::Vertical, 2);
  EXPECT_EQ(parts[0].height(), 3u);
  EXPECT_EQ(parts[1].height(), 2u);
  EXPECT_EQ(stripe_bounds(7, 3, 0), (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ(stripe_bounds(7, 3, 1), (std::pair<std::size_t, std::size_t>{3, 5}));
  EXPECT_EQ(stripe_bounds(7, 3, 2), (std::pair<std::size_t, std::size_t>{5, 7}));
}

TEST(Partition, HorizontalStripesReconstructMap) {
  Rng rng(2);
  const FeatureMap m = random_map(rng, {2, 3, 6});
  const auto parts = partition(m, Axis::Horizontal, 2);
  ASSERT_EQ(parts.size(), 2u);
  for (const auto& p : parts) {
    EXPECT_EQ(p.width(), 3u);
    EXPECT_EQ(p.height(), 3u);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t h = 0; h < 3; ++h) {
      for (std::size_t w = 0; w < 6; ++w) EXPECT_EQ(m.at(c, h, w), parts[w / 3].at(c, h, w % 3));
    }
  }
}

TEST(Partition, StripesDisjointAndExhaustive) {
  for (std::size_t extent = 1; extent <= 12; ++extent) {
    for (std::size_t n = 1; n <= extent; ++n) {
      std::size_t next = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto [b, e] = stripe_bounds(extent, n, i);
        EXPECT_EQ(b, next);
        EXPECT_GT(e, b);
        next = e;
      }
      EXPECT_EQ(next, extent);
    }
  }
}

TEST(Partition, TooManyParts) {
  EXPECT_EQ(error_code([] { partition(FeatureMap({1, 2, 2}), Axis::Vertical, 3); }), Errc::TooManyParts);
  EXPECT_EQ(error_code([] { partition(FeatureMap({1, 4, 2}), Axis::Horizontal, 3); }), Errc::TooManyParts);
}

TEST(Forward, ZeroMapZeroBiasGivesZeroParts) {
  Rng rng(1);
  const MGRParams p = small_params(4, rng);
  const MGRDescriptor d = forward(FeatureMap({4, 6, 6}), p);
  ASSERT_EQ(d.local.size(), 10u);
  for (const auto& part : d.local) {
    for (double v : part) EXPECT_EQ(v, 0.0);
  }
}

TEST(Forward, IdentityAdaptersPassPooledValues) {
  Rng rng(1);
  MGRParams p = MGRParams::init(3, 3, 8, 0, PartLayout::Full, rng);
  for (auto& a : p.adapters) {
    a.weight.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) a.weight(i, i) = 1.0;
  }
  const MGRDescriptor d = forward(FeatureMap({3, 4, 4}, 1.0f), p);
  for (const auto& g : d.global) EXPECT_EQ(g, (RealVector{1, 1, 1}));
}

TEST(Forward, MegaLayoutAndDimension) {
  Rng rng(3);
  const MGRParams p = small_params(6, rng);
  const FeatureMap m = random_map(rng, {6, 6, 6});
  const MGRDescriptor d = forward(m, p);
  const RealVector mega = d.mega();
  EXPECT_EQ(mega.size(), 3u * 5 + 10u * 4);
  EXPECT_EQ(mega.size(), p.mega_dim());
  std::vector<RealVector> members(d.global.begin(), d.global.end());
  members.insert(members.end(), d.local.begin(), d.local.end());
  EXPECT_EQ(mega, concat(members));
}

TEST(Forward, PartFeatureDefinition) {
  Rng rng(4);
  const MGRParams p = small_params(3, rng);
  const FeatureMap m = random_map(rng, {3, 6, 6});
  const MGRDescriptor d = forward(m, p);
  // lh2: middle of three column stripes, explicit max over columns 2..3.
  const auto stripes = partition(m, Axis::Horizontal, 3);
  RealVector pre = p.reducers[8].apply(global_max_pool(stripes[1]));
  for (double& x : pre) x = std::max(0.0, x);
  EXPECT_EQ(d.local[8], pre);
}

TEST(Forward, ShapeMismatchRejected) {
  Rng rng(5);
  const MGRParams p = small_params(4, rng);
  EXPECT_EQ(error_code([&] { forward(FeatureMap({3, 6, 6}), p); }), Errc::ShapeMismatch);
}

TEST(Params, InitRangesAndCounts) {
  Rng rng(6);
  const MGRParams p = MGRParams::init(16, 16, 8, 5, PartLayout::Full, rng);
  EXPECT_EQ(p.reducers.size(), 10u);
  EXPECT_EQ(p.classifiers.size(), 10u);
  EXPECT_EQ(p.parameter_count(), 3u * (16 * 16 + 16) + 10u * (8 * 16 + 8) + 10u * 5 * 8);
  for (const auto& a : p.adapters) {
    for (double w : a.weight.data()) EXPECT_LE(std::abs(w), 0.25);
    for (double b : a.bias) EXPECT_EQ(b, 0.0);
  }
  for (const auto& c : p.classifiers) {
    for (double w : c.weight.data()) EXPECT_LE(std::abs(w), 1.0 / std::sqrt(8.0));
    EXPECT_TRUE(c.bias.empty());
  }
  EXPECT_EQ(default_part_dim(32), 8u);
  EXPECT_EQ(default_part_dim(64), 16u);
}

TEST(Params, AblationLayouts) {
  Rng rng(7);
  EXPECT_EQ(MGRParams::init(8, 8, 8, 2, PartLayout::VerticalOnly, rng).mega_dim(), 3u * 8 + 5u * 8);
  EXPECT_EQ(MGRParams::init(8, 8, 8, 2, PartLayout::GlobalOnly, rng).mega_dim(), 3u * 8);
}

TEST(Batch, SingletonEqualsForward) {
  Rng rng(8);
  const MGRParams p = small_params(5, rng);
  const FeatureMap m = random_map(rng, {5, 6, 6});
  const BatchOutput out = forward_batch(std::vector<FeatureMap>{m}, p);
  EXPECT_EQ(out.descriptor(0).mega(), forward(m, p).mega());
}

TEST(Batch, MatchesPerSampleLoop) {
  Rng rng(9);
  const MGRParams p = small_params(6, rng);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 64; ++i) maps.push_back(random_map(rng, {6, 6, 6}));
  const BatchOutput out = forward_batch(maps, p);
  const Matrix mega = out.mega();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const RealVector f = forward(maps[i], p).mega();
    for (std::size_t k = 0; k < f.size(); ++k) ASSERT_EQ(mega(i, k), f[k]);
    // Logits are classifier(part feature).
    for (std::size_t j = 0; j < 10; ++j) {
      const RealVector z = p.classifiers[j].apply(out.local[j].row(i));
      for (std::size_t o = 0; o < z.size(); ++o) ASSERT_EQ(out.logits[j](i, o), z[o]);
    }
  }
}

TEST(Batch, PermutationEquivariant) {
  Rng rng(10);
  const MGRParams p = small_params(4, rng);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(random_map(rng, {4, 6, 6}));
  std::vector<FeatureMap> rev(maps.rbegin(), maps.rend());
  const Matrix a = forward_batch(maps, p).mega(), b = forward_batch(rev, p).mega();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) EXPECT_EQ(a(i, k), b(4 - i, k));
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(11);
  const MGRParams p = small_params(4, rng);
  std::vector<FeatureMap> maps{random_map(rng, {4, 6, 6}), random_map(rng, {4, 6, 6})};
  const BatchOutput out = forward_batch(maps, p);
  const BackwardResult r = backward(out.cache, UpstreamGrad{}, p);
  EXPECT_EQ(r.grads, p.zeros_like());
}

TEST(Backward, ReducerBiasGradientIsMaskedUpstreamSum) {
  Rng rng(12);
  const MGRParams p = small_params(4, rng);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 6; ++i) maps.push_back(random_map(rng, {4, 6, 6}));
  const BatchOutput out = forward_batch(maps, p);
  UpstreamGrad up;
  for (std::size_t j = 0; j < 10; ++j) up.local.push_back(oracle::random_matrix(rng, 6, p.part_dim));
  const BackwardResult r = backward(out.cache, up, p);
  for (std::size_t j = 0; j < 10; ++j) {
    for (std::size_t k = 0; k < p.part_dim; ++k) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 6; ++i) expect += out.local[j](i, k) > 0.0 ? up.local[j](i, k) : 0.0;
      EXPECT_NEAR(r.grads.reducers[j].bias[k], expect, 1e-12);
    }
  }
}

TEST(Backward, InputGradientRoutesToArgmax) {
  FeatureMap m({1, 2, 2});
  m.values() = {0.5f, 2.0f, -1.0f, 0.0f};
  Rng rng(13);
  MGRParams p = MGRParams::init(1, 1, 1, 0, PartLayout::GlobalOnly, rng);
  for (auto& a : p.adapters) a.weight(0, 0) = 1.0;
  const BatchOutput out = forward_batch(std::vector<FeatureMap>{m}, p);
  UpstreamGrad up;
  up.global[0] = Matrix::from_rows({{1.0}});
  const BackwardResult r = backward(out.cache, up, p, true);
  EXPECT_EQ(r.input_grads[0], (std::vector<double>{0, 1, 0, 0}));
}

TEST(Backward, StaleCacheRejected) {
  Rng rng(14);
  const MGRParams p = small_params(4, rng);
  const BatchOutput out = forward_batch(std::vector<FeatureMap>{random_map(rng, {4, 6, 6})}, p);
  const MGRParams other = MGRParams::init(4, 5, 4, 3, PartLayout::VerticalOnly, rng);
  EXPECT_EQ(error_code([&] { backward(out.cache, UpstreamGrad{}, other); }), Errc::StaleCache);
}

TEST(Backward, FiniteDifferencesAllLayouts) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LT(gradcheck::mgr_backward(seed, PartLayout::Full), 1e-5) << "seed " << seed;
    EXPECT_LT(gradcheck::mgr_backward(seed, PartLayout::VerticalOnly), 1e-5) << "seed " << seed;
    EXPECT_LT(gradcheck::mgr_backward(seed, PartLayout::GlobalOnly), 1e-5) << "seed " << seed;
  }
}

TEST(Backward, SplitMegaGradMatchesLayout) {
  Rng rng(15);
  const MGRParams p = small_params(4, rng);
  const Matrix g = oracle::random_matrix(rng, 2, p.mega_dim());
  const UpstreamGrad up = split_mega_grad(g, p);
  EXPECT_EQ(up.global[1](1, 2), g(1, 5 + 2));
  EXPECT_EQ(up.local[9](0, 3), g(0, 15 + 9 * 4 + 3));
  EXPECT_EQ(error_code([&] { split_mega_grad(Matrix(2, 3), p); }), Errc::ShapeMismatch);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  Rng rng(16);
  for (PartLayout layout : {PartLayout::Full, PartLayout::VerticalOnly}) {
    const MGRParams p = MGRParams::init(6, 5, 4, 3, layout, rng);
    const auto path = std::filesystem::temp_directory_path() / "mgrgcl_test_ckpt.mgrp";
    write_checkpoint(p, path, {{"memory.entries", {2, 2}, {1, 0, 0, 1}}});
    const MGRParams back = read_checkpoint(path);
    ASSERT_EQ(back.signature(), p.signature());
    MGRParams expect = p;
    expect.for_each_tensor([](const std::string&, std::vector<double>& t) {
      for (double& x : t) x = static_cast<float>(x);
    });
    EXPECT_EQ(back, expect);
  }
}

TEST(Checkpoint, CorruptionRejected) {
  Rng rng(17);
  const std::string bytes = encode_tensors(params_to_tensors(small_params(3, rng)));
  std::string bad = bytes;
  bad[0] = 'Z';
  EXPECT_EQ(error_code([&] { decode_tensors(bad); }), Errc::BadMagic);
  EXPECT_EQ(error_code([&] { decode_tensors(bytes.substr(0, bytes.size() - 3)); }), Errc::CorruptHeader);
  EXPECT_EQ(error_code([&] { decode_tensors(bytes + "x"); }), Errc::CorruptHeader);
}
