#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgrgcl/dataset.hpp"
#include "mgrgcl/error.hpp"
#include "mgrgcl/feature_map.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

// ---------------------------------------------------------------------------
// Pooling and partitioning

enum class Axis {
  Vertical,    // splits the height extent into row stripes
  Horizontal,  // splits the width extent into column stripes
};

/// Half-open [begin, end) bounds of stripe `index` when `extent` is cut into
/// `parts` pieces; the first (extent % parts) stripes are one longer.
inline std::pair<std::size_t, std::size_t> stripe_bounds(std::size_t extent, std::size_t parts, std::size_t index) {
  if (parts == 0 || extent < parts) {
    fail(Errc::TooManyParts, "cannot cut extent " + std::to_string(extent) + " into " + std::to_string(parts) + " stripes");
  }
  const std::size_t base = extent / parts;
  const std::size_t extra = extent % parts;
  const std::size_t begin = index * base + std::min(index, extra);
  return {begin, begin + base + (index < extra ? 1 : 0)};
}

struct Region {
  std::size_t h0, h1, w0, w1;
};

inline Region stripe_region(const MapShape& shape, Axis axis, std::size_t parts, std::size_t index) {
  if (axis == Axis::Vertical) {
    auto [b, e] = stripe_bounds(shape.height, parts, index);
    return {b, e, 0, shape.width};
  }
  auto [b, e] = stripe_bounds(shape.width, parts, index);
  return {0, shape.height, b, e};
}

inline std::vector<FeatureMap> partition(const FeatureMap& map, Axis axis, std::size_t parts) {
  std::vector<FeatureMap> out;
  for (std::size_t p = 0; p < parts; ++p) {
    const Region r = stripe_region(map.shape(), axis, parts, p);
    FeatureMap stripe(MapShape{map.shape().channels, static_cast<std::uint16_t>(r.h1 - r.h0), static_cast<std::uint16_t>(r.w1 - r.w0)});
    for (std::size_t c = 0; c < map.channels(); ++c) {
      for (std::size_t h = r.h0; h < r.h1; ++h) {
        for (std::size_t w = r.w0; w < r.w1; ++w) stripe.at(c, h - r.h0, w - r.w0) = map.at(c, h, w);
      }
    }
    out.push_back(std::move(stripe));
  }
  return out;
}

/// Channelwise max over a region. `argmax` (optional) receives the flat map
/// index of the first maximum in row-major (h, w) scan order.
inline RealVector max_pool_region(const FeatureMap& map, const Region& r, std::vector<std::size_t>* argmax = nullptr) {
  RealVector out(map.channels());
  if (argmax) argmax->assign(map.channels(), 0);
  for (std::size_t c = 0; c < map.channels(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t where = map.index(c, r.h0, r.w0);
    for (std::size_t h = r.h0; h < r.h1; ++h) {
      for (std::size_t w = r.w0; w < r.w1; ++w) {
        const double v = map.at(c, h, w);
        if (v > best) {
          best = v;
          where = map.index(c, h, w);
        }
      }
    }
    out[c] = best;
    if (argmax) (*argmax)[c] = where;
  }
  return out;
}

inline RealVector global_max_pool(const FeatureMap& map) {
  return max_pool_region(map, {0, map.height(), 0, map.width()});
}

// ---------------------------------------------------------------------------
// Part layout

enum class PartLayout {
  Full,          // vertical and horizontal parts (10)
  VerticalOnly,  // vertical parts only (5)
  GlobalOnly,    // no parts
};

struct PartSpec {
  const char* name;
  Axis axis;
  std::size_t parts;
  std::size_t index;
};

/// Order of S_l; also the order inside the mega feature.
inline constexpr std::array<PartSpec, 10> kParts{{
    {"mv1", Axis::Vertical, 2, 0},
    {"mv2", Axis::Vertical, 2, 1},
    {"lv1", Axis::Vertical, 3, 0},
    {"lv2", Axis::Vertical, 3, 1},
    {"lv3", Axis::Vertical, 3, 2},
    {"mh1", Axis::Horizontal, 2, 0},
    {"mh2", Axis::Horizontal, 2, 1},
    {"lh1", Axis::Horizontal, 3, 0},
    {"lh2", Axis::Horizontal, 3, 1},
    {"lh3", Axis::Horizontal, 3, 2},
}};

inline constexpr std::array<const char*, 3> kBranches{"global", "middle", "lower"};

inline std::size_t part_count(PartLayout layout) {
  switch (layout) {
    case PartLayout::Full: return 10;
    case PartLayout::VerticalOnly: return 5;
    case PartLayout::GlobalOnly: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Parameters

/// y = W x (+ b).
struct Linear {
  Matrix weight;  // out x in
  RealVector bias;  // empty when the layer has no bias

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }

  RealVector apply(std::span<const double> x) const {
    RealVector y(out());
    for (std::size_t o = 0; o < out(); ++o) y[o] = dot(weight.row(o), x) + (bias.empty() ? 0.0 : bias[o]);
    return y;
  }

  Linear zeros_like() const {
    Linear z;
    z.weight = Matrix(weight.rows(), weight.cols());
    z.bias.assign(bias.size(), 0.0);
    return z;
  }

  friend bool operator==(const Linear&, const Linear&) = default;
};

struct MGRParams {
  std::size_t channels = 0;
  std::size_t global_dim = 0;
  std::size_t part_dim = 0;
  std::size_t num_classes = 0;
  PartLayout layout = PartLayout::Full;
  std::array<Linear, 3> adapters;    // Global, Middle, Lower; C -> d_g
  std::vector<Linear> reducers;      // one per active part; C -> d_p, followed by ReLU
  std::vector<Linear> classifiers;   // one per active part; d_p -> num_classes, no bias (absent if num_classes == 0)

  std::size_t num_parts() const noexcept { return reducers.size(); }
  std::size_t mega_dim() const noexcept { return 3 * global_dim + num_parts() * part_dim; }

  /// Seeded uniform init: adapters and reducers in +-1/sqrt(C), classifiers in
  /// +-1/sqrt(d_p), biases zero.
  static MGRParams init(std::size_t channels, std::size_t global_dim, std::size_t part_dim, std::size_t num_classes,
                        PartLayout layout, Rng& rng) {
    if (channels == 0 || global_dim == 0 || part_dim == 0) fail(Errc::InvalidConfig, "MGR dimensions must be positive");
    MGRParams p;
    p.channels = channels;
    p.global_dim = global_dim;
    p.part_dim = part_dim;
    p.num_classes = num_classes;
    p.layout = layout;
    auto uniform = [&rng](std::size_t rows, std::size_t cols, double bound) {
      Matrix m(rows, cols);
      for (double& x : m.data()) x = rng.uniform(-bound, bound);
      return m;
    };
    const double in_bound = 1.0 / std::sqrt(static_cast<double>(channels));
    for (auto& a : p.adapters) a = Linear{uniform(global_dim, channels, in_bound), RealVector(global_dim, 0.0)};
    for (std::size_t j = 0; j < part_count(layout); ++j) p.reducers.push_back(Linear{uniform(part_dim, channels, in_bound), RealVector(part_dim, 0.0)});
    if (num_classes > 0) {
      const double cls_bound = 1.0 / std::sqrt(static_cast<double>(part_dim));
      for (std::size_t j = 0; j < part_count(layout); ++j) p.classifiers.push_back(Linear{uniform(num_classes, part_dim, cls_bound), {}});
    }
    return p;
  }

  MGRParams zeros_like() const {
    MGRParams z = *this;
    for (auto& a : z.adapters) a = a.zeros_like();
    for (auto& r : z.reducers) r = r.zeros_like();
    for (auto& c : z.classifiers) c = c.zeros_like();
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<MGRParams*>(this)->for_each_tensor([&n](const std::string&, std::vector<double>& t) { n += t.size(); });
    return n;
  }

  /// Visits every learnable tensor under a stable name, in a fixed order.
  void for_each_tensor(const std::function<void(const std::string&, std::vector<double>&)>& fn) {
    for (std::size_t b = 0; b < 3; ++b) {
      fn(std::string("adapter.") + kBranches[b] + ".weight", adapters[b].weight.data());
      fn(std::string("adapter.") + kBranches[b] + ".bias", adapters[b].bias);
    }
    for (std::size_t j = 0; j < reducers.size(); ++j) {
      fn(std::string("reducer.") + kParts[j].name + ".weight", reducers[j].weight.data());
      fn(std::string("reducer.") + kParts[j].name + ".bias", reducers[j].bias);
    }
    for (std::size_t j = 0; j < classifiers.size(); ++j) fn(std::string("classifier.") + kParts[j].name + ".weight", classifiers[j].weight.data());
  }

  /// Shape fingerprint; a forward cache is only valid for params with the same one.
  std::vector<std::size_t> signature() const {
    return {channels, global_dim, part_dim, num_classes, static_cast<std::size_t>(layout), reducers.size(), classifiers.size()};
  }

  friend bool operator==(const MGRParams&, const MGRParams&) = default;
};

inline std::size_t default_part_dim(std::size_t channels) { return std::max<std::size_t>(8, channels / 4); }

// ---------------------------------------------------------------------------
// Forward / backward

struct MGRDescriptor {
  std::array<RealVector, 3> global;  // S_g: v^g, v^m, v^l
  std::vector<RealVector> local;     // S_l in kParts order

  /// S_g then S_l, concatenated.
  RealVector mega() const {
    RealVector out;
    for (const auto& g : global) out.insert(out.end(), g.begin(), g.end());
    for (const auto& p : local) out.insert(out.end(), p.begin(), p.end());
    return out;
  }
};

inline void check_map(const FeatureMap& map, const MGRParams& params) {
  if (map.channels() != params.channels) {
    fail(Errc::ShapeMismatch, "map has " + std::to_string(map.channels()) + " channels, model expects " + std::to_string(params.channels));
  }
}

inline MGRDescriptor forward(const FeatureMap& map, const MGRParams& params) {
  check_map(map, params);
  MGRDescriptor d;
  const RealVector pooled = global_max_pool(map);
  for (std::size_t b = 0; b < 3; ++b) d.global[b] = params.adapters[b].apply(pooled);
  for (std::size_t j = 0; j < params.num_parts(); ++j) {
    const PartSpec& spec = kParts[j];
    RealVector p = params.reducers[j].apply(max_pool_region(map, stripe_region(map.shape(), spec.axis, spec.parts, spec.index)));
    for (double& x : p) x = std::max(0.0, x);
    d.local.push_back(std::move(p));
  }
  return d;
}

struct SampleCache {
  MapShape shape;
  RealVector pooled;                       // GMP of the whole map
  std::vector<std::size_t> pooled_argmax;
  std::vector<RealVector> part_pooled;     // GMP per part stripe
  std::vector<std::vector<std::size_t>> part_argmax;
  std::vector<std::vector<char>> relu_mask;
};

struct ForwardCache {
  std::vector<std::size_t> param_signature;
  std::vector<SampleCache> samples;
};

/// Batch outputs laid out as matrices (row i = sample i).
struct BatchOutput {
  std::array<Matrix, 3> global;   // n x d_g each
  std::vector<Matrix> local;      // n x d_p per part
  std::vector<Matrix> logits;     // n x num_classes per part (empty if no classifiers)
  ForwardCache cache;

  std::size_t batch_size() const noexcept { return global[0].rows(); }

  MGRDescriptor descriptor(std::size_t i) const {
    MGRDescriptor d;
    for (std::size_t b = 0; b < 3; ++b) d.global[b].assign(global[b].row(i).begin(), global[b].row(i).end());
    for (const auto& l : local) d.local.emplace_back(l.row(i).begin(), l.row(i).end());
    return d;
  }

  Matrix mega() const {
    const std::size_t n = batch_size();
    std::size_t dim = 0;
    for (const auto& g : global) dim += g.cols();
    for (const auto& l : local) dim += l.cols();
    Matrix out(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t off = 0;
      auto put = [&](const Matrix& m) {
        for (std::size_t k = 0; k < m.cols(); ++k) out(i, off + k) = m(i, k);
        off += m.cols();
      };
      for (const auto& g : global) put(g);
      for (const auto& l : local) put(l);
    }
    return out;
  }
};

inline BatchOutput forward_batch(const std::vector<const FeatureMap*>& maps, const MGRParams& params) {
  const std::size_t n = maps.size();
  const std::size_t parts = params.num_parts();
  BatchOutput out;
  for (auto& g : out.global) g = Matrix(n, params.global_dim);
  out.local.assign(parts, Matrix(n, params.part_dim));
  if (!params.classifiers.empty()) out.logits.assign(parts, Matrix(n, params.num_classes));
  out.cache.param_signature = params.signature();
  out.cache.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const FeatureMap& map = *maps[i];
    check_map(map, params);
    SampleCache& sc = out.cache.samples[i];
    sc.shape = map.shape();
    sc.pooled = max_pool_region(map, {0, map.height(), 0, map.width()}, &sc.pooled_argmax);
    for (std::size_t b = 0; b < 3; ++b) {
      const RealVector v = params.adapters[b].apply(sc.pooled);
      std::copy(v.begin(), v.end(), out.global[b].row(i).begin());
    }
    sc.part_pooled.resize(parts);
    sc.part_argmax.resize(parts);
    sc.relu_mask.resize(parts);
    for (std::size_t j = 0; j < parts; ++j) {
      const PartSpec& spec = kParts[j];
      sc.part_pooled[j] = max_pool_region(map, stripe_region(map.shape(), spec.axis, spec.parts, spec.index), &sc.part_argmax[j]);
      RealVector p = params.reducers[j].apply(sc.part_pooled[j]);
      sc.relu_mask[j].resize(p.size());
      for (std::size_t k = 0; k < p.size(); ++k) {
        sc.relu_mask[j][k] = p[k] > 0.0;
        p[k] = sc.relu_mask[j][k] ? p[k] : 0.0;
      }
      std::copy(p.begin(), p.end(), out.local[j].row(i).begin());
      if (!params.classifiers.empty()) {
        const RealVector z = params.classifiers[j].apply(p);
        std::copy(z.begin(), z.end(), out.logits[j].row(i).begin());
      }
    }
  }
  return out;
}

inline BatchOutput forward_batch(const std::vector<FeatureMap>& maps, const MGRParams& params) {
  std::vector<const FeatureMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return forward_batch(ptrs, params);
}

/// Gradients arriving at the model outputs. Empty matrices stand for zero.
struct UpstreamGrad {
  std::array<Matrix, 3> global;
  std::vector<Matrix> local;
  std::vector<Matrix> logits;
};

struct BackwardResult {
  MGRParams grads;
  /// d loss / d input map, one flat (c,h,w) vector per sample; filled only on request.
  std::vector<std::vector<double>> input_grads;
};

/// Exact gradients of a loss whose output gradients are `up`. Max pooling routes
/// to the recorded argmax; ReLU gates by its mask. Per-sample contributions are
/// accumulated in batch order.
inline BackwardResult backward(const ForwardCache& cache, const UpstreamGrad& up, const MGRParams& params, bool want_input_grads = false) {
  if (cache.param_signature != params.signature()) fail(Errc::StaleCache, "parameter shapes changed since forward_batch");
  const std::size_t n = cache.samples.size();
  const std::size_t parts = params.num_parts();
  auto rows_ok = [n](const Matrix& m, std::size_t cols) { return m.empty() || (m.rows() == n && m.cols() == cols); };
  for (const auto& g : up.global) {
    if (!rows_ok(g, params.global_dim)) fail(Errc::ShapeMismatch, "global upstream gradient shape");
  }
  if (!up.local.empty() && up.local.size() != parts) fail(Errc::ShapeMismatch, "local upstream gradient count");
  for (const auto& l : up.local) {
    if (!rows_ok(l, params.part_dim)) fail(Errc::ShapeMismatch, "local upstream gradient shape");
  }
  if (!up.logits.empty() && (up.logits.size() != parts || params.classifiers.empty())) fail(Errc::ShapeMismatch, "logit upstream gradient count");
  for (const auto& z : up.logits) {
    if (!rows_ok(z, params.num_classes)) fail(Errc::ShapeMismatch, "logit upstream gradient shape");
  }

  BackwardResult res;
  res.grads = params.zeros_like();
  if (want_input_grads) res.input_grads.resize(n);
  const std::size_t C = params.channels;

  for (std::size_t i = 0; i < n; ++i) {
    const SampleCache& sc = cache.samples[i];
    std::vector<double>* gin = nullptr;
    if (want_input_grads) {
      res.input_grads[i].assign(sc.shape.volume(), 0.0);
      gin = &res.input_grads[i];
    }
    RealVector d_pooled(C, 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
      if (up.global[b].empty()) continue;
      const auto g = up.global[b].row(i);
      Linear& G = res.grads.adapters[b];
      const Linear& A = params.adapters[b];
      for (std::size_t o = 0; o < A.out(); ++o) {
        if (g[o] == 0.0) continue;
        G.bias[o] += g[o];
        for (std::size_t c = 0; c < C; ++c) {
          G.weight(o, c) += g[o] * sc.pooled[c];
          d_pooled[c] += g[o] * A.weight(o, c);
        }
      }
    }
    if (gin) {
      for (std::size_t c = 0; c < C; ++c) (*gin)[sc.pooled_argmax[c]] += d_pooled[c];
    }
    for (std::size_t j = 0; j < parts; ++j) {
      RealVector delta(params.part_dim, 0.0);
      if (!up.local.empty() && !up.local[j].empty()) {
        const auto l = up.local[j].row(i);
        for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = l[k];
      }
      if (!up.logits.empty() && !up.logits[j].empty()) {
        const auto z = up.logits[j].row(i);
        const Linear& W = params.classifiers[j];
        Linear& GW = res.grads.classifiers[j];
        // Post-ReLU part feature, rebuilt from the cached mask.
        RealVector p = params.reducers[j].apply(sc.part_pooled[j]);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = sc.relu_mask[j][k] ? p[k] : 0.0;
        for (std::size_t o = 0; o < W.out(); ++o) {
          if (z[o] == 0.0) continue;
          for (std::size_t k = 0; k < W.in(); ++k) {
            GW.weight(o, k) += z[o] * p[k];
            delta[k] += z[o] * W.weight(o, k);
          }
        }
      }
      RealVector d_part(C, 0.0);
      const Linear& R = params.reducers[j];
      Linear& GR = res.grads.reducers[j];
      for (std::size_t k = 0; k < delta.size(); ++k) {
        if (!sc.relu_mask[j][k] || delta[k] == 0.0) continue;
        GR.bias[k] += delta[k];
        for (std::size_t c = 0; c < C; ++c) {
          GR.weight(k, c) += delta[k] * sc.part_pooled[j][c];
          d_part[c] += delta[k] * R.weight(k, c);
        }
      }
      if (gin) {
        for (std::size_t c = 0; c < C; ++c) (*gin)[sc.part_argmax[j][c]] += d_part[c];
      }
    }
  }
  return res;
}

/// Splits a gradient on the mega feature (n x mega_dim) into per-output pieces.
inline UpstreamGrad split_mega_grad(const Matrix& mega_grad, const MGRParams& params) {
  if (mega_grad.cols() != params.mega_dim()) fail(Errc::ShapeMismatch, "mega gradient has " + std::to_string(mega_grad.cols()) + " columns");
  const std::size_t n = mega_grad.rows();
  UpstreamGrad up;
  std::size_t off = 0;
  auto take = [&](std::size_t width) {
    Matrix m(n, width);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < width; ++k) m(i, k) = mega_grad(i, off + k);
    }
    off += width;
    return m;
  };
  for (auto& g : up.global) g = take(params.global_dim);
  for (std::size_t j = 0; j < params.num_parts(); ++j) up.local.push_back(take(params.part_dim));
  return up;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MGRP", u32 version, u32 tensor count, then per tensor
// u16 name length, name bytes, u8 rank, u32 dims, float32 payload.

inline constexpr std::array<char, 4> kCheckpointMagic{'M', 'G', 'R', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t volume = 1;
    for (auto d : t.dims) volume *= d;
    if (volume != t.values.size()) fail(Errc::ShapeMismatch, "tensor " + t.name + " dims disagree with payload");
    detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    for (float v : t.values) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<NamedTensor> decode_tensors(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) fail(Errc::BadMagic, "not a checkpoint file");
  detail::ByteReader in(bytes, Errc::CorruptHeader);
  in.bytes(4);
  if (const auto v = in.u32(); v != kCheckpointVersion) fail(Errc::CorruptHeader, "unsupported checkpoint version " + std::to_string(v));
  const std::uint32_t count = in.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    nt.name = in.bytes(in.u16());
    const std::uint8_t rank = in.u8();
    std::size_t volume = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      nt.dims.push_back(in.u32());
      volume *= nt.dims.back();
    }
    if (volume * 4 > in.remaining()) fail(Errc::CorruptHeader, "tensor " + nt.name + " payload truncated");
    nt.values.resize(volume);
    for (float& v : nt.values) v = in.f32();
    out.push_back(std::move(nt));
  }
  if (in.remaining() != 0) fail(Errc::CorruptHeader, "trailing bytes after last tensor");
  return out;
}

inline std::vector<NamedTensor> params_to_tensors(const MGRParams& params) {
  std::vector<NamedTensor> out;
  MGRParams& p = const_cast<MGRParams&>(params);
  p.for_each_tensor([&out, &params](const std::string& name, std::vector<double>& data) {
    NamedTensor t;
    t.name = name;
    if (name.ends_with(".bias")) {
      t.dims = {static_cast<std::uint32_t>(data.size())};
    } else {
      const std::size_t cols = name.starts_with("classifier.") ? params.part_dim : params.channels;
      t.dims = {static_cast<std::uint32_t>(data.size() / cols), static_cast<std::uint32_t>(cols)};
    }
    t.values.assign(data.begin(), data.end());
    out.push_back(std::move(t));
  });
  return out;
}

/// Rebuilds params from a tensor table; extra tensors (e.g. a memory dump) are ignored.
inline MGRParams params_from_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&by_name](const std::string& name) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(Errc::CorruptHeader, "checkpoint lacks tensor " + name);
    return *it->second;
  };
  const NamedTensor& a0 = get("adapter.global.weight");
  if (a0.dims.size() != 2) fail(Errc::CorruptHeader, "adapter weight must be rank 2");
  MGRParams p;
  p.global_dim = a0.dims[0];
  p.channels = a0.dims[1];
  std::size_t parts = 0;
  while (parts < kParts.size() && by_name.count(std::string("reducer.") + kParts[parts].name + ".weight")) ++parts;
  if (parts == 10) {
    p.layout = PartLayout::Full;
  } else if (parts == 5) {
    p.layout = PartLayout::VerticalOnly;
  } else if (parts == 0) {
    p.layout = PartLayout::GlobalOnly;
  } else {
    fail(Errc::CorruptHeader, "checkpoint holds " + std::to_string(parts) + " part reducers");
  }
  if (parts > 0) p.part_dim = get("reducer.mv1.weight").dims.at(0);
  if (parts > 0 && by_name.count("classifier.mv1.weight")) p.num_classes = get("classifier.mv1.weight").dims.at(0);
  if (p.part_dim == 0) p.part_dim = default_part_dim(p.channels);
  for (auto& a : p.adapters) a = Linear{Matrix(p.global_dim, p.channels), RealVector(p.global_dim)};
  for (std::size_t j = 0; j < parts; ++j) p.reducers.push_back(Linear{Matrix(p.part_dim, p.channels), RealVector(p.part_dim)});
  if (p.num_classes > 0) {
    for (std::size_t j = 0; j < parts; ++j) p.classifiers.push_back(Linear{Matrix(p.num_classes, p.part_dim), {}});
  }
  p.for_each_tensor([&get](const std::string& name, std::vector<double>& data) {
    const NamedTensor& t = get(name);
    if (t.values.size() != data.size()) fail(Errc::CorruptHeader, "tensor " + name + " has unexpected size");
    std::copy(t.values.begin(), t.values.end(), data.begin());
  });
  return p;
}

inline void write_checkpoint(const MGRParams& params, const std::filesystem::path& path, std::vector<NamedTensor> extra = {}) {
  auto tensors = params_to_tensors(params);
  for (auto& t : extra) tensors.push_back(std::move(t));
  detail::write_all(path, encode_tensors(tensors));
}

inline MGRParams read_checkpoint(const std::filesystem::path& path) {
  return params_from_tensors(decode_tensors(detail::read_all(path)));
}

}  // namespace mgrgcl
