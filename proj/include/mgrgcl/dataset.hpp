#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgrgcl/error.hpp"
#include "mgrgcl/feature_map.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

enum class Domain { Source, Target };

struct SampleRecord {
  std::uint32_t sample_id = 0;
  std::optional<std::uint32_t> identity;
  std::uint32_t camera = 0;
  Domain domain = Domain::Source;
  std::uint32_t feature_index = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  std::string feature_file;
  MapShape map_shape;

  std::size_t num_samples() const noexcept { return records.size(); }

  /// Checks the record invariants against a feature file holding `feature_count` maps.
  void validate(std::size_t feature_count) const {
    if (!map_shape.valid()) fail(Errc::InvalidManifest, "map_shape " + map_shape.str() + " has an empty extent");
    std::set<std::uint32_t> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.sample_id).second) fail(Errc::InvalidManifest, "duplicate sample_id " + std::to_string(r.sample_id));
      if (r.feature_index >= feature_count) {
        fail(Errc::InvalidManifest, "sample " + std::to_string(r.sample_id) + " has feature_index " +
                                        std::to_string(r.feature_index) + " but the feature file holds " +
                                        std::to_string(feature_count) + " maps");
      }
      if (r.identity.has_value() != (r.domain == Domain::Source)) {
        fail(Errc::InvalidManifest, "sample " + std::to_string(r.sample_id) + ": identity must be present iff domain is source");
      }
    }
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// A manifest together with the maps its records index into.
struct Dataset {
  DatasetManifest manifest;
  std::vector<FeatureMap> maps;

  std::size_t size() const noexcept { return manifest.records.size(); }
  const FeatureMap& map(std::size_t i) const { return maps.at(manifest.records.at(i).feature_index); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(size());
    for (const auto& r : manifest.records) out.push_back(r.identity ? static_cast<int>(*r.identity) : -1);
    return out;
  }
  std::vector<int> cameras() const {
    std::vector<int> out;
    out.reserve(size());
    for (const auto& r : manifest.records) out.push_back(static_cast<int>(r.camera));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Feature file: "MGRF", u16 version, u32 count, u16 C, u16 H, u16 W (16 bytes),
// then count*C*H*W little-endian float32 values.

inline constexpr std::array<char, 4> kFeatureMagic{'M', 'G', 'R', 'F'};
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 16;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

/// Bounds-checked little-endian cursor over a byte buffer.
class ByteReader {
 public:
  ByteReader(const std::string& bytes, Errc short_read) : bytes_(bytes), short_read_(short_read) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) | (static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(bytes_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail(short_read_, "unexpected end of data");
  }

  const std::string& bytes_;
  Errc short_read_;
  std::size_t pos_ = 0;
};

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::IoError, "write to " + path.string() + " failed");
}

}  // namespace detail

/// Serializes maps into the feature-file byte layout. `shape` is only used when
/// `maps` is empty.
inline std::string encode_feature_file(const std::vector<FeatureMap>& maps, MapShape shape = {1, 1, 1}) {
  if (!maps.empty()) shape = maps.front().shape();
  for (const auto& m : maps) {
    if (m.shape() != shape) fail(Errc::ShapeMismatch, "map of shape " + m.shape().str() + " in a file of shape " + shape.str());
  }
  std::string out;
  out.reserve(kFeatureHeaderBytes + maps.size() * shape.volume() * 4);
  out.append(kFeatureMagic.data(), kFeatureMagic.size());
  detail::put_u16(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(maps.size()));
  detail::put_u16(out, shape.channels);
  detail::put_u16(out, shape.height);
  detail::put_u16(out, shape.width);
  for (const auto& m : maps) {
    for (float v : m.values()) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<FeatureMap> decode_feature_file(const std::string& bytes) {
  if (bytes.size() < kFeatureMagic.size() || std::memcmp(bytes.data(), kFeatureMagic.data(), kFeatureMagic.size()) != 0) {
    fail(Errc::BadMagic, "not a feature file");
  }
  detail::ByteReader in(bytes, Errc::CorruptHeader);
  in.bytes(4);
  const std::uint16_t version = in.u16();
  if (version != kFeatureVersion) fail(Errc::CorruptHeader, "unsupported feature file version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  const std::uint16_t channels = in.u16();
  const std::uint16_t height = in.u16();
  const std::uint16_t width = in.u16();
  const MapShape shape{channels, height, width};
  if (!shape.valid()) fail(Errc::CorruptHeader, "feature file shape " + shape.str() + " has an empty extent");
  const std::uint64_t expected = std::uint64_t{count} * shape.volume() * 4;
  if (expected != in.remaining()) {
    fail(Errc::CorruptHeader, "header promises " + std::to_string(expected) + " payload bytes, file has " + std::to_string(in.remaining()));
  }
  std::vector<FeatureMap> maps;
  maps.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<float> values(shape.volume());
    for (float& v : values) v = in.f32();
    maps.emplace_back(shape, std::move(values));
  }
  return maps;
}

inline void write_feature_file(const std::vector<FeatureMap>& maps, const std::filesystem::path& path, MapShape shape = {1, 1, 1}) {
  detail::write_all(path, encode_feature_file(maps, shape));
}

inline std::vector<FeatureMap> read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(detail::read_all(path));
}

// ---------------------------------------------------------------------------
// Manifest JSON

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    records.push_back({{"sample_id", r.sample_id},
                       {"identity", r.identity ? nlohmann::json(*r.identity) : nlohmann::json(nullptr)},
                       {"camera", r.camera},
                       {"domain", r.domain == Domain::Source ? "source" : "target"},
                       {"feature_index", r.feature_index}});
  }
  return {{"feature_file", m.feature_file},
          {"map_shape", {m.map_shape.channels, m.map_shape.height, m.map_shape.width}},
          {"records", records}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.feature_file = j.at("feature_file").get<std::string>();
    const auto& shape = j.at("map_shape");
    if (!shape.is_array() || shape.size() != 3) fail(Errc::InvalidManifest, "map_shape must be [C,H,W]");
    m.map_shape = {shape[0].get<std::uint16_t>(), shape[1].get<std::uint16_t>(), shape[2].get<std::uint16_t>()};
    for (const auto& rj : j.at("records")) {
      SampleRecord r;
      r.sample_id = rj.at("sample_id").get<std::uint32_t>();
      if (!rj.at("identity").is_null()) r.identity = rj.at("identity").get<std::uint32_t>();
      r.camera = rj.at("camera").get<std::uint32_t>();
      const auto domain = rj.at("domain").get<std::string>();
      if (domain == "source") {
        r.domain = Domain::Source;
      } else if (domain == "target") {
        r.domain = Domain::Target;
      } else {
        fail(Errc::InvalidManifest, "unknown domain '" + domain + "'");
      }
      r.feature_index = rj.at("feature_index").get<std::uint32_t>();
      m.records.push_back(r);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidManifest, e.what());
  }
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  detail::write_all(path, manifest_to_json(m).dump(1) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_all(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::InvalidManifest, path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

/// Loads a manifest and the feature file it names (resolved relative to the
/// manifest's directory), validating the pair.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  std::filesystem::path features = ds.manifest.feature_file;
  if (features.is_relative()) features = manifest_path.parent_path() / features;
  ds.maps = read_feature_file(features);
  if (!ds.maps.empty() && ds.maps.front().shape() != ds.manifest.map_shape) {
    fail(Errc::InvalidManifest, "manifest map_shape " + ds.manifest.map_shape.str() + " disagrees with feature file shape " +
                                    ds.maps.front().shape().str());
  }
  ds.manifest.validate(ds.maps.size());
  return ds;
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.mgrf`.
inline void save_dataset(Dataset& ds, const std::filesystem::path& dir, const std::string& stem) {
  ds.manifest.feature_file = stem + ".mgrf";
  write_feature_file(ds.maps, dir / ds.manifest.feature_file, ds.manifest.map_shape);
  write_manifest(ds.manifest, dir / (stem + ".json"));
}

/// Ground-truth identities for an unlabeled split, kept out of its manifest.
inline void write_truth(const std::vector<int>& identities, const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t i = 0; i < m.records.size(); ++i) labels.push_back({{"sample_id", m.records[i].sample_id}, {"identity", identities.at(i)}});
  detail::write_all(path, nlohmann::json{{"labels", labels}}.dump(1) + "\n");
}

/// Returns identities aligned with the manifest's record order.
inline std::vector<int> read_truth(const DatasetManifest& m, const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(detail::read_all(path));
    std::map<std::uint32_t, int> by_id;
    for (const auto& e : j.at("labels")) by_id[e.at("sample_id").get<std::uint32_t>()] = e.at("identity").get<int>();
    std::vector<int> out;
    for (const auto& r : m.records) {
      auto it = by_id.find(r.sample_id);
      if (it == by_id.end()) fail(Errc::InvalidManifest, "no ground truth for sample " + std::to_string(r.sample_id));
      out.push_back(it->second);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidManifest, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic source/target generator

struct DomainShift {
  double rotation_strength = 0.0;
  double bias_sigma = 0.0;
  double extra_noise_sigma = 0.0;
};

struct SynthConfig {
  int num_identities = 40;
  int samples_per_identity = 12;
  int cameras = 4;
  MapShape map_shape{32, 6, 6};
  double identity_signal_scale = 1.0;
  double part_signal_fraction = 0.7;
  double noise_sigma = 0.5;
  double camera_sigma = 0.2;
  /// Part signatures are drawn from this many shared channel patterns, so the
  /// band location carries identity information that global pooling loses.
  int part_pattern_pool = 3;
  /// Identity signatures and part patterns span a random subspace of this many
  /// channels (0 = all channels); the rest carry only nuisance.
  int identity_rank = 8;
  DomainShift domain_shift{1.0, 0.5, 0.2};
  std::uint64_t seed = 0;

  void validate() const {
    if (num_identities < 2) fail(Errc::InvalidConfig, "synth.num_identities must be >= 2");
    if (samples_per_identity < 2) fail(Errc::InvalidConfig, "synth.samples_per_identity must be >= 2");
    if (cameras < 1) fail(Errc::InvalidConfig, "synth.cameras must be >= 1");
    if (!map_shape.valid()) fail(Errc::InvalidConfig, "synth.map_shape must be positive");
    if (!(part_signal_fraction >= 0.0 && part_signal_fraction <= 1.0)) fail(Errc::InvalidConfig, "synth.part_signal_fraction must lie in [0,1]");
    if (part_pattern_pool < 1) fail(Errc::InvalidConfig, "synth.part_pattern_pool must be >= 1");
    if (identity_rank < 0 || identity_rank > map_shape.channels) fail(Errc::InvalidConfig, "synth.identity_rank must lie in [0, C]");
    for (auto [name, v] : {std::pair{"synth.identity_signal_scale", identity_signal_scale}, std::pair{"synth.noise_sigma", noise_sigma},
                           std::pair{"synth.camera_sigma", camera_sigma},
                           std::pair{"synth.domain_shift.rotation_strength", domain_shift.rotation_strength},
                           std::pair{"synth.domain_shift.bias_sigma", domain_shift.bias_sigma},
                           std::pair{"synth.domain_shift.extra_noise_sigma", domain_shift.extra_noise_sigma}}) {
      if (!(v >= 0.0) || !std::isfinite(v)) fail(Errc::InvalidConfig, std::string(name) + " must be a finite value >= 0");
    }
  }
};

/// Per-identity latent structure used by the generator.
struct IdentitySignature {
  RealVector global;                 // C, spread over every position
  std::vector<std::size_t> rows;     // private row-bands
  std::vector<std::size_t> cols;     // private column-bands
  RealVector row_pattern;            // C, placed on the row-bands
  RealVector col_pattern;            // C, placed on the column-bands
};

struct SyntheticPair {
  Dataset source;
  Dataset target;
  /// Target identities (global label space, disjoint from source) aligned with target records.
  std::vector<int> target_truth;
};

namespace detail {

inline std::vector<std::size_t> pick_bands(Rng& rng, std::size_t extent) {
  const std::size_t count = std::min<std::size_t>(extent, 1 + rng.uniform_index(2));
  std::vector<std::size_t> all(extent);
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

inline RealVector gaussian_vector(Rng& rng, std::size_t n, double sigma = 1.0) {
  RealVector v(n);
  for (double& x : v) x = rng.normal(0.0, sigma);
  return v;
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
inline Matrix random_orthogonal(Rng& rng, std::size_t n) {
  Matrix q(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      RealVector v = gaussian_vector(rng, n);
      for (std::size_t j = 0; j < i; ++j) {
        const double p = dot(v, q.row(j));
        for (std::size_t k = 0; k < n; ++k) v[k] -= p * q(j, k);
      }
      if (l2_norm(v) > 1e-6) {
        const RealVector u = l2_normalize(v);
        std::copy(u.begin(), u.end(), q.row(i).begin());
        break;
      }
    }
  }
  return q;
}

}  // namespace detail

/// Renders one sample of an identity before any domain shift.
inline std::vector<double> render_identity(const SynthConfig& cfg, const IdentitySignature& sig, const std::vector<double>& base,
                                           const std::vector<double>& camera_offset, Rng& noise_rng) {
  const MapShape s = cfg.map_shape;
  const double global_amp = cfg.identity_signal_scale * std::sqrt(1.0 - cfg.part_signal_fraction);
  const double part_amp = cfg.identity_signal_scale * std::sqrt(cfg.part_signal_fraction);
  std::vector<double> x(s.volume());
  std::vector<char> in_row(s.height, 0), in_col(s.width, 0);
  for (auto r : sig.rows) in_row[r] = 1;
  for (auto c : sig.cols) in_col[c] = 1;
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t h = 0; h < s.height; ++h) {
      for (std::size_t w = 0; w < s.width; ++w) {
        const std::size_t i = (c * s.height + h) * s.width + w;
        double v = base[i] + camera_offset[i] + global_amp * sig.global[c];
        if (in_row[h]) v += part_amp * sig.row_pattern[c];
        if (in_col[w]) v += part_amp * sig.col_pattern[c];
        if (cfg.noise_sigma > 0.0) v += noise_rng.normal(0.0, cfg.noise_sigma);
        x[i] = v;
      }
    }
  }
  return x;
}

/// Builds a labeled source domain and an unlabeled, shifted target domain with
/// disjoint identities. Deterministic in `cfg.seed`.
inline SyntheticPair generate_synthetic_pair(const SynthConfig& cfg) {
  cfg.validate();
  const MapShape s = cfg.map_shape;
  const std::size_t C = s.channels;
  Rng root(cfg.seed);
  Rng structure = root.derive(1);

  // Shared by both domains: base pattern, camera offsets, part pattern pool.
  const std::vector<double> base = detail::gaussian_vector(structure, s.volume(), 0.5);
  std::vector<std::vector<double>> cameras;
  for (int k = 0; k < cfg.cameras; ++k) {
    RealVector cam(C);
    for (double& x : cam) x = structure.normal(0.0, cfg.camera_sigma);
    std::vector<double> offset(s.volume());
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = cam[i / (s.height * s.width)];
    cameras.push_back(std::move(offset));
  }
  const std::size_t rank = cfg.identity_rank == 0 ? C : static_cast<std::size_t>(cfg.identity_rank);
  const Matrix basis = detail::random_orthogonal(structure, C);  // first `rank` rows span the identity subspace
  auto subspace_vector = [&]() {
    const RealVector z = detail::gaussian_vector(structure, rank, std::sqrt(static_cast<double>(C) / static_cast<double>(rank)));
    RealVector v(C, 0.0);
    for (std::size_t r = 0; r < rank; ++r) {
      for (std::size_t c = 0; c < C; ++c) v[c] += z[r] * basis(r, c);
    }
    return v;
  };
  std::vector<RealVector> pool;
  for (int k = 0; k < cfg.part_pattern_pool; ++k) pool.push_back(subspace_vector());

  std::vector<IdentitySignature> signatures;
  for (int k = 0; k < 2 * cfg.num_identities; ++k) {
    IdentitySignature sig;
    sig.global = subspace_vector();
    sig.rows = detail::pick_bands(structure, s.height);
    sig.cols = detail::pick_bands(structure, s.width);
    sig.row_pattern = pool[structure.uniform_index(pool.size())];
    sig.col_pattern = pool[structure.uniform_index(pool.size())];
    signatures.push_back(std::move(sig));
  }

  // Target shift: mixing (1-s) I + s Q per position, per-channel bias, extra noise.
  Rng shift_rng = root.derive(2);
  const Matrix q = detail::random_orthogonal(shift_rng, C);
  Matrix mixing(C, C);
  const double rs = cfg.domain_shift.rotation_strength;
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) mixing(i, j) = rs * q(i, j) + (i == j ? 1.0 - rs : 0.0);
  }
  const RealVector bias = detail::gaussian_vector(shift_rng, C, cfg.domain_shift.bias_sigma);

  SyntheticPair pair;
  for (Domain domain : {Domain::Source, Domain::Target}) {
    const bool target = domain == Domain::Target;
    Dataset& ds = target ? pair.target : pair.source;
    ds.manifest.map_shape = s;
    Rng noise_rng = root.derive(target ? 4 : 3);
    std::uint32_t next = 0;
    for (int k = 0; k < cfg.num_identities; ++k) {
      const int identity = target ? cfg.num_identities + k : k;
      for (int j = 0; j < cfg.samples_per_identity; ++j) {
        const int camera = j % cfg.cameras;
        std::vector<double> x = render_identity(cfg, signatures[identity], base, cameras[camera], noise_rng);
        if (target) {
          std::vector<double> shifted(x.size());
          const std::size_t hw = std::size_t{s.height} * s.width;
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t p = 0; p < hw; ++p) {
              double v = bias[c];
              for (std::size_t c2 = 0; c2 < C; ++c2) v += mixing(c, c2) * x[c2 * hw + p];
              if (cfg.domain_shift.extra_noise_sigma > 0.0) v += noise_rng.normal(0.0, cfg.domain_shift.extra_noise_sigma);
              shifted[c * hw + p] = v;
            }
          }
          x = std::move(shifted);
        }
        std::vector<float> values(x.begin(), x.end());
        ds.maps.emplace_back(s, std::move(values));
        SampleRecord r;
        r.sample_id = next;
        r.camera = static_cast<std::uint32_t>(camera);
        r.domain = domain;
        r.feature_index = next;
        if (!target) r.identity = static_cast<std::uint32_t>(identity);
        ds.manifest.records.push_back(r);
        if (target) pair.target_truth.push_back(identity);
        ++next;
      }
    }
  }
  return pair;
}

}  // namespace mgrgcl
