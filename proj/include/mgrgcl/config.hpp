#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgrgcl/clustering.hpp"
#include "mgrgcl/dataset.hpp"
#include "mgrgcl/error.hpp"
#include "mgrgcl/eval.hpp"
#include "mgrgcl/losses.hpp"
#include "mgrgcl/training.hpp"

namespace mgrgcl {

enum class Variant { Full, MgrOnly, MgrNoH, MgrNoHV, OneIter };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::Full, Variant::OneIter, Variant::MgrOnly, Variant::MgrNoH, Variant::MgrNoHV};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::MgrOnly: return "mgr_only";
    case Variant::MgrNoH: return "mgr_no_h";
    case Variant::MgrNoHV: return "mgr_no_hv";
    case Variant::OneIter: return "one_iter";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == s) return v;
  }
  fail(Errc::InvalidConfig, "variant: unknown value '" + s + "'");
}

inline PartLayout variant_layout(Variant v) {
  switch (v) {
    case Variant::MgrNoH: return PartLayout::VerticalOnly;
    case Variant::MgrNoHV: return PartLayout::GlobalOnly;
    default: return PartLayout::Full;
  }
}

/// Whether the variant runs the unsupervised adaptation stage at all.
inline bool variant_adapts(Variant v) { return v == Variant::Full || v == Variant::OneIter; }

inline std::string metric_name(Metric m) { return m == Metric::Euclidean ? "euclidean" : "cosine_distance"; }

inline Metric parse_metric(const std::string& s, const std::string& key) {
  if (s == "euclidean") return Metric::Euclidean;
  if (s == "cosine_distance" || s == "cosine") return Metric::Cosine;
  fail(Errc::InvalidConfig, key + ": unknown metric '" + s + "'");
}

struct ModelConfig {
  int global_dim = 0;  // 0 = channel count
  int part_dim = 0;    // 0 = max(8, C/4)
};

struct MemoryConfig {
  double momentum = 0.2;
  double temperature = 0.2;
};

struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  int supervised_epochs = 40;
  int unsupervised_rounds = 10;
  int iterations_per_round = 100;
  SamplerConfig sampler;
  OptimConfig source_optim;
  OptimConfig target_optim{1e-2, 0.9, 5e-4, 0, {}, 0.1};
  TripletConfig triplet;
  ClusteringConfig clustering;
  MemoryConfig memory;
  EvalProtocol eval;
  bool normalize_features = true;
  bool center_features = true;
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;

  int effective_rounds() const { return variant == Variant::OneIter ? 1 : unsupervised_rounds; }

  void validate() const {
    synth.validate();
    if (model.global_dim < 0) fail(Errc::InvalidConfig, "model.global_dim must be >= 0");
    if (model.part_dim < 0) fail(Errc::InvalidConfig, "model.part_dim must be >= 0");
    if (supervised_epochs < 0) fail(Errc::InvalidConfig, "supervised_epochs must be >= 0");
    if (unsupervised_rounds < 1) fail(Errc::InvalidConfig, "unsupervised_rounds must be >= 1");
    if (iterations_per_round < 1) fail(Errc::InvalidConfig, "iterations_per_round must be >= 1");
    sampler.validate();
    source_optim.validate("source_optim");
    target_optim.validate("target_optim");
    if (!(triplet.margin >= 0.0)) fail(Errc::InvalidConfig, "triplet.margin must be >= 0");
    clustering.validate();
    if (!(memory.momentum >= 0.0 && memory.momentum <= 1.0)) fail(Errc::InvalidConfig, "memory.momentum must lie in [0,1]");
    if (!(memory.temperature > 0.0)) fail(Errc::InvalidConfig, "memory.temperature must be > 0");
    eval.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json optim_to_json(const OptimConfig& o) {
  return {{"lr0", o.lr0},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"warmup_epochs", o.warmup_epochs},
          {"decay_epochs", o.decay_epochs},
          {"decay_factor", o.decay_factor}};
}

inline OptimConfig optim_from_json(const nlohmann::json& j) {
  OptimConfig o;
  o.lr0 = j.at("lr0").get<double>();
  o.momentum = j.at("momentum").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.warmup_epochs = j.at("warmup_epochs").get<int>();
  o.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  o.decay_factor = j.at("decay_factor").get<double>();
  return o;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.synth;
  return {
      {"seed", c.seed},
      {"variant", variant_name(c.variant)},
      {"supervised_epochs", c.supervised_epochs},
      {"unsupervised_rounds", c.unsupervised_rounds},
      {"iterations_per_round", c.iterations_per_round},
      {"normalize_features", c.normalize_features},
      {"center_features", c.center_features},
      {"synth",
       {{"num_identities", s.num_identities},
        {"samples_per_identity", s.samples_per_identity},
        {"cameras", s.cameras},
        {"map_shape", {s.map_shape.channels, s.map_shape.height, s.map_shape.width}},
        {"identity_signal_scale", s.identity_signal_scale},
        {"part_signal_fraction", s.part_signal_fraction},
        {"noise_sigma", s.noise_sigma},
        {"camera_sigma", s.camera_sigma},
        {"part_pattern_pool", s.part_pattern_pool},
        {"identity_rank", s.identity_rank},
        {"domain_shift",
         {{"rotation_strength", s.domain_shift.rotation_strength},
          {"bias_sigma", s.domain_shift.bias_sigma},
          {"extra_noise_sigma", s.domain_shift.extra_noise_sigma}}},
        {"seed", s.seed}}},
      {"model", {{"global_dim", c.model.global_dim}, {"part_dim", c.model.part_dim}}},
      {"sampler", {{"P", c.sampler.P}, {"K", c.sampler.K}}},
      {"source_optim", optim_to_json(c.source_optim)},
      {"target_optim", optim_to_json(c.target_optim)},
      {"triplet", {{"margin", c.triplet.margin}}},
      {"clustering", {{"eps", c.clustering.eps}, {"min_pts", c.clustering.min_pts}, {"metric", metric_name(c.clustering.metric)}}},
      {"memory", {{"momentum", c.memory.momentum}, {"temperature", c.memory.temperature}}},
      {"eval",
       {{"exclude_same_camera_same_id", c.eval.exclude_same_camera_same_id},
        {"ranks", c.eval.ranks},
        {"metric", metric_name(c.eval.metric)},
        {"queries_per_identity", c.eval.queries_per_identity}}},
  };
}

namespace detail {

/// Overlays `user` onto `base`, rejecting keys `base` does not know and
/// values whose JSON kind differs. Arrays replace wholesale.
inline void overlay(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) fail(Errc::InvalidConfig, (path.empty() ? "config" : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) fail(Errc::InvalidConfig, key + ": unknown key");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
      continue;
    }
    const bool both_numbers = slot.is_number() && it.value().is_number();
    if (!both_numbers && slot.type() != it.value().type()) fail(Errc::InvalidConfig, key + ": expected " + std::string(slot.type_name()));
    slot = it.value();
  }
}

}  // namespace detail

inline RunConfig from_json(const nlohmann::json& user) {
  nlohmann::json j = to_json(RunConfig{});
  detail::overlay(j, user, "");
  auto field = [&j](const char* section, const char* key) -> const nlohmann::json& { return j.at(section).at(key); };
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.supervised_epochs = j.at("supervised_epochs").get<int>();
    c.unsupervised_rounds = j.at("unsupervised_rounds").get<int>();
    c.iterations_per_round = j.at("iterations_per_round").get<int>();
    c.normalize_features = j.at("normalize_features").get<bool>();
    c.center_features = j.at("center_features").get<bool>();
    const auto& s = j.at("synth");
    c.synth.num_identities = s.at("num_identities").get<int>();
    c.synth.samples_per_identity = s.at("samples_per_identity").get<int>();
    c.synth.cameras = s.at("cameras").get<int>();
    const auto& shape = s.at("map_shape");
    if (!shape.is_array() || shape.size() != 3) fail(Errc::InvalidConfig, "synth.map_shape: expected [C,H,W]");
    c.synth.map_shape = {shape[0].get<std::uint16_t>(), shape[1].get<std::uint16_t>(), shape[2].get<std::uint16_t>()};
    c.synth.identity_signal_scale = s.at("identity_signal_scale").get<double>();
    c.synth.part_signal_fraction = s.at("part_signal_fraction").get<double>();
    c.synth.noise_sigma = s.at("noise_sigma").get<double>();
    c.synth.camera_sigma = s.at("camera_sigma").get<double>();
    c.synth.part_pattern_pool = s.at("part_pattern_pool").get<int>();
    c.synth.identity_rank = s.at("identity_rank").get<int>();
    c.synth.domain_shift.rotation_strength = s.at("domain_shift").at("rotation_strength").get<double>();
    c.synth.domain_shift.bias_sigma = s.at("domain_shift").at("bias_sigma").get<double>();
    c.synth.domain_shift.extra_noise_sigma = s.at("domain_shift").at("extra_noise_sigma").get<double>();
    c.synth.seed = s.at("seed").get<std::uint64_t>();
    c.model.global_dim = field("model", "global_dim").get<int>();
    c.model.part_dim = field("model", "part_dim").get<int>();
    c.sampler.P = field("sampler", "P").get<int>();
    c.sampler.K = field("sampler", "K").get<int>();
    c.source_optim = optim_from_json(j.at("source_optim"));
    c.target_optim = optim_from_json(j.at("target_optim"));
    c.triplet.margin = field("triplet", "margin").get<double>();
    c.clustering.eps = field("clustering", "eps").get<double>();
    c.clustering.min_pts = field("clustering", "min_pts").get<int>();
    c.clustering.metric = parse_metric(field("clustering", "metric").get<std::string>(), "clustering.metric");
    c.memory.momentum = field("memory", "momentum").get<double>();
    c.memory.temperature = field("memory", "temperature").get<double>();
    c.eval.exclude_same_camera_same_id = field("eval", "exclude_same_camera_same_id").get<bool>();
    c.eval.ranks = field("eval", "ranks").get<std::vector<int>>();
    c.eval.metric = parse_metric(field("eval", "metric").get<std::string>(), "eval.metric");
    c.eval.queries_per_identity = field("eval", "queries_per_identity").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

/// Applies `a.b.c=value` overrides to a config document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(Errc::InvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot_pos = key.find('.', start);
    const std::string part = key.substr(start, dot_pos == std::string::npos ? std::string::npos : dot_pos - start);
    if (part.empty()) fail(Errc::InvalidConfig, key + ": empty path component");
    if (dot_pos == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    if (!node->is_object()) fail(Errc::InvalidConfig, key + ": '" + part + "' is not a section");
    start = dot_pos + 1;
  }
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::string text;
    try {
      text = detail::read_all(path);
    } catch (const Error& e) {
      fail(Errc::InvalidConfig, e.what());
    }
    doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) fail(Errc::InvalidConfig, path.string() + ": not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

}  // namespace mgrgcl
