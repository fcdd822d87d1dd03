#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgrgcl/clustering.hpp"
#include "mgrgcl/config.hpp"
#include "mgrgcl/dataset.hpp"
#include "mgrgcl/eval.hpp"
#include "mgrgcl/losses.hpp"
#include "mgrgcl/memory.hpp"
#include "mgrgcl/mgr.hpp"
#include "mgrgcl/training.hpp"

namespace mgrgcl {

/// Maps arbitrary identity labels to 0..k-1 in ascending label order.
inline std::vector<int> contiguous_classes(const std::vector<int>& labels, int* num_classes = nullptr) {
  std::map<int, int> index;
  for (int l : labels) index.emplace(l, 0);
  int next = 0;
  for (auto& [_, v] : index) v = next++;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(index.at(l));
  if (num_classes) *num_classes = next;
  return out;
}

inline MGRParams make_params(const RunConfig& cfg, std::size_t channels, std::size_t num_classes, PartLayout layout, Rng& rng) {
  const std::size_t gd = cfg.model.global_dim > 0 ? static_cast<std::size_t>(cfg.model.global_dim) : channels;
  const std::size_t pd = cfg.model.part_dim > 0 ? static_cast<std::size_t>(cfg.model.part_dim) : default_part_dim(channels);
  return MGRParams::init(channels, gd, pd, num_classes, layout, rng);
}

inline std::vector<const FeatureMap*> gather_maps(const Dataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<const FeatureMap*> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(&ds.map(r));
  return out;
}

inline std::vector<const FeatureMap*> all_maps(const Dataset& ds) {
  std::vector<const FeatureMap*> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(&ds.map(i));
  return out;
}

struct SourceLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> batch_loss;  // every batch, in order
};

/// Supervised source stage: P x K batches, triplet + identity loss, SGD.
inline SourceLog train_source(const Dataset& source, MGRParams& params, const RunConfig& cfg, Rng& rng) {
  SourceLog log;
  if (cfg.supervised_epochs == 0) return log;
  std::vector<int> raw = source.labels();
  for (int l : raw) {
    if (l < 0) fail(Errc::InvalidManifest, "source stage requires labeled records");
  }
  const std::vector<int> classes = contiguous_classes(raw);
  const std::size_t per_batch = static_cast<std::size_t>(cfg.sampler.P) * cfg.sampler.K;
  const std::size_t batches = (source.size() + per_batch - 1) / per_batch;
  SgdState state;
  for (int epoch = 0; epoch < cfg.supervised_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.source_optim);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto rows = pk_sample(classes, cfg.sampler, rng);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(classes[r]);
      const BatchOutput out = forward_batch(gather_maps(source, rows), params);
      SupervisedLoss loss;
      try {
        loss = supervised_loss(out, labels, cfg.triplet);
      } catch (const Error& e) {
        std::string comp;
        for (int l : labels) comp += std::to_string(l) + " ";
        throw Error(e.code(), std::string(e.what()) + " [batch labels: " + comp + "]");
      }
      const BackwardResult grads = backward(out.cache, loss.grad, params);
      sgd_step(params, grads.grads, state, lr, cfg.source_optim);
      log.batch_loss.push_back(loss.total);
      sum += loss.total;
    }
    log.epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  return log;
}

/// One mega feature per map (row i <- maps[i]), optionally L2-normalized.
inline Matrix extract_mega_features(const std::vector<const FeatureMap*>& maps, const MGRParams& params, bool normalize = true) {
  Matrix out(maps.size(), params.mega_dim());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    RealVector f = forward(*maps[i], params).mega();
    if (normalize) f = l2_normalize(f);
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix extract_mega_features(const Dataset& ds, const MGRParams& params, bool normalize = true) {
  return extract_mega_features(all_maps(ds), params, normalize);
}

/// Column means of a feature matrix.
inline RealVector column_mean(const Matrix& m) {
  RealVector mu(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < m.cols(); ++k) mu[k] += m(i, k);
  }
  for (double& x : mu) x /= static_cast<double>(std::max<std::size_t>(1, m.rows()));
  return mu;
}

inline void subtract_row_vector(Matrix& m, std::span<const double> v) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < m.cols(); ++k) m(i, k) -= v[k];
  }
}

/// Features as the pipeline compares them: mega features, optionally centered on
/// the set mean, then optionally L2-normalized.
struct Embedding {
  Matrix features;
  RealVector center;  // subtracted mean (zeros when centering is off)
};

inline Embedding embed(const Dataset& ds, const MGRParams& params, const RunConfig& cfg) {
  Embedding e{extract_mega_features(ds, params, false), RealVector(params.mega_dim(), 0.0)};
  if (cfg.center_features) {
    e.center = column_mean(e.features);
    subtract_row_vector(e.features, e.center);
  }
  if (cfg.normalize_features) {
    for (std::size_t i = 0; i < e.features.rows(); ++i) {
      const RealVector u = l2_normalize(e.features.row(i));
      std::copy(u.begin(), u.end(), e.features.row(i).begin());
    }
  }
  return e;
}

struct RoundReport {
  int round = 0;
  int num_groups = 0;
  std::size_t noise = 0;
  double mean_gcl_loss = 0.0;
  std::size_t memory_entries = 0;
  int batch_P = 0;
  bool skipped = false;
  std::string warning;
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool include_timing) const {
    nlohmann::json j{{"type", "round"},
                     {"round", round},
                     {"num_groups", num_groups},
                     {"noise", noise},
                     {"mean_gcl_loss", mean_gcl_loss},
                     {"memory_entries", memory_entries},
                     {"batch_P", batch_P},
                     {"skipped", skipped}};
    if (!warning.empty()) j["warning"] = warning;
    if (include_timing) j["wall_seconds"] = wall_seconds;
    return j;
  }
};

/// Target stage: each round re-extracts features, clusters them, rebuilds the
/// group memory and then runs contrastive steps with momentum memory updates.
/// Classifier heads stay frozen.
inline std::vector<RoundReport> adapt(const Dataset& target, MGRParams& params, const RunConfig& cfg, Rng& rng) {
  std::vector<RoundReport> reports;
  SgdState state;
  const int rounds = cfg.effective_rounds();
  for (int round = 0; round < rounds; ++round) {
    const auto started = std::chrono::steady_clock::now();
    RoundReport rep;
    rep.round = round;
    const Embedding emb = embed(target, params, cfg);
    const Matrix& feats = emb.features;
    const ClusterAssignment assignment = dbscan(feats, cfg.clustering);
    rep.num_groups = assignment.num_groups;
    rep.noise = assignment.noise_count();
    if (assignment.num_groups == 0) {
      rep.skipped = true;
      rep.warning = "AllNoise: clustering produced no groups; round skipped";
      reports.push_back(rep);
      continue;
    }
    const PseudoLabeledDataset pseudo = assign_pseudo_labels(target.manifest, assignment, round);
    const std::vector<int> groups = pseudo.labels();
    GroupMemory memory = init_memory(feats, assignment, cfg.memory.momentum, cfg.memory.temperature);
    rep.memory_entries = memory.size();
    SamplerConfig sampler = cfg.sampler;
    if (assignment.num_groups < sampler.P) {
      sampler.P = assignment.num_groups;
      rep.warning = "NotEnoughIdentities: P lowered to " + std::to_string(sampler.P);
    }
    rep.batch_P = sampler.P;
    const double lr = lr_at(round, cfg.target_optim);
    double loss_sum = 0.0;
    for (int it = 0; it < cfg.iterations_per_round; ++it) {
      const auto picks = pk_sample(groups, sampler, rng);
      std::vector<std::size_t> rows;
      std::vector<int> batch_groups;
      for (std::size_t p : picks) {
        rows.push_back(pseudo.source_rows[p]);
        batch_groups.push_back(groups[p]);
      }
      const BatchOutput out = forward_batch(gather_maps(target, rows), params);
      Matrix mega = out.mega();
      subtract_row_vector(mega, emb.center);
      const BatchContrastive gcl = group_contrastive_batch(mega, batch_groups, memory);
      const BackwardResult grads = backward(out.cache, split_mega_grad(gcl.grad, params), params);
      sgd_step(params, grads.grads, state, lr, cfg.target_optim, /*freeze_classifiers=*/true);
      update_memory(memory, gcl.queries, batch_groups);
      loss_sum += gcl.loss;
    }
    rep.mean_gcl_loss = loss_sum / cfg.iterations_per_round;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    reports.push_back(rep);
  }
  return reports;
}

/// Splits `identities` (aligned with records) into query/gallery rows: the first
/// `per_identity` occurrences of each identity are queries.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> query_gallery_split(const std::vector<int>& identities, int per_identity) {
  std::map<int, int> seen;
  std::vector<std::size_t> query, gallery;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    (seen[identities[i]]++ < per_identity ? query : gallery).push_back(i);
  }
  return {query, gallery};
}

inline RankingResult evaluate_dataset(const Dataset& ds, const std::vector<int>& identities, const MGRParams& params, const RunConfig& cfg) {
  if (identities.size() != ds.size()) fail(Errc::LengthMismatch, "ground truth does not cover the dataset");
  const Matrix feats = embed(ds, params, cfg).features;
  const auto [qrows, grows] = query_gallery_split(identities, cfg.eval.queries_per_identity);
  const std::vector<int> cams = ds.cameras();
  auto pick = [&](const std::vector<std::size_t>& rows, Matrix& f, std::vector<int>& ids, std::vector<int>& cs) {
    f = Matrix(rows.size(), feats.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(feats.row(rows[i]).begin(), feats.row(rows[i]).end(), f.row(i).begin());
      ids.push_back(identities[rows[i]]);
      cs.push_back(cams[rows[i]]);
    }
  };
  Matrix qf, gf;
  std::vector<int> qi, qc, gi, gc;
  pick(qrows, qf, qi, qc);
  pick(grows, gf, gi, gc);
  return evaluate_retrieval(qf, qi, qc, gf, gi, gc, cfg.eval);
}

inline nlohmann::json ranking_to_json(const RankingResult& r) {
  nlohmann::json cmc = nlohmann::json::object();
  for (const auto& [rank, v] : r.cmc) cmc[std::to_string(rank)] = v;
  return {{"mAP", r.mAP}, {"cmc", cmc}, {"num_valid_queries", r.num_valid_queries}};
}

struct VariantResult {
  Variant variant = Variant::Full;
  SourceLog source_log;
  RankingResult direct;                 // after the source stage
  std::optional<RankingResult> adapted; // after the target stage, when it runs
  std::vector<RoundReport> rounds;
  MGRParams params;

  const RankingResult& final_result() const { return adapted ? *adapted : direct; }

  /// One line per round, then the final ranking result.
  std::string report_jsonl(bool include_timing = false) const {
    std::string out;
    for (const auto& r : rounds) out += r.to_json(include_timing).dump() + "\n";
    nlohmann::json fin = ranking_to_json(final_result());
    fin["type"] = "result";
    fin["variant"] = variant_name(variant);
    fin["direct_transfer"] = ranking_to_json(direct);
    out += fin.dump() + "\n";
    return out;
  }
};

/// Source training, direct-transfer evaluation and (for adapting variants) the
/// target stage, all seeded from cfg.seed.
inline VariantResult run_variant(const RunConfig& cfg, const Dataset& source, const Dataset& target, const std::vector<int>& target_truth) {
  cfg.validate();
  VariantResult res;
  res.variant = cfg.variant;
  const Rng root(cfg.seed);
  Rng init_rng = root.derive(10);
  Rng source_rng = root.derive(11);
  Rng target_rng = root.derive(12);
  int num_classes = 0;
  contiguous_classes(source.labels(), &num_classes);
  res.params = make_params(cfg, source.manifest.map_shape.channels, static_cast<std::size_t>(num_classes), variant_layout(cfg.variant), init_rng);
  res.source_log = train_source(source, res.params, cfg, source_rng);
  res.direct = evaluate_dataset(target, target_truth, res.params, cfg);
  if (variant_adapts(cfg.variant)) {
    res.rounds = adapt(target, res.params, cfg, target_rng);
    res.adapted = evaluate_dataset(target, target_truth, res.params, cfg);
  }
  return res;
}

inline VariantResult run_variant(const RunConfig& cfg, const SyntheticPair& data) {
  return run_variant(cfg, data.source, data.target, data.target_truth);
}

/// Generates the synthetic pair for a config.
inline SyntheticPair synthesize(const RunConfig& cfg) { return generate_synthetic_pair(cfg.synth); }

}  // namespace mgrgcl
