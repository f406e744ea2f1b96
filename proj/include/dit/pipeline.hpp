#pragma once

// Full registration chain: structure extractor, feature transformer,
// similarity, correspondences, confidence filtering and Procrustes.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/config.hpp"
#include "dit/gmcce.hpp"
#include "dit/loss.hpp"
#include "dit/match.hpp"
#include "dit/metrics.hpp"
#include "dit/params.hpp"
#include "dit/pft.hpp"
#include "dit/pse.hpp"

namespace dit {

struct Model {
  PipelineConfig config;
  ModelParams params;
  std::optional<PseParams> pse;      // absent under no_pse
  std::optional<nn::Linear> embed;   // pointwise replacement under no_pse
  PftParams pft;
};

inline Model build_model(const PipelineConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng = Rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t width = cfg.effective_width();
  const auto residual = cfg.residual_outside_ln ? nn::ResidualMode::kLiteral : nn::ResidualMode::kAroundSum;
  if (cfg.no_pse) {
    m.embed = nn::make_linear(m.params, "embed", 3, width, rng);
  } else {
    PseConfig pc;
    pc.layers = cfg.pse_layers;
    pc.k = cfg.effective_k();
    pc.width = cfg.d_model;
    pc.heads = cfg.heads;
    pc.out_width = width;
    pc.residual = residual;
    m.pse = make_pse(m.params, pc, rng);
  }
  PftConfig fc;
  fc.depth = cfg.effective_depth();
  fc.width = width;
  fc.heads = cfg.heads;
  fc.pos_hidden = width;
  fc.se_ratio = cfg.se_ratio;
  fc.positional = !cfg.no_pos_enc;
  fc.residual = residual;
  m.pft = make_pft(m.params, fc, rng);
  return m;
}

/// Sub-paths taken by one forward pass.
struct PathTrace {
  bool structure_extractor = false;
  bool pointwise_embedding = false;
  bool positional_encoding = false;
  bool gmcce = false;
  std::size_t pft_depth = 0;
  std::size_t pft_width = 0;
};

struct FeaturePass {
  ad::Tensor phi_x, phi_y;
  PathTrace trace;
};

inline ad::Tensor extract_features(const Model& m, const PointCloud& cloud) {
  if (m.pse) {
    if (cloud.size() <= m.pse->k)
      throw std::invalid_argument("cloud has " + std::to_string(cloud.size()) + " points; need more than k = " +
                                  std::to_string(m.pse->k));
    return pse_forward(cloud, *m.pse);
  }
  return pointwise_embed(cloud, *m.embed);
}

inline FeaturePass features(const Model& m, const PointCloud& x, const PointCloud& y) {
  FeaturePass f;
  const PftOutput out = pft_forward(extract_features(m, x), extract_features(m, y), x, y, m.pft);
  f.phi_x = out.phi_x;
  f.phi_y = out.phi_y;
  f.trace.structure_extractor = m.pse.has_value();
  f.trace.pointwise_embedding = m.embed.has_value();
  f.trace.positional_encoding = m.pft.positional;
  f.trace.pft_depth = m.pft.phi.encoders.size();
  f.trace.pft_width = m.pft.width();
  return f;
}

struct RegistrationResult {
  RigidTransform transform;
  bool ok = true;
  std::string failure;
  /// Confidence filtering left fewer than 3 correspondences; similarity
  /// weights were used instead.
  bool confidence_fallback = false;
  double time_ms = 0.0;
  CorrespondenceSet correspondences;
  std::optional<ConfidenceVector> confidence;
  PathTrace trace;
};

inline GmcceOptions gmcce_options(const PipelineConfig& c) { return {c.k_s, c.k_m, c.lambda, c.tau}; }

/// Test-time registration of src onto tgt. Degenerate estimates come back as
/// ok = false with the identity transform.
inline RegistrationResult register_pair(const Model& m, const PointCloud& src, const PointCloud& tgt) {
  const auto t0 = std::chrono::steady_clock::now();
  RegistrationResult r;
  try {
    const FeaturePass f = features(m, src, tgt);
    r.trace = f.trace;
    const ad::Tensor s = similarity(f.phi_x, f.phi_y, m.config.temperature);
    r.correspondences = correspondences(s);
    CorrespondenceSet weighted = r.correspondences;
    if (!m.config.no_gmcce) {
      r.trace.gmcce = true;
      r.confidence = evaluate_confidence(src, tgt, r.correspondences.target_index, gmcce_options(m.config));
      weighted = apply_confidence(r.correspondences, *r.confidence);
      const auto kept = std::count_if(weighted.weight.begin(), weighted.weight.end(), [](double w) { return w > 0.0; });
      if (kept < 3) {
        weighted = r.correspondences;
        r.confidence_fallback = true;
      }
    }
    r.transform = weighted_procrustes(src, tgt, weighted);
  } catch (const DegenerateError& e) {
    r.ok = false;
    r.failure = e.what();
    r.transform = RigidTransform::identity();
  }
  r.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct LossValues {
  double total = 0.0;
  double transformation = 0.0;
  double cycle = 0.0;
  double discrimination = 0.0;
};

struct TrainingForward {
  LossParts parts;
  ad::Tensor total;
  DiffTransform forward, backward;

  LossValues values() const {
    return {total.item(), parts.transformation.item(), parts.cycle.item(), parts.discrimination.item()};
  }
};

/// Training-mode pass over both directions; correspondence weights are the
/// similarity values so gradients reach the features through Procrustes.
inline TrainingForward training_forward(const Model& m, const PairSample& pair) {
  const PipelineConfig& c = m.config;
  const FeaturePass f = features(m, pair.src, pair.tgt);
  const ad::Tensor z_xy = similarity_logits(f.phi_x, f.phi_y, c.temperature);
  const ad::Tensor s_xy = ad::softmax(z_xy, 1);
  const ad::Tensor s_yx = similarity(f.phi_y, f.phi_x, c.temperature);
  const CorrespondenceSet m_xy = correspondences(s_xy);
  const CorrespondenceSet m_yx = correspondences(s_yx);
  TrainingForward out;
  out.forward = weighted_procrustes_diff(pair.src, pair.tgt, m_xy.target_index, ad::pick_per_row(s_xy, m_xy.target_index));
  out.backward = weighted_procrustes_diff(pair.tgt, pair.src, m_yx.target_index, ad::pick_per_row(s_yx, m_yx.target_index));
  const InlierLabels labels =
      make_inlier_labels(pair.src_clean, pair.tgt_clean, pair.ground_truth, m_xy.target_index, c.r_inlier);
  out.parts.transformation = transformation_loss(out.forward, pair.ground_truth, c.literal_losses);
  out.parts.cycle = cycle_loss(out.forward, out.backward, c.literal_losses);
  out.parts.discrimination = discrimination_loss_logits(z_xy, m_xy.target_index, labels);
  out.total = total_loss(out.parts, {c.alpha, c.beta});
  return out;
}

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossValues mean;
  std::optional<MetricsReport> validation;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::vector<LossValues> steps;  // per optimiser step, batch mean
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::ostream* log = nullptr;
  const std::vector<PairSample>* validation = nullptr;
  double val_r_thres = 5.0;
  double val_t_thres = 0.05;
};

inline void save_model(const std::filesystem::path& dir, const Model& m) {
  checkpoint::save(dir, m.params);
  m.config.save(dir / "config.txt");
}

/// Rebuilds the architecture from <dir>/config.txt, applies `overrides`
/// (key, value) and loads the weights with a strict shape check.
inline Model load_model(const std::filesystem::path& dir,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  PipelineConfig cfg = PipelineConfig::load(dir / "config.txt");
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  Model m = build_model(cfg);
  checkpoint::load(dir, m.params);
  return m;
}

inline std::vector<PairError> validation_errors(const Model& m, const std::vector<PairSample>& pairs) {
  std::vector<PairError> errs;
  errs.reserve(pairs.size());
  for (const auto& p : pairs) errs.push_back(pair_error(register_pair(m, p.src, p.tgt).transform, p.ground_truth));
  return errs;
}

/// Adam over shuffled pairs, `batch_size` pairs per step. On a non-finite
/// loss or gradient the last good weights are written to the checkpoint
/// directory and TrainingAborted is thrown.
inline TrainReport train(Model& m, const std::vector<PairSample>& pairs, const TrainOptions& opt = {}) {
  const PipelineConfig& c = m.config;
  if (pairs.empty()) throw std::invalid_argument("train: empty dataset");
  Adam adam({c.lr});
  Rng shuffle_rng(c.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(pairs.size());
  TrainReport report;
  auto abort = [&](const std::string& why) {
    if (opt.checkpoint_dir) save_model(*opt.checkpoint_dir, m);
    throw TrainingAborted("training aborted at step " + std::to_string(adam.steps() + 1) + ": " + why);
  };
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossValues sum;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += c.batch_size) {
      const std::size_t e = std::min(order.size(), b + c.batch_size);
      const double inv = 1.0 / static_cast<double>(e - b);
      LossValues step;
      m.params.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        LossValues v;
        try {
          const TrainingForward tf = training_forward(m, pairs[order[i]]);
          v = tf.values();
          ad::backward(ad::scale(tf.total, inv));
        } catch (const NonFiniteError& err) {
          abort(err.what());
        }
        step.total += inv * v.total;
        step.transformation += inv * v.transformation;
        step.cycle += inv * v.cycle;
        step.discrimination += inv * v.discrimination;
      }
      try {
        adam.step(m.params);
      } catch (const NonFiniteError& err) {
        abort(err.what());
      }
      report.steps.push_back(step);
      sum.total += step.total;
      sum.transformation += step.transformation;
      sum.cycle += step.cycle;
      sum.discrimination += step.discrimination;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    const double nb = static_cast<double>(batches);
    log.mean = {sum.total / nb, sum.transformation / nb, sum.cycle / nb, sum.discrimination / nb};
    if (opt.validation && !opt.validation->empty()) {
      const auto errs = validation_errors(m, *opt.validation);
      log.validation = aggregate_metrics(errs, opt.val_r_thres, opt.val_t_thres);
    }
    if (opt.log) {
      *opt.log << "epoch " << epoch << " loss " << log.mean.total << " L_t " << log.mean.transformation << " L_c "
               << log.mean.cycle << " L_d " << log.mean.discrimination;
      if (log.validation)
        *opt.log << " val R_MAE " << log.validation->r_mae << " t_MAE " << log.validation->t_mae << " success "
                 << log.validation->success_ratio;
      *opt.log << std::endl;
    }
    report.epochs.push_back(log);
    if (opt.checkpoint_dir) save_model(*opt.checkpoint_dir, m);
  }
  m.params.zero_grad();
  return report;
}

}  // namespace dit
