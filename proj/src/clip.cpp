// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/clip.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cardioclip/errors.hpp"
#include "cardioclip/nn.hpp"
#include "cardioclip/optim.hpp"

namespace cardioclip {

std::vector<std::string> ContrastiveConfig::validate() const {
  std::vector<std::string> errs;
  if (!(temperature > 0.0)) errs.push_back("ContrastiveConfig: temperature must be > 0");
  if (!(variant_prob >= 0.0 && variant_prob <= 1.0)) errs.push_back("ContrastiveConfig: variant_prob must lie in [0, 1]");
  if (epochs < 1) errs.push_back("ContrastiveConfig: epochs must be >= 1");
  if (batch < 2) errs.push_back("ContrastiveConfig: batch must be >= 2");
  if (!(lr > min_lr && proj_lr > min_lr && min_lr >= 0.0))
    errs.push_back("ContrastiveConfig: lr and proj_lr must exceed min_lr >= 0");
  if (!(weight_decay >= 0.0)) errs.push_back("ContrastiveConfig: weight_decay must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) errs.push_back("ContrastiveConfig: warmup_frac must lie in [0, 1]");
  return errs;
}

Matrix<double> similarity_matrix(std::span<const Embedding> v, std::span<const Embedding> t) {
  if (v.size() != t.size()) throw std::invalid_argument("similarity_matrix: embedding counts differ");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i].norm > 0.0)) throw NumericError("similarity_matrix: zero-norm visual embedding " + std::to_string(i));
    if (!(t[i].norm > 0.0)) throw NumericError("similarity_matrix: zero-norm text embedding " + std::to_string(i));
  }
  Matrix<double> s(v.size(), t.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) s(i, j) = cosine(v[i], t[j]);
  return s;
}

namespace {

// Cross-entropy of softmax(logits / tau) rows against target rows. Adds
// scale * dCE/dlogits into grad (indexed through `at` for transposition).
template <typename LogitAt, typename TargetAt>
double soft_ce(std::size_t b, double tau, double scale, LogitAt logit, TargetAt target, Matrix<double>& grad, bool transpose) {
  double total = 0.0;
  std::vector<double> p(b);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, logit(i, j) / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(logit(i, j) / tau - mx);
    const double log_z = std::log(z) + mx;
    double tsum = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      const double log_p = logit(i, j) / tau - log_z;
      p[j] = std::exp(log_p);
      total -= target(i, j) * log_p;
      tsum += target(i, j);
    }
    for (std::size_t j = 0; j < b; ++j) {
      const double g = scale * (p[j] * tsum - target(i, j)) / tau;
      if (transpose) grad(j, i) += g; else grad(i, j) += g;
    }
  }
  return total / static_cast<double>(b);
}

}  // namespace

ContrastiveLoss contrastive_loss(const Matrix<double>& sim, const Matrix<double>& targets, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
  const std::size_t b = sim.rows();
  if (b == 0 || sim.cols() != b || targets.rows() != b || targets.cols() != b)
    throw ShapeError("contrastive_loss: similarity and target matrices must be equal-size squares");
  ContrastiveLoss out;
  out.d_sim = Matrix<double>(b, b);
  const double scale = 0.5 / static_cast<double>(b);
  auto s_row = [&](std::size_t i, std::size_t j) { return sim(i, j); };
  auto t_row = [&](std::size_t i, std::size_t j) { return targets(i, j); };
  auto s_col = [&](std::size_t i, std::size_t j) { return sim(j, i); };
  auto t_col = [&](std::size_t i, std::size_t j) { return targets(j, i); };
  out.row_term = soft_ce(b, tau, scale, s_row, t_row, out.d_sim, false);
  out.col_term = soft_ce(b, tau, scale, s_col, t_col, out.d_sim, true);
  out.loss = 0.5 * (out.row_term + out.col_term);
  return out;
}

TextVariant sample_text_variant(const PairExample& ex, double variant_prob, Rng& rng) {
  if (rng.bernoulli(variant_prob)) return {structured_text(ex.structured), true};
  return {ex.free_text, false};
}

ParamStore<float> init_clip_params(const VisualEncoderConfig& vcfg, const TextEncoderConfig& tcfg, std::uint64_t seed) {
  ParamStore<float> store;
  Rng vrng(substream_seed(seed, "init-visual"));
  VisualEncoder<float>::declare(vcfg, store, vrng);
  Rng trng(substream_seed(seed, "init-text"));
  TextEncoder<float>::declare(tcfg, store, trng);
  return store;
}

template <typename T>
double clip_loss_and_grad(const VisualEncoder<T>& venc, const TextEncoder<T>& tenc,
                          std::span<const Matrix<T>> patches, std::span<const TokenSequence> texts,
                          const Matrix<double>& targets, double tau, bool with_grad, double grad_scale) {
  const std::size_t b = patches.size();
  if (b < 2) throw std::invalid_argument("contrastive batch needs at least 2 pairs, got " + std::to_string(b));
  if (texts.size() != b) throw std::invalid_argument("contrastive batch: image and text counts differ");
  const std::size_t p = venc.config().proj_dim;

  std::vector<VisualTrace<T>> vtr(with_grad ? b : 0);
  std::vector<TextTrace<T>> ttr(with_grad ? b : 0);
  Matrix<T> vhat(b, p), that(b, p);
  std::vector<T> vnorm(b), tnorm(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::vector<T> ve = venc.embed(patches[i], with_grad ? &vtr[i] : nullptr);
    const std::vector<T> te = tenc.embed(texts[i], with_grad ? &ttr[i] : nullptr);
    vnorm[i] = nn::l2_normalize<T>(ve, vhat.row(i));
    tnorm[i] = nn::l2_normalize<T>(te, that.row(i));
  }
  Matrix<double> sim(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += static_cast<double>(vhat(i, k)) * static_cast<double>(that(j, k));
      sim(i, j) = acc;
    }
  const ContrastiveLoss cl = contrastive_loss(sim, targets, tau);
  if (!with_grad) return cl.loss;

  std::vector<T> dv(p), dt(p), dx(p);
  for (std::size_t i = 0; i < b; ++i) {
    std::fill(dv.begin(), dv.end(), T{0});
    std::fill(dt.begin(), dt.end(), T{0});
    for (std::size_t j = 0; j < b; ++j) {
      const T gv = static_cast<T>(grad_scale * cl.d_sim(i, j));
      const T gt = static_cast<T>(grad_scale * cl.d_sim(j, i));
      for (std::size_t k = 0; k < p; ++k) {
        dv[k] += gv * that(j, k);
        dt[k] += gt * vhat(j, k);
      }
    }
    nn::l2_normalize_backward<T>(vhat.row(i), vnorm[i], dv, dx);
    venc.embed_backward(vtr[i], dx);
    nn::l2_normalize_backward<T>(that.row(i), tnorm[i], dt, dx);
    tenc.embed_backward(ttr[i], dx);
  }
  return cl.loss;
}

TrainResult train_clip(std::span<const PairExample> pairs, ParamStore<float>& params, const VisualEncoderConfig& vcfg,
                       const TextEncoderConfig& tcfg, const Vocabulary& vocab, const ContrastiveConfig& cfg,
                       const std::function<void(const EpochStats&)>& on_epoch) {
  if (auto errs = cfg.validate(); !errs.empty()) throw std::invalid_argument(errs.front());
  if (pairs.size() < 2) throw std::invalid_argument("train_clip: need at least 2 pairs");
  for (const auto& ex : pairs)
    if (ex.volume == nullptr) throw std::invalid_argument("train_clip: pair " + ex.case_id + " has no volume");

  const VisualEncoder<float> venc(vcfg, params);
  const TextEncoder<float> tenc(tcfg, params);
  AdamW<float> opt(params);

  const std::size_t full = pairs.size() / cfg.batch;
  const std::size_t rem = pairs.size() % cfg.batch;
  const std::size_t steps_per_epoch = full + (rem >= 2 ? 1 : 0);
  ScheduleConfig enc_sched{cfg.lr, 0, cfg.epochs * steps_per_epoch, cfg.weight_decay, cfg.min_lr};
  enc_sched.warmup_steps = warmup_from_fraction(cfg.warmup_frac, enc_sched.total_steps);
  ScheduleConfig proj_sched = enc_sched;
  proj_sched.base_lr = cfg.proj_lr;

  const std::uint64_t order_seed = substream_seed(cfg.seed, "batch-order");
  Rng variant_rng(substream_seed(cfg.seed, "variant"));

  std::vector<PathologyVector> vecs;
  vecs.reserve(pairs.size());
  for (const auto& ex : pairs) vecs.push_back(pathology_vector(ex.structured));

  TrainResult result;
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix64(order_seed + epoch));
    order_rng.shuffle(order);
    double loss_sum = 0.0, lr = 0.0;
    std::size_t structured_count = 0, drawn = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch;
      const std::size_t end = std::min(pairs.size(), begin + cfg.batch);
      std::vector<Matrix<float>> patches;
      std::vector<TokenSequence> texts;
      std::vector<PathologyVector> batch_vecs;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = pairs[order[k]];
        patches.push_back(volume_patches<float>(*ex.volume, vcfg));
        const TextVariant tv = sample_text_variant(ex, cfg.variant_prob, variant_rng);
        structured_count += tv.structured ? 1 : 0;
        ++drawn;
        texts.push_back(tokenize(tv.text, vocab, tcfg.max_len));
        batch_vecs.push_back(vecs[order[k]]);
      }
      const Matrix<double> targets = targets_from_affinity(affinity_matrix(batch_vecs), cfg.target_mode);
      params.zero_grad();
      const double loss = clip_loss_and_grad<float>(venc, tenc, patches, texts, targets, cfg.temperature, true);
      if (!std::isfinite(loss))
        throw NumericError("train_clip: non-finite loss at step " + std::to_string(result.steps));
      loss_sum += loss;
      lr = lr_at_step(enc_sched, result.steps);
      opt.step(lr, lr_at_step(proj_sched, result.steps), cfg.weight_decay);
      ++result.steps;
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(steps_per_epoch), lr,
                     drawn ? static_cast<double>(structured_count) / static_cast<double>(drawn) : 0.0};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

template double clip_loss_and_grad<float>(const VisualEncoder<float>&, const TextEncoder<float>&,
                                          std::span<const Matrix<float>>, std::span<const TokenSequence>,
                                          const Matrix<double>&, double, bool, double);
template double clip_loss_and_grad<double>(const VisualEncoder<double>&, const TextEncoder<double>&,
                                           std::span<const Matrix<double>>, std::span<const TokenSequence>,
                                           const Matrix<double>&, double, bool, double);

}  // namespace cardioclip
