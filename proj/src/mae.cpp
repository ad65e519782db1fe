// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cardioclip/errors.hpp"
#include "cardioclip/kernels.hpp"
#include "cardioclip/rng.hpp"

namespace cardioclip {

// ---------------------------------------------------------------- masking

bool MaskPlan::is_partition() const {
  if (visible_idx.size() + masked_idx.size() != n_total) return false;
  std::vector<char> seen(n_total, 0);
  for (const auto* set : {&visible_idx, &masked_idx}) {
    for (std::size_t i : *set) {
      if (i >= n_total || seen[i]) return false;
      seen[i] = 1;
    }
  }
  return std::is_sorted(visible_idx.begin(), visible_idx.end()) &&
         std::is_sorted(masked_idx.begin(), masked_idx.end());
}

MaskPlan sample_mask(std::size_t n_total, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("sample_mask: ratio must lie in (0, 1)");
  const auto n_masked = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_total) + 1e-9));
  if (n_masked < 1 || n_masked + 1 > n_total) {
    throw std::invalid_argument("sample_mask: ratio " + std::to_string(ratio) + " on " +
                                std::to_string(n_total) + " patches leaves no visible or no masked patch");
  }
  std::vector<std::size_t> perm(n_total);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_masked; ++i) std::swap(perm[i], perm[i + rng.index(n_total - i)]);
  MaskPlan m;
  m.n_total = n_total;
  m.seed = seed;
  m.masked_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_masked));
  m.visible_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_masked), perm.end());
  std::sort(m.masked_idx.begin(), m.masked_idx.end());
  std::sort(m.visible_idx.begin(), m.visible_idx.end());
  return m;
}

namespace {

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const std::size_t> idx) {
  Matrix<T> out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m.rows()) throw ShapeError("row index " + std::to_string(idx[r]) + " out of range");
    std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

Matrix<float> apply_mask(const PatchGrid& g, const MaskPlan& m) {
  if (m.n_total != g.count())
    throw ShapeError("apply_mask: plan covers " + std::to_string(m.n_total) + " patches, grid has " +
                     std::to_string(g.count()));
  return gather_rows(g.patches, m.visible_idx);
}

// ---------------------------------------------------------------- decoder

std::vector<std::string> DecoderConfig::validate() const {
  std::vector<std::string> errs;
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    errs.push_back("DecoderConfig: embed_dim must be divisible by heads");
  if (depth < 1) errs.push_back("DecoderConfig: depth must be >= 1");
  if (!(mlp_ratio > 0.0)) errs.push_back("DecoderConfig: mlp_ratio must be positive");
  return errs;
}

template <typename T>
void MaeDecoder<T>::declare(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                            ParamStore<T>& store, Rng& rng) {
  const std::size_t d = dcfg.embed_dim;
  nn::Linear<T>::declare(store, "decoder.embed", vcfg.embed_dim, d, ParamGroup::Encoder, rng);
  store.add("decoder.mask_token", {d}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  store.add("decoder.pos", {vcfg.num_patches() + 1, d}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  nn::TransformerStack<T>::declare(store, "decoder", d, dcfg.depth, dcfg.mlp_hidden(), rng);
  nn::LayerNorm<T>::declare(store, "decoder.norm", d, rng);
  nn::Linear<T>::declare(store, "decoder.head", d, vcfg.patch_volume(), ParamGroup::Encoder, rng);
}

template <typename T>
MaeDecoder<T>::MaeDecoder(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg, ParamStore<T>& store)
    : n_patches_(vcfg.num_patches()),
      embed_(nn::Linear<T>::bind(store, "decoder.embed")),
      mask_token_(&store.at("decoder.mask_token")),
      pos_(&store.at("decoder.pos")),
      stack_(nn::TransformerStack<T>::bind(store, "decoder", dcfg.depth, dcfg.heads)),
      norm_(nn::LayerNorm<T>::bind(store, "decoder.norm")),
      head_(nn::Linear<T>::bind(store, "decoder.head")) {
  if (embed_.in_features() != vcfg.embed_dim || head_.out_features() != vcfg.patch_volume() ||
      pos_->shape[0] != n_patches_ + 1)
    throw ShapeError("decoder parameters do not match encoder geometry");
}

template <typename T>
Matrix<T> MaeDecoder<T>::forward(const Matrix<T>& enc_tokens, const MaskPlan& plan,
                                 DecoderTrace<T>* trace, bool masked_only) const {
  if (plan.n_total != n_patches_) throw ShapeError("decoder: mask plan size does not match patch count");
  if (enc_tokens.rows() != plan.visible_idx.size() + 1)
    throw ShapeError("decoder: expected class token plus one row per visible patch");
  const std::size_t d = mask_token_->numel();
  const Matrix<T> embedded = embed_.forward(enc_tokens);

  Matrix<T> full(n_patches_ + 1, d);
  std::copy(embedded.row(0).begin(), embedded.row(0).end(), full.row(0).begin());
  for (std::size_t r = 0; r < plan.visible_idx.size(); ++r) {
    auto src = embedded.row(r + 1);
    std::copy(src.begin(), src.end(), full.row(plan.visible_idx[r] + 1).begin());
  }
  for (std::size_t m : plan.masked_idx)
    std::copy(mask_token_->value.begin(), mask_token_->value.end(), full.row(m + 1).begin());
  for (std::size_t i = 0; i < full.size(); ++i) full.data()[i] += pos_->value[i];

  DecoderTrace<T> local;
  DecoderTrace<T>& tr = trace ? *trace : local;
  const Matrix<T> hidden = stack_.forward(full, trace ? &tr.stack : nullptr);
  tr.normed = norm_.forward(hidden, trace ? &tr.norm : nullptr);

  const std::size_t pv = head_.out_features();
  Matrix<T> recon(n_patches_, pv);
  if (masked_only) {
    std::vector<std::size_t> rows(plan.masked_idx.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = plan.masked_idx[i] + 1;
    const Matrix<T> pred = head_.forward(gather_rows(tr.normed, rows));
    for (std::size_t i = 0; i < plan.masked_idx.size(); ++i)
      std::copy(pred.row(i).begin(), pred.row(i).end(), recon.row(plan.masked_idx[i]).begin());
  } else {
    Matrix<T> body(n_patches_, d);
    std::copy(tr.normed.data() + d, tr.normed.data() + tr.normed.size(), body.data());
    recon = head_.forward(body);
  }
  if (trace) {
    tr.visible_idx = plan.visible_idx;
    tr.masked_idx = plan.masked_idx;
    tr.enc_tokens = enc_tokens;
  }
  return recon;
}

template <typename T>
Matrix<T> MaeDecoder<T>::backward(const DecoderTrace<T>& trace, const Matrix<T>& d_recon) const {
  const std::size_t d = mask_token_->numel();
  // Visible rows carry no gradient, so only masked rows go through the head.
  std::vector<std::size_t> rows(trace.masked_idx.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = trace.masked_idx[i] + 1;
  const Matrix<T> x_masked = gather_rows(trace.normed, rows);
  const Matrix<T> dy_masked = gather_rows(d_recon, trace.masked_idx);
  const Matrix<T> dx_masked = head_.backward(x_masked, dy_masked);

  Matrix<T> d_normed(n_patches_ + 1, d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(dx_masked.row(i).begin(), dx_masked.row(i).end(), d_normed.row(rows[i]).begin());

  const Matrix<T> d_hidden = norm_.backward(trace.norm, d_normed);
  const Matrix<T> d_full = stack_.backward(trace.stack, d_hidden);
  for (std::size_t i = 0; i < d_full.size(); ++i) pos_->grad[i] += d_full.data()[i];
  for (std::size_t m : trace.masked_idx)
    for (std::size_t j = 0; j < d; ++j) mask_token_->grad[j] += d_full(m + 1, j);

  Matrix<T> d_embedded(trace.visible_idx.size() + 1, d);
  std::copy(d_full.row(0).begin(), d_full.row(0).end(), d_embedded.row(0).begin());
  for (std::size_t r = 0; r < trace.visible_idx.size(); ++r) {
    auto src = d_full.row(trace.visible_idx[r] + 1);
    std::copy(src.begin(), src.end(), d_embedded.row(r + 1).begin());
  }
  return embed_.backward(trace.enc_tokens, d_embedded);
}

// ------------------------------------------------------------------- loss

template <typename T>
MaskedMse<T> masked_mse(const Matrix<T>& recon, const Matrix<T>& target,
                        std::span<const std::size_t> masked_idx) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols())
    throw ShapeError("masked_mse: prediction and target shapes differ");
  if (masked_idx.empty()) throw std::invalid_argument("masked_mse: no masked patches");
  MaskedMse<T> out;
  out.d_recon = Matrix<T>(recon.rows(), recon.cols());
  const double denom = static_cast<double>(masked_idx.size() * recon.cols());
  const T gscale = static_cast<T>(2.0 / denom);
  double sum = 0.0;
  for (std::size_t m : masked_idx) {
    if (m >= recon.rows()) throw ShapeError("masked_mse: masked index out of range");
    auto r = recon.row(m);
    auto t = target.row(m);
    auto g = out.d_recon.row(m);
    double row_sum = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const T diff = r[j] - t[j];
      row_sum += static_cast<double>(diff) * static_cast<double>(diff);
      g[j] = gscale * diff;
    }
    sum += row_sum;
  }
  out.loss = sum / denom;
  return out;
}

template <typename T>
Matrix<T> standardize_patches(const Matrix<T>& patches) {
  Matrix<T> out = patches;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (T v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (T& v : row) v = static_cast<T>((v - mean) * inv);
  }
  return out;
}

ReconstructionOutput mae_forward(const Volume3D& v, const MaskPlan& m, const VisualEncoder<float>& enc,
                                 const MaeDecoder<float>& dec, const DecoderConfig& dcfg) {
  const Matrix<float> patches = volume_patches<float>(v, enc.config());
  if (m.n_total != patches.rows()) throw ShapeError("mae_forward: mask plan does not match patch count");
  const Matrix<float> visible = gather_rows(patches, m.visible_idx);
  const Matrix<float> tokens = enc.forward_tokens(visible, m.visible_idx, nullptr);
  ReconstructionOutput out;
  out.recon_patches = dec.forward(tokens, m, nullptr);
  const Matrix<float> target = dcfg.normalize_targets ? standardize_patches(patches) : patches;
  out.loss = masked_mse(out.recon_patches, target, m.masked_idx).loss;
  out.masked_recon = gather_rows(out.recon_patches, m.masked_idx);
  out.masked_idx = m.masked_idx;
  return out;
}

template <typename T>
double mae_loss_and_grad(const VisualEncoder<T>& enc, const MaeDecoder<T>& dec,
                         const DecoderConfig& dcfg, const Matrix<T>& patches, const MaskPlan& plan,
                         double grad_scale, bool with_grad) {
  const Matrix<T> visible = gather_rows(patches, plan.visible_idx);
  VisualTrace<T> vtrace;
  DecoderTrace<T> dtrace;
  const Matrix<T> tokens = enc.forward_tokens(visible, plan.visible_idx, with_grad ? &vtrace : nullptr);
  const Matrix<T> recon = dec.forward(tokens, plan, with_grad ? &dtrace : nullptr, true);
  const Matrix<T> target = dcfg.normalize_targets ? standardize_patches(patches) : patches;
  MaskedMse<T> mse = masked_mse(recon, target, plan.masked_idx);
  if (with_grad) {
    if (grad_scale != 1.0)
      for (T& g : mse.d_recon.flat()) g *= static_cast<T>(grad_scale);
    const Matrix<T> d_tokens = dec.backward(dtrace, mse.d_recon);
    enc.backward_tokens(vtrace, d_tokens);
  }
  return mse.loss;
}

// --------------------------------------------------------------- training

std::vector<std::string> MaeTrainConfig::validate() const {
  std::vector<std::string> errs;
  if (epochs < 1) errs.push_back("MaeTrainConfig: epochs must be >= 1");
  if (batch < 1) errs.push_back("MaeTrainConfig: batch must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) errs.push_back("MaeTrainConfig: mask_ratio must lie in (0, 1)");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) errs.push_back("MaeTrainConfig: warmup_frac must lie in [0, 1]");
  if (!(base_lr > min_lr && min_lr >= 0.0)) errs.push_back("ScheduleConfig: base_lr must exceed min_lr >= 0");
  if (!(weight_decay >= 0.0)) errs.push_back("ScheduleConfig: weight_decay must be >= 0");
  return errs;
}

ParamStore<float> init_mae_params(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                                  std::uint64_t seed) {
  ParamStore<float> store;
  Rng rng(substream_seed(seed, "init-visual"));
  VisualEncoder<float>::declare(vcfg, store, rng);
  Rng drng(substream_seed(seed, "init-decoder"));
  MaeDecoder<float>::declare(vcfg, dcfg, store, drng);
  return store;
}

TrainResult train_mae(std::span<const Volume3D> corpus, ParamStore<float>& params,
                      const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                      const MaeTrainConfig& cfg,
                      const std::function<void(const EpochStats&)>& on_epoch) {
  if (corpus.empty()) throw std::invalid_argument("train_mae: empty corpus");
  if (auto errs = cfg.validate(); !errs.empty()) throw std::invalid_argument(errs.front());
  const VisualEncoder<float> enc(vcfg, params);
  const MaeDecoder<float> dec(vcfg, dcfg, params);
  AdamW<float> opt(params);

  const std::size_t steps_per_epoch = (corpus.size() + cfg.batch - 1) / cfg.batch;
  ScheduleConfig sched{cfg.base_lr, 0, cfg.epochs * steps_per_epoch, cfg.weight_decay, cfg.min_lr};
  sched.warmup_steps = warmup_from_fraction(cfg.warmup_frac, sched.total_steps);

  const std::uint64_t order_seed = substream_seed(cfg.seed, "batch-order");
  const std::uint64_t mask_seed = substream_seed(cfg.seed, "mask");

  TrainResult result;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix64(order_seed + epoch));
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch;
      const std::size_t end = std::min(corpus.size(), begin + cfg.batch);
      params.zero_grad();
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t case_idx = order[b];
        const Matrix<float> patches = volume_patches<float>(corpus[case_idx], vcfg);
        const MaskPlan plan = sample_mask(patches.rows(), cfg.mask_ratio,
                                          mix64(mask_seed ^ mix64(epoch * corpus.size() + case_idx)));
        const double loss = mae_loss_and_grad(enc, dec, dcfg, patches, plan,
                                              1.0 / static_cast<double>(end - begin), true);
        if (!std::isfinite(loss)) {
          throw NumericError("train_mae: non-finite loss at step " + std::to_string(result.steps) +
                             " (epoch " + std::to_string(epoch) + ")");
        }
        loss_sum += loss;
      }
      lr = lr_at_step(sched, result.steps);
      opt.step(lr, lr, cfg.weight_decay);
      ++result.steps;
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(corpus.size()), lr, -1.0};
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

template class MaeDecoder<float>;
template class MaeDecoder<double>;
template MaskedMse<float> masked_mse<float>(const Matrix<float>&, const Matrix<float>&, std::span<const std::size_t>);
template MaskedMse<double> masked_mse<double>(const Matrix<double>&, const Matrix<double>&, std::span<const std::size_t>);
template Matrix<float> standardize_patches<float>(const Matrix<float>&);
template Matrix<double> standardize_patches<double>(const Matrix<double>&);
template double mae_loss_and_grad<float>(const VisualEncoder<float>&, const MaeDecoder<float>&,
                                         const DecoderConfig&, const Matrix<float>&, const MaskPlan&,
                                         double, bool);
template double mae_loss_and_grad<double>(const VisualEncoder<double>&, const MaeDecoder<double>&,
                                          const DecoderConfig&, const Matrix<double>&, const MaskPlan&,
                                          double, bool);

}  // namespace cardioclip
