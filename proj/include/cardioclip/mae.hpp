// SPDX-License-Identifier: Apache-2.0
//
// Stage 1: masked-autoencoder pre-training of the visual encoder.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cardioclip/encoders.hpp"
#include "cardioclip/matrix.hpp"
#include "cardioclip/nn.hpp"
#include "cardioclip/optim.hpp"
#include "cardioclip/params.hpp"
#include "cardioclip/volume.hpp"

namespace cardioclip {

struct MaskPlan {
  std::size_t n_total = 0;
  std::vector<std::size_t> visible_idx;  // sorted
  std::vector<std::size_t> masked_idx;   // sorted
  std::uint64_t seed = 0;

  /// True iff the two index sets partition 0..n_total-1.
  bool is_partition() const;
};

/// Uniformly random subset of floor(ratio * n_total) masked patches.
MaskPlan sample_mask(std::size_t n_total, double ratio, std::uint64_t seed);

/// Visible patches, in index order.
Matrix<float> apply_mask(const PatchGrid& g, const MaskPlan& m);

struct DecoderConfig {
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  /// Standardize each target patch to zero mean / unit variance.
  bool normalize_targets = false;

  std::size_t mlp_hidden() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }
  std::vector<std::string> validate() const;
};

template <typename T>
struct DecoderTrace {
  std::vector<std::size_t> visible_idx;
  std::vector<std::size_t> masked_idx;
  Matrix<T> enc_tokens;
  nn::StackCache<T> stack;
  nn::LayerNormCache<T> norm;
  Matrix<T> normed;  // (N + 1) x decoder dim
};

/// Lightweight decoder: embeds encoder tokens, restores all N positions with
/// a shared learned mask token, re-adds its own positional vectors, and
/// predicts every patch.
template <typename T>
class MaeDecoder {
 public:
  static void declare(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                      ParamStore<T>& store, Rng& rng);
  MaeDecoder(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg, ParamStore<T>& store);

  /// enc_tokens: class token + visible tokens (encoder output). Returns
  /// N x patch_volume predictions; with masked_only, visible rows stay zero.
  Matrix<T> forward(const Matrix<T>& enc_tokens, const MaskPlan& plan, DecoderTrace<T>* trace,
                    bool masked_only = false) const;
  /// d_recon must be zero on visible rows. Returns d(enc_tokens).
  Matrix<T> backward(const DecoderTrace<T>& trace, const Matrix<T>& d_recon) const;

 private:
  std::size_t n_patches_;
  nn::Linear<T> embed_;
  Parameter<T>* mask_token_;
  Parameter<T>* pos_;
  nn::TransformerStack<T> stack_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> head_;
};

template <typename T>
struct MaskedMse {
  double loss = 0.0;
  Matrix<T> d_recon;  // gradient w.r.t. predictions; zero on visible rows
};

/// Mean squared error over the masked patches only.
template <typename T>
MaskedMse<T> masked_mse(const Matrix<T>& recon, const Matrix<T>& target,
                        std::span<const std::size_t> masked_idx);

/// Per-patch standardized copy of `patches` (used when normalize_targets).
template <typename T>
Matrix<T> standardize_patches(const Matrix<T>& patches);

struct ReconstructionOutput {
  Matrix<float> recon_patches;
  Matrix<float> masked_recon;
  std::vector<std::size_t> masked_idx;
  double loss = 0.0;
};

ReconstructionOutput mae_forward(const Volume3D& v, const MaskPlan& m, const VisualEncoder<float>& enc,
                                 const MaeDecoder<float>& dec, const DecoderConfig& dcfg);

/// Loss for one volume; with_grad accumulates grad_scale * dL/dθ.
template <typename T>
double mae_loss_and_grad(const VisualEncoder<T>& enc, const MaeDecoder<T>& dec,
                         const DecoderConfig& dcfg, const Matrix<T>& patches, const MaskPlan& plan,
                         double grad_scale, bool with_grad);

struct MaeTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double base_lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;
  double min_lr = 0.0;
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr_last = 0.0;
  double variant_structured_frac = -1.0;  // stage 2 only
};

struct TrainResult {
  std::vector<EpochStats> trace;
  std::size_t steps = 0;
};

/// Parameters for stage 1: "visual.*" and "decoder.*".
ParamStore<float> init_mae_params(const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                                  std::uint64_t seed);

TrainResult train_mae(std::span<const Volume3D> corpus, ParamStore<float>& params,
                      const VisualEncoderConfig& vcfg, const DecoderConfig& dcfg,
                      const MaeTrainConfig& cfg,
                      const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace cardioclip
