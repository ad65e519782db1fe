// SPDX-License-Identifier: Apache-2.0
//
// Stage 2: soft-label contrastive alignment of image and report embeddings.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cardioclip/encoders.hpp"
#include "cardioclip/mae.hpp"
#include "cardioclip/matrix.hpp"
#include "cardioclip/params.hpp"
#include "cardioclip/reports.hpp"
#include "cardioclip/rng.hpp"
#include "cardioclip/supervision.hpp"

namespace cardioclip {

struct ContrastiveConfig {
  double temperature = 0.07;
  double variant_prob = 0.5;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  double lr = 1e-5;
  double proj_lr = 5e-5;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;
  double min_lr = 0.0;
  TargetMode target_mode = TargetMode::Remapped;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
};

/// Cosine similarity of every (visual i, text j) pair.
Matrix<double> similarity_matrix(std::span<const Embedding> v, std::span<const Embedding> t);

struct ContrastiveLoss {
  double loss = 0.0;
  double row_term = 0.0;  // image -> text cross-entropy
  double col_term = 0.0;  // text -> image cross-entropy
  Matrix<double> d_sim;   // dL/dS
};

/// Symmetrized soft-target cross-entropy over temperature-scaled similarities.
ContrastiveLoss contrastive_loss(const Matrix<double>& sim, const Matrix<double>& targets, double tau);

struct PairExample {
  std::string case_id;
  const Volume3D* volume = nullptr;
  std::string free_text;
  StructuredReport structured;
};

struct TextVariant {
  std::string text;
  bool structured = false;
};

/// Structured statements with probability variant_prob, else the free text.
TextVariant sample_text_variant(const PairExample& ex, double variant_prob, Rng& rng);

/// Fresh visual + text parameters; visual weights may then be overwritten
/// from a stage-1 checkpoint via ParamStore::merge.
ParamStore<float> init_clip_params(const VisualEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                                   std::uint64_t seed);

/// Batch loss with optional gradient accumulation (scaled by grad_scale).
template <typename T>
double clip_loss_and_grad(const VisualEncoder<T>& venc, const TextEncoder<T>& tenc,
                          std::span<const Matrix<T>> patches, std::span<const TokenSequence> texts,
                          const Matrix<double>& targets, double tau, bool with_grad, double grad_scale = 1.0);

TrainResult train_clip(std::span<const PairExample> pairs, ParamStore<float>& params,
                       const VisualEncoderConfig& vcfg, const TextEncoderConfig& tcfg, const Vocabulary& vocab,
                       const ContrastiveConfig& cfg, const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace cardioclip
