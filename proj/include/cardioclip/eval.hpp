// SPDX-License-Identifier: Apache-2.0
//
// Downstream evaluation: zero-shot prompts, retrieval, rank metrics, CAC
// confidence and supervised fine-tuning.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cardioclip/encoders.hpp"
#include "cardioclip/mae.hpp"
#include "cardioclip/params.hpp"
#include "cardioclip/reports.hpp"
#include "cardioclip/volume.hpp"

namespace cardioclip {

// ----------------------------------------------------------------- metrics

struct ScoredCase {
  std::string case_id;
  double score = 0.0;
  int label = 0;  // binary: nonzero is positive
};

/// Mann-Whitney statistic: P(score_pos > score_neg), ties counted 1/2.
double auroc(std::span<const ScoredCase> cases);
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RankedList {
  std::string query_id;
  std::vector<std::string> ranked_ids;
  std::vector<std::size_t> ranked_index;  // positions in the pool
  std::vector<double> scores;             // non-increasing
};

/// Descending by score; equal scores keep pool order.
RankedList rank_pool(std::string query_id, std::span<const std::string> pool_ids, std::span<const double> scores);

/// K larger than the list is clamped with a warning.
int recall_at_k(const RankedList& ranked, const std::string& relevant_id, std::size_t k);
double mean_recall_at_k(std::span<const RankedList> lists, std::span<const std::string> relevant_ids, std::size_t k);
double precision_at_k(const RankedList& ranked, const std::set<std::string>& positive_ids, std::size_t k);

struct GradeCase {
  std::string case_id;
  int grade = 1;
  double score = 0.0;
};

struct ThresholdAuroc {
  int threshold = 0;
  std::optional<double> value;  // empty when one side has no cases
};

/// AUROC of (grade > t) for t = 1..grades-1.
std::vector<ThresholdAuroc> ordinal_auroc(std::span<const GradeCase> cases, int grades = 5);

// ------------------------------------------------------------------- model

/// Frozen view over stage-2 parameters for inference.
class ClipModel {
 public:
  ClipModel(const VisualEncoderConfig& vcfg, const TextEncoderConfig& tcfg, ParamStore<float>& params,
            const Vocabulary& vocab);

  Embedding image(const Volume3D& v) const;
  Embedding text(std::string_view s) const;
  std::vector<Embedding> images(std::span<const Volume3D* const> vs) const;
  std::vector<Embedding> texts(std::span<const std::string> ss) const;

  const VisualEncoder<float>& visual() const { return venc_; }

 private:
  VisualEncoder<float> venc_;
  TextEncoder<float> tenc_;
  const Vocabulary* vocab_;
};

struct ZeroShotResult {
  bool decision = false;
  double s_p = 0.0;
  double s_n = 0.0;
  double score() const { return s_p - s_n; }
};

/// Decision is s_p > s_n; an exact tie is negative and logs a warning.
ZeroShotResult zero_shot_decide(const Embedding& image, const Embedding& pos_prompt, const Embedding& neg_prompt);
ZeroShotResult zero_shot_classify(const Volume3D& v, std::string_view name, const ClipModel& model,
                                  const AbnormalityCatalog& cat = default_catalog());

RankedList image_to_text_retrieve(const Embedding& query, std::string query_id, std::span<const Embedding> pool,
                                  std::span<const std::string> pool_ids);
RankedList image_to_text_retrieve(const Volume3D& query, std::string query_id, std::span<const std::string> pool_texts,
                                  std::span<const std::string> pool_ids, const ClipModel& model);
RankedList text_to_image_retrieve(const Embedding& query, std::string query_id, std::span<const Embedding> pool,
                                  std::span<const std::string> pool_ids);
RankedList text_to_image_retrieve(std::string_view query, std::string query_id, std::span<const Volume3D* const> pool,
                                  std::span<const std::string> pool_ids, const ClipModel& model);

struct KeywordResult {
  RankedList ranked;
  double precision = 0.0;
};

/// Ranks images against "There is {name}" and scores P@K against `positive_ids`.
KeywordResult keyword_retrieve(std::string_view name, std::span<const Embedding> pool,
                               std::span<const std::string> pool_ids, const std::set<std::string>& positive_ids,
                               std::size_t k, const ClipModel& model, const AbnormalityCatalog& cat = default_catalog());

inline constexpr const char* kCacPrompt = "There is Coronary Artery Calcium";

/// Raw cosine between the image and the CAC prompt.
double cac_confidence(const Volume3D& v, const ClipModel& model);
double cac_confidence(const Embedding& image, const Embedding& prompt);

// ------------------------------------------------------------- fine-tuning

struct FinetuneConfig {
  std::size_t classes = 5;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  double encoder_lr = 1e-5;
  double head_lr = 5e-5;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;
  double min_lr = 0.0;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
};

struct LabeledVolume {
  const Volume3D* volume = nullptr;
  int label = 0;
};

/// Visual encoder plus an affine head on the final class token.
class Classifier {
 public:
  Classifier(const VisualEncoderConfig& vcfg, std::size_t classes, ParamStore<float>& params);

  static void declare_head(ParamStore<float>& params, std::size_t embed_dim, std::size_t classes, std::uint64_t seed);

  std::vector<double> probabilities(const Volume3D& v) const;
  /// Expected class index for more than two classes, P(class 1) otherwise.
  double score(const Volume3D& v) const;

  const VisualEncoder<float>& encoder() const { return enc_; }
  const nn::Linear<float>& head() const { return head_; }

 private:
  VisualEncoder<float> enc_;
  nn::Linear<float> head_;
  std::size_t classes_;
};

struct FinetuneResult {
  ParamStore<float> params;  // "visual.*" and "head.*"
  std::vector<EpochStats> trace;
  double train_accuracy = 0.0;
};

/// Trains encoder and head with two learning-rate groups. `visual_params`
/// supplies the initial "visual.*" weights and is not modified.
FinetuneResult finetune_classifier(std::span<const LabeledVolume> train, const ParamStore<float>& visual_params,
                                   const VisualEncoderConfig& vcfg, const FinetuneConfig& cfg);

struct HeadFit {
  ParamStore<float> params;  // "head.*"
  double train_accuracy = 0.0;
  std::size_t steps = 0;
};

/// Softmax regression on fixed features (rows), full-batch AdamW.
HeadFit fit_linear_head(const Matrix<float>& features, std::span<const int> labels, std::size_t classes,
                        std::size_t max_steps, double lr, std::uint64_t seed);

// ----------------------------------------------------------------- reports

struct MetricReport {
  std::string metric;
  std::vector<std::pair<std::string, std::optional<double>>> values;
  std::optional<std::size_t> k;
  std::optional<int> threshold;
  std::size_t n_cases = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

nlohmann::ordered_json to_json(const MetricReport& r);

/// Writes <prefix>.csv and <prefix>.svg: score distribution per grade.
void write_grade_plot(std::span<const GradeCase> cases, const std::filesystem::path& prefix,
                      const std::string& title);

}  // namespace cardioclip
