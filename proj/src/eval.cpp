// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cardioclip/errors.hpp"
#include "cardioclip/log.hpp"
#include "cardioclip/nn.hpp"
#include "cardioclip/optim.hpp"
#include "cardioclip/rng.hpp"

namespace cardioclip {

// ----------------------------------------------------------------- metrics

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("auroc: non-finite score at index " + std::to_string(i));
    n_pos += labels[i] != 0;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives (ranks start at 1).
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(n_neg));
}

double auroc(std::span<const ScoredCase> cases) {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& c : cases) {
    s.push_back(c.score);
    l.push_back(c.label);
  }
  return auroc(s, l);
}

RankedList rank_pool(std::string query_id, std::span<const std::string> pool_ids, std::span<const double> scores) {
  if (pool_ids.empty()) throw std::invalid_argument("retrieval: empty pool");
  if (pool_ids.size() != scores.size()) throw std::invalid_argument("retrieval: pool ids and scores differ in length");
  RankedList r;
  r.query_id = std::move(query_id);
  r.ranked_index.resize(scores.size());
  std::iota(r.ranked_index.begin(), r.ranked_index.end(), 0);
  std::stable_sort(r.ranked_index.begin(), r.ranked_index.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i : r.ranked_index) {
    r.ranked_ids.push_back(pool_ids[i]);
    r.scores.push_back(scores[i]);
  }
  return r;
}

namespace {

std::size_t clamp_k(std::size_t k, std::size_t pool, const char* what) {
  if (k < 1) throw std::invalid_argument(std::string(what) + ": K must be >= 1");
  if (k > pool) {
    warn(std::string(what) + ": K=" + std::to_string(k) + " exceeds pool size " + std::to_string(pool) +
         ", clamped");
    return pool;
  }
  return k;
}

}  // namespace

int recall_at_k(const RankedList& ranked, const std::string& relevant_id, std::size_t k) {
  k = clamp_k(k, ranked.ranked_ids.size(), "recall_at_k");
  for (std::size_t i = 0; i < k; ++i)
    if (ranked.ranked_ids[i] == relevant_id) return 1;
  return 0;
}

double mean_recall_at_k(std::span<const RankedList> lists, std::span<const std::string> relevant_ids, std::size_t k) {
  if (lists.empty() || lists.size() != relevant_ids.size())
    throw std::invalid_argument("mean_recall_at_k: need one relevant id per query");
  double hits = 0.0;
  for (std::size_t q = 0; q < lists.size(); ++q) hits += recall_at_k(lists[q], relevant_ids[q], k);
  return hits / static_cast<double>(lists.size());
}

double precision_at_k(const RankedList& ranked, const std::set<std::string>& positive_ids, std::size_t k) {
  k = clamp_k(k, ranked.ranked_ids.size(), "precision_at_k");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += positive_ids.count(ranked.ranked_ids[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::vector<ThresholdAuroc> ordinal_auroc(std::span<const GradeCase> cases, int grades) {
  if (grades < 2) throw std::invalid_argument("ordinal_auroc: need at least 2 grades");
  std::set<int> distinct;
  for (const auto& c : cases) {
    if (c.grade < 1 || c.grade > grades)
      throw std::invalid_argument("ordinal_auroc: grade " + std::to_string(c.grade) + " outside [1, " +
                                  std::to_string(grades) + "]");
    distinct.insert(c.grade);
  }
  if (distinct.size() < 2) throw UndefinedMetricError("ordinal_auroc: grades span fewer than two values");
  std::vector<double> scores;
  for (const auto& c : cases) scores.push_back(c.score);
  std::vector<ThresholdAuroc> out;
  for (int t = 1; t < grades; ++t) {
    std::vector<int> labels;
    for (const auto& c : cases) labels.push_back(c.grade > t ? 1 : 0);
    ThresholdAuroc ta{t, std::nullopt};
    try {
      ta.value = auroc(scores, labels);
    } catch (const UndefinedMetricError&) {
      warn("ordinal_auroc: threshold " + std::to_string(t) + " has a single class");
    }
    out.push_back(ta);
  }
  return out;
}

// ------------------------------------------------------------------- model

ClipModel::ClipModel(const VisualEncoderConfig& vcfg, const TextEncoderConfig& tcfg, ParamStore<float>& params,
                     const Vocabulary& vocab)
    : venc_(vcfg, params), tenc_(tcfg, params), vocab_(&vocab) {}

Embedding ClipModel::image(const Volume3D& v) const { return encode_image(v, venc_); }

Embedding ClipModel::text(std::string_view s) const {
  return encode_text(tokenize(s, *vocab_, tenc_.config().max_len), tenc_);
}

std::vector<Embedding> ClipModel::images(std::span<const Volume3D* const> vs) const {
  std::vector<Embedding> out(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) out[i] = image(*vs[i]);
  return out;
}

std::vector<Embedding> ClipModel::texts(std::span<const std::string> ss) const {
  std::vector<Embedding> out(ss.size());
  for (std::size_t i = 0; i < ss.size(); ++i) out[i] = text(ss[i]);
  return out;
}

ZeroShotResult zero_shot_decide(const Embedding& image, const Embedding& pos_prompt, const Embedding& neg_prompt) {
  ZeroShotResult r;
  r.s_p = cosine(image, pos_prompt);
  r.s_n = cosine(image, neg_prompt);
  if (r.s_p == r.s_n) warn("zero-shot: positive and negative prompt scores tie; deciding negative");
  r.decision = r.s_p > r.s_n;
  return r;
}

ZeroShotResult zero_shot_classify(const Volume3D& v, std::string_view name, const ClipModel& model,
                                  const AbnormalityCatalog& cat) {
  const auto [pos, neg] = make_prompt_pair(name, cat);
  return zero_shot_decide(model.image(v), model.text(pos), model.text(neg));
}

namespace {

RankedList rank_by_cosine(const Embedding& query, std::string query_id, std::span<const Embedding> pool,
                          std::span<const std::string> pool_ids) {
  if (pool.empty()) throw std::invalid_argument("retrieval: empty pool");
  if (pool.size() != pool_ids.size()) throw std::invalid_argument("retrieval: pool ids and embeddings differ");
  std::vector<double> scores(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) scores[i] = cosine(query, pool[i]);
  return rank_pool(std::move(query_id), pool_ids, scores);
}

}  // namespace

RankedList image_to_text_retrieve(const Embedding& query, std::string query_id, std::span<const Embedding> pool,
                                  std::span<const std::string> pool_ids) {
  return rank_by_cosine(query, std::move(query_id), pool, pool_ids);
}

RankedList image_to_text_retrieve(const Volume3D& query, std::string query_id, std::span<const std::string> pool_texts,
                                  std::span<const std::string> pool_ids, const ClipModel& model) {
  if (pool_texts.empty()) throw std::invalid_argument("retrieval: empty pool");
  const auto pool = model.texts(pool_texts);
  return rank_by_cosine(model.image(query), std::move(query_id), pool, pool_ids);
}

RankedList text_to_image_retrieve(const Embedding& query, std::string query_id, std::span<const Embedding> pool,
                                  std::span<const std::string> pool_ids) {
  return rank_by_cosine(query, std::move(query_id), pool, pool_ids);
}

RankedList text_to_image_retrieve(std::string_view query, std::string query_id, std::span<const Volume3D* const> pool,
                                  std::span<const std::string> pool_ids, const ClipModel& model) {
  if (pool.empty()) throw std::invalid_argument("retrieval: empty pool");
  const auto embs = model.images(pool);
  return rank_by_cosine(model.text(query), std::move(query_id), embs, pool_ids);
}

KeywordResult keyword_retrieve(std::string_view name, std::span<const Embedding> pool,
                               std::span<const std::string> pool_ids, const std::set<std::string>& positive_ids,
                               std::size_t k, const ClipModel& model, const AbnormalityCatalog& cat) {
  const auto prompt = make_prompt_pair(name, cat).first;
  KeywordResult r;
  r.ranked = rank_by_cosine(model.text(prompt), prompt, pool, pool_ids);
  r.precision = precision_at_k(r.ranked, positive_ids, k);
  return r;
}

double cac_confidence(const Embedding& image, const Embedding& prompt) { return cosine(image, prompt); }

double cac_confidence(const Volume3D& v, const ClipModel& model) {
  return cac_confidence(model.image(v), model.text(kCacPrompt));
}

// ------------------------------------------------------------- fine-tuning

std::vector<std::string> FinetuneConfig::validate() const {
  std::vector<std::string> errs;
  if (classes < 2) errs.push_back("FinetuneConfig: classes must be >= 2");
  if (epochs < 1) errs.push_back("FinetuneConfig: epochs must be >= 1");
  if (batch < 1) errs.push_back("FinetuneConfig: batch must be >= 1");
  if (!(encoder_lr > min_lr && head_lr > min_lr && min_lr >= 0.0))
    errs.push_back("FinetuneConfig: encoder_lr and head_lr must exceed min_lr >= 0");
  if (!(weight_decay >= 0.0)) errs.push_back("FinetuneConfig: weight_decay must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) errs.push_back("FinetuneConfig: warmup_frac must lie in [0, 1]");
  return errs;
}

void Classifier::declare_head(ParamStore<float>& params, std::size_t embed_dim, std::size_t classes,
                              std::uint64_t seed) {
  Rng rng(substream_seed(seed, "init-head"));
  nn::Linear<float>::declare(params, "head.fc", embed_dim, classes, ParamGroup::Projection, rng);
}

Classifier::Classifier(const VisualEncoderConfig& vcfg, std::size_t classes, ParamStore<float>& params)
    : enc_(vcfg, params), head_(nn::Linear<float>::bind(params, "head.fc")), classes_(classes) {
  if (head_.out_features() != classes || head_.in_features() != vcfg.embed_dim)
    throw ShapeError("classifier head does not match encoder width or class count");
}

namespace {

std::vector<double> softmax(std::span<const float> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

// Mean softmax cross-entropy over rows; fills d_logits (scaled by 1/rows).
double softmax_ce(const Matrix<float>& logits, std::span<const int> labels, Matrix<float>& d_logits,
                  std::size_t* correct) {
  d_logits = Matrix<float>(logits.rows(), logits.cols());
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto p = softmax(logits.row(i));
    const auto y = static_cast<std::size_t>(labels[i]);
    loss -= std::log(std::max(p[y], 1e-300));
    if (correct && static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == y) ++*correct;
    for (std::size_t c = 0; c < p.size(); ++c)
      d_logits(i, c) = static_cast<float>((p[c] - (c == y ? 1.0 : 0.0)) * inv);
  }
  return loss * inv;
}

Matrix<float> row_matrix(std::span<const float> v) {
  Matrix<float> m(1, v.size());
  std::copy(v.begin(), v.end(), m.row(0).begin());
  return m;
}

}  // namespace

std::vector<double> Classifier::probabilities(const Volume3D& v) const {
  const Matrix<float> tokens = enc_.forward_tokens(volume_patches<float>(v, enc_.config()), {}, nullptr);
  const std::vector<float> pooled = enc_.pool(tokens);
  const Matrix<float> logits = head_.forward(row_matrix(pooled));
  return softmax(logits.row(0));
}

double Classifier::score(const Volume3D& v) const {
  const auto p = probabilities(v);
  if (classes_ == 2) return p[1];
  double e = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) e += static_cast<double>(c) * p[c];
  return e;
}

FinetuneResult finetune_classifier(std::span<const LabeledVolume> train, const ParamStore<float>& visual_params,
                                   const VisualEncoderConfig& vcfg, const FinetuneConfig& cfg) {
  if (auto errs = cfg.validate(); !errs.empty()) throw std::invalid_argument(errs.front());
  if (train.empty()) throw std::invalid_argument("finetune_classifier: empty training set");
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].volume == nullptr) throw std::invalid_argument("finetune_classifier: missing volume");
    if (train[i].label < 0 || static_cast<std::size_t>(train[i].label) >= cfg.classes)
      throw std::invalid_argument("finetune_classifier: label " + std::to_string(train[i].label) + " at index " +
                                  std::to_string(i) + " outside [0, " + std::to_string(cfg.classes) + ")");
  }

  FinetuneResult result;
  result.params = visual_params.subset("visual.");
  Classifier::declare_head(result.params, vcfg.embed_dim, cfg.classes, cfg.seed);
  // The head reads pooled features, so the visual projection gets no gradient;
  // without decay its Adam update is exactly zero.
  for (auto& p : result.params.items())
    if (p.name.starts_with("visual.proj.")) p.decay = false;
  const Classifier model(vcfg, cfg.classes, result.params);
  AdamW<float> opt(result.params);

  const std::size_t steps_per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;
  ScheduleConfig enc_sched{cfg.encoder_lr, 0, cfg.epochs * steps_per_epoch, cfg.weight_decay, cfg.min_lr};
  enc_sched.warmup_steps = warmup_from_fraction(cfg.warmup_frac, enc_sched.total_steps);
  ScheduleConfig head_sched = enc_sched;
  head_sched.base_lr = cfg.head_lr;

  // A frozen encoder yields fixed features, so compute them once.
  std::vector<std::vector<float>> cached;
  if (cfg.freeze_encoder) {
    for (const auto& ex : train) {
      const auto tokens = model.encoder().forward_tokens(volume_patches<float>(*ex.volume, vcfg), {}, nullptr);
      cached.push_back(model.encoder().pool(tokens));
    }
  }

  const std::uint64_t order_seed = substream_seed(cfg.seed, "batch-order");
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix64(order_seed + epoch));
    order_rng.shuffle(order);
    double loss_sum = 0.0, lr = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch;
      const std::size_t end = std::min(train.size(), begin + cfg.batch);
      const std::size_t b = end - begin;
      result.params.zero_grad();
      Matrix<float> feats(b, vcfg.embed_dim);
      std::vector<VisualTrace<float>> traces(cfg.freeze_encoder ? 0 : b);
      std::vector<int> labels(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& ex = train[order[begin + k]];
        labels[k] = ex.label;
        std::vector<float> pooled;
        if (cfg.freeze_encoder) {
          pooled = cached[order[begin + k]];
        } else {
          const auto tokens =
              model.encoder().forward_tokens(volume_patches<float>(*ex.volume, vcfg), {}, &traces[k]);
          pooled = model.encoder().pool(tokens);
        }
        std::copy(pooled.begin(), pooled.end(), feats.row(k).begin());
      }
      const Matrix<float> logits = model.head().forward(feats);
      Matrix<float> d_logits;
      const double loss = softmax_ce(logits, labels, d_logits, &correct);
      if (!std::isfinite(loss)) throw NumericError("finetune_classifier: non-finite loss at step " + std::to_string(step));
      loss_sum += loss * static_cast<double>(b);
      const Matrix<float> d_feats = model.head().backward(feats, d_logits, !cfg.freeze_encoder);
      if (!cfg.freeze_encoder) {
        for (std::size_t k = 0; k < b; ++k)
          model.encoder().backward_tokens(traces[k],
                                          model.encoder().pool_backward(traces[k].tokens.rows(), d_feats.row(k)));
      }
      lr = lr_at_step(enc_sched, step);
      opt.step(lr, lr_at_step(head_sched, step), cfg.weight_decay, cfg.freeze_encoder);
      ++step;
    }
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    result.trace.push_back({epoch, loss_sum / static_cast<double>(train.size()), lr, -1.0});
  }
  return result;
}

HeadFit fit_linear_head(const Matrix<float>& features, std::span<const int> labels, std::size_t classes,
                        std::size_t max_steps, double lr, std::uint64_t seed) {
  if (features.rows() == 0 || features.rows() != labels.size())
    throw std::invalid_argument("fit_linear_head: need one label per feature row");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw std::invalid_argument("fit_linear_head: label out of range");
  HeadFit fit;
  Classifier::declare_head(fit.params, features.cols(), classes, seed);
  const auto head = nn::Linear<float>::bind(fit.params, "head.fc");
  AdamW<float> opt(fit.params);
  for (fit.steps = 0; fit.steps < max_steps;) {
    fit.params.zero_grad();
    Matrix<float> d_logits;
    std::size_t correct = 0;
    softmax_ce(head.forward(features), labels, d_logits, &correct);
    fit.train_accuracy = static_cast<double>(correct) / static_cast<double>(features.rows());
    if (correct == features.rows()) break;
    head.backward(features, d_logits, false);
    opt.step(lr, lr, 0.0);
    ++fit.steps;
  }
  return fit;
}

// ----------------------------------------------------------------- reports

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["metric"] = r.metric;
  nlohmann::ordered_json values = nlohmann::ordered_json::object();
  for (const auto& [name, v] : r.values) values[name] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
  j["values"] = values;
  if (r.k) j["k"] = *r.k;
  if (r.threshold) j["threshold"] = *r.threshold;
  j["n_cases"] = r.n_cases;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  return j;
}

void write_grade_plot(std::span<const GradeCase> cases, const std::filesystem::path& prefix, const std::string& title) {
  std::filesystem::path csv_path = prefix, svg_path = prefix;
  csv_path += ".csv";
  svg_path += ".svg";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << "case_id,grade,score\n";
    for (const auto& c : cases) csv << c.case_id << ',' << c.grade << ',' << c.score << '\n';
  }
  double lo = 0.0, hi = 1.0;
  if (!cases.empty()) {
    lo = hi = cases.front().score;
    for (const auto& c : cases) {
      lo = std::min(lo, c.score);
      hi = std::max(hi, c.score);
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  int max_grade = 1;
  for (const auto& c : cases) max_grade = std::max(max_grade, c.grade);
  constexpr double kW = 480, kH = 320, kL = 60, kR = 20, kT = 40, kB = 40;
  auto x_of = [&](int g) { return kL + (kW - kL - kR) * (g - 0.5) / max_grade; };
  auto y_of = [&](double s) { return kH - kB - (kH - kT - kB) * (s - lo) / (hi - lo); };
  std::ofstream svg(svg_path);
  if (!svg) throw IoError("cannot write " + svg_path.string());
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  svg << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int g = 1; g <= max_grade; ++g) {
    svg << "<text x=\"" << x_of(g) << "\" y=\"" << kH - kB + 18 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << g << "</text>\n";
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cases) {
      if (c.grade != g) continue;
      // Deterministic horizontal spread from the running count.
      const double jitter = (static_cast<double>((n * 7) % 11) - 5.0) * 2.5;
      svg << "<circle cx=\"" << x_of(g) + jitter << "\" cy=\"" << y_of(c.score)
          << "\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
      sum += c.score;
      ++n;
    }
    if (n > 0) {
      const double y = y_of(sum / static_cast<double>(n));
      svg << "<line x1=\"" << x_of(g) - 18 << "\" y1=\"" << y << "\" x2=\"" << x_of(g) + 18 << "\" y2=\"" << y
          << "\" stroke=\"firebrick\" stroke-width=\"2\"/>\n";
    }
  }
  std::ostringstream lo_s, hi_s;
  lo_s.precision(3);
  hi_s.precision(3);
  lo_s << lo;
  hi_s << hi;
  svg << "<text x=\"" << kL - 6 << "\" y=\"" << kH - kB << "\" text-anchor=\"end\" font-size=\"11\">" << lo_s.str()
      << "</text>\n";
  svg << "<text x=\"" << kL - 6 << "\" y=\"" << kT + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << hi_s.str()
      << "</text>\n";
  svg << "</svg>\n";
}

}  // namespace cardioclip
