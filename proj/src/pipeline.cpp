// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "cardioclip/checkpoint.hpp"
#include "cardioclip/clip.hpp"
#include "cardioclip/errors.hpp"
#include "cardioclip/eval.hpp"
#include "cardioclip/gradcheck.hpp"
#include "cardioclip/log.hpp"
#include "cardioclip/mae.hpp"
#include "cardioclip/reports.hpp"
#include "cardioclip/supervision.hpp"
#include "cardioclip/synth.hpp"

namespace cardioclip {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Paths {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path checkpoint(const std::string& stage) const { return root / "checkpoints" / stage; }
  fs::path vocab() const { return root / "vocab.txt"; }
  fs::path trace(const std::string& stage) const { return root / "traces" / (stage + ".jsonl"); }
  fs::path metrics(const std::string& cmd) const { return root / "metrics" / (cmd + ".json"); }
  fs::path manifest(const std::string& cmd) const { return root / "manifests" / (cmd + ".json"); }
  fs::path plot(const std::string& name) const { return root / "plots" / name; }
};

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) ensure_dir(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ------------------------------------------------------------------ corpus

struct CorpusCase {
  std::string case_id;
  std::string free_text;
  std::vector<bool> flags;  // reference labels: generator flags when present, else structurer output
  std::optional<int> grade;
};

struct Corpus {
  std::vector<CorpusCase> cases;
  std::size_t n_train = 0;

  std::span<const CorpusCase> train() const { return {cases.data(), n_train}; }
  std::span<const CorpusCase> held_out() const { return {cases.data() + n_train, cases.size() - n_train}; }
};

Corpus read_corpus(const Paths& paths, const RunConfig& cfg) {
  const auto reports = paths.data() / "reports.jsonl";
  if (!fs::exists(reports)) throw StateError("no corpus at " + reports.string() + " (run `synth` first)");
  Corpus corpus;
  std::map<std::string, int> grades;
  const auto grades_path = paths.data() / "grades.jsonl";
  if (fs::exists(grades_path)) {
    std::ifstream in(grades_path);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        grades[j.at("case_id").get<std::string>()] = j.at("grade").get<int>();
      } catch (const json::exception& e) {
        throw FormatError(grades_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  for (auto& r : read_report_corpus(reports)) {
    CorpusCase c{r.case_id, r.free_text, r.flags, std::nullopt};
    if (c.flags.size() != kNumAbnormalities) c.flags = extract_flags(c.free_text);
    if (auto it = grades.find(c.case_id); it != grades.end()) c.grade = it->second;
    corpus.cases.push_back(std::move(c));
  }
  if (corpus.cases.size() <= cfg.data.n_train) {
    throw StateError("corpus has " + std::to_string(corpus.cases.size()) + " cases; data.n_train = " +
                     std::to_string(cfg.data.n_train) + " leaves no held-out cases");
  }
  corpus.n_train = cfg.data.n_train;
  return corpus;
}

std::vector<Volume3D> load_volumes(const Paths& paths, std::span<const CorpusCase> cases, const RunConfig& cfg) {
  std::vector<Volume3D> vols;
  vols.reserve(cases.size());
  for (const auto& c : cases) {
    Volume3D v = normalize_intensity(load_volume(paths.data() / "volumes" / (c.case_id + ".ccv1")), cfg.data.hu_lo,
                                     cfg.data.hu_hi);
    if (v.dims != cfg.visual.input_dims) {
      throw ShapeError("volume " + c.case_id + " does not match visual.input_dims");
    }
    vols.push_back(std::move(v));
  }
  return vols;
}

/// Structurer output, taken from data/structured.jsonl when present.
std::vector<StructuredReport> structured_reports(const Paths& paths, std::span<const CorpusCase> cases) {
  std::map<std::string, StructuredReport> stored;
  const auto path = paths.data() / "structured.jsonl";
  if (fs::exists(path)) {
    for (auto& r : read_report_corpus(path)) stored[r.case_id] = StructuredReport{r.case_id, r.structured, r.flags};
  }
  std::vector<StructuredReport> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    auto it = stored.find(c.case_id);
    if (it != stored.end() && validate_structured(it->second)) {
      out.push_back(it->second);
    } else {
      out.push_back(structure_report({c.case_id, c.free_text}));
    }
  }
  return out;
}

// ----------------------------------------------------------------- metrics

struct MetricSink {
  const RunContext& ctx;
  std::string digest;
  ordered_json list = ordered_json::array();

  void add(std::string name, std::vector<std::pair<std::string, std::optional<double>>> values, std::size_t n,
           std::optional<std::size_t> k = std::nullopt, std::optional<int> threshold = std::nullopt) {
    MetricReport r{std::move(name), std::move(values), k, threshold, n, ctx.config.seed, digest};
    list.push_back(to_json(r));
  }
};

std::optional<double> safe_auroc(std::span<const double> scores, std::span<const int> labels, const std::string& what) {
  try {
    return auroc(scores, labels);
  } catch (const UndefinedMetricError&) {
    warn(what + ": AUROC undefined (single class present)");
    return std::nullopt;
  }
}

void progress(const RunContext& ctx, const std::string& stage, const EpochStats& e, std::size_t epochs) {
  if (ctx.quiet) return;
  std::fprintf(stderr, "[%s] epoch %zu/%zu mean_loss %.6g lr %.3g\n", stage.c_str(), e.epoch + 1, epochs, e.mean_loss,
               e.lr_last);
}

std::string trace_line(const EpochStats& e, bool stage2) {
  ordered_json j{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr_last", e.lr_last}};
  if (stage2) j["variant_structured_frac"] = e.variant_structured_frac;
  return j.dump() + "\n";
}

// ------------------------------------------------------------------ models

struct LoadedClip {
  ParamStore<float> params;
  Vocabulary vocab;
  TextEncoderConfig tcfg;
};

LoadedClip load_clip(const Paths& paths, const RunContext& ctx, const std::string& digest) {
  LoadedClip m;
  m.params = load_checkpoint_checked(paths.checkpoint("clip"), digest, ctx.force).params;
  m.vocab = Vocabulary::load(paths.vocab());
  m.tcfg = ctx.config.text;
  m.tcfg.vocab_size = m.vocab.size();
  if (!m.params.contains("text.token_embed") || m.params.at("text.token_embed").shape.at(0) != m.vocab.size())
    throw StateError("stage-2 checkpoint does not match " + paths.vocab().string());
  return m;
}

std::vector<const Volume3D*> pointers(const std::vector<Volume3D>& vols) {
  std::vector<const Volume3D*> out;
  for (const auto& v : vols) out.push_back(&v);
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_synth(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig cfg = ctx.config.with_derived_seeds();
  const auto cases = generate_corpus(cfg.synth);
  write_corpus(cases, paths.data(), cfg.data.hu_lo, cfg.data.hu_hi);
  const auto& cat = default_catalog();
  std::vector<std::pair<std::string, std::optional<double>>> prevalence;
  for (std::size_t d = 0; d < kNumAbnormalities; ++d) {
    std::size_t pos = 0;
    for (const auto& c : cases) pos += c.flags[d] ? 1 : 0;
    prevalence.emplace_back(cat.names[d], static_cast<double>(pos) / static_cast<double>(cases.size()));
  }
  sink.add("prevalence", std::move(prevalence), cases.size());
  std::vector<std::pair<std::string, std::optional<double>>> hist;
  std::size_t graded = 0;
  for (int g = 1; g <= kCacGrades; ++g) {
    std::size_t n = 0;
    for (const auto& c : cases) n += (c.grade && *c.grade == g) ? 1 : 0;
    graded += n;
    hist.emplace_back("grade_" + std::to_string(g), static_cast<double>(n));
  }
  sink.add("cac_grade_counts", std::move(hist), cases.size());
  sink.add("graded_fraction", {{"graded", static_cast<double>(graded) / static_cast<double>(cases.size())}},
           cases.size());
}

void cmd_structure(const RunContext&, const Paths& paths, MetricSink& sink) {
  const auto records = read_report_corpus(paths.data() / "reports.jsonl");
  std::vector<ReportRecord> out;
  std::vector<std::size_t> correct(kNumAbnormalities, 0);
  std::size_t exact = 0, labelled = 0;
  for (const auto& r : records) {
    const StructuredReport s = structure_report({r.case_id, r.free_text});
    if (r.flags.size() == kNumAbnormalities) {
      ++labelled;
      bool all = true;
      for (std::size_t d = 0; d < kNumAbnormalities; ++d) {
        const bool ok = s.flags[d] == r.flags[d];
        correct[d] += ok ? 1 : 0;
        all = all && ok;
      }
      exact += all ? 1 : 0;
    }
    out.push_back({r.case_id, r.free_text, s.statements, s.flags});
  }
  write_report_corpus(out, paths.data() / "structured.jsonl");
  if (labelled > 0) {
    const auto& cat = default_catalog();
    std::vector<std::pair<std::string, std::optional<double>>> acc;
    for (std::size_t d = 0; d < kNumAbnormalities; ++d)
      acc.emplace_back(cat.names[d], static_cast<double>(correct[d]) / static_cast<double>(labelled));
    acc.emplace_back("all_flags", static_cast<double>(exact) / static_cast<double>(labelled));
    sink.add("structurer_flag_accuracy", std::move(acc), labelled);
  } else {
    sink.add("structured_reports", {{"count", static_cast<double>(out.size())}}, out.size());
  }
}

void cmd_pretrain_mae(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig cfg = ctx.config.with_derived_seeds();
  const Corpus corpus = read_corpus(paths, cfg);
  const auto vols = load_volumes(paths, corpus.train(), cfg);
  ParamStore<float> params = init_mae_params(cfg.visual, cfg.decoder, cfg.mae.seed);
  std::string trace;
  const auto result = train_mae(vols, params, cfg.visual, cfg.decoder, cfg.mae, [&](const EpochStats& e) {
    trace += trace_line(e, false);
    progress(ctx, "pretrain-mae", e, cfg.mae.epochs);
  });
  write_text(paths.trace("mae"), trace);
  save_checkpoint(params, "mae", sink.digest, paths.checkpoint("mae"));
  const double first = result.trace.front().mean_loss, last = result.trace.back().mean_loss;
  sink.add("mae_loss", {{"first_epoch", first}, {"final_epoch", last}, {"ratio", last / first}}, vols.size());
  sink.add("optimizer_steps", {{"steps", static_cast<double>(result.steps)}}, vols.size());
}

void cmd_pretrain_clip(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig cfg = ctx.config.with_derived_seeds();
  const Corpus corpus = read_corpus(paths, cfg);
  const auto stage1 = load_checkpoint_checked(paths.checkpoint("mae"), sink.digest, ctx.force);
  const auto vols = load_volumes(paths, corpus.train(), cfg);
  const auto structured = structured_reports(paths, corpus.train());

  std::vector<std::string> texts;
  for (std::size_t i = 0; i < corpus.n_train; ++i) {
    texts.push_back(corpus.cases[i].free_text);
    texts.push_back(structured_text(structured[i]));
  }
  const Vocabulary vocab = Vocabulary::build(texts);
  vocab.save(paths.vocab());
  TextEncoderConfig tcfg = cfg.text;
  tcfg.vocab_size = vocab.size();

  ParamStore<float> params = init_clip_params(cfg.visual, tcfg, cfg.clip.seed);
  // Stage-1 encoder weights; the stage-1 projection head was never trained.
  for (const auto& p : stage1.params.items()) {
    if (!p.name.starts_with("visual.") || p.name.starts_with("visual.proj.")) continue;
    auto& dst = params.at(p.name);
    if (dst.shape != p.shape) throw ShapeError("stage-1 tensor " + p.name + " does not match the visual config");
    dst.value = p.value;
  }

  std::vector<PairExample> pairs;
  for (std::size_t i = 0; i < corpus.n_train; ++i)
    pairs.push_back({corpus.cases[i].case_id, &vols[i], corpus.cases[i].free_text, structured[i]});
  std::string trace;
  double frac_sum = 0.0;
  const auto result = train_clip(pairs, params, cfg.visual, tcfg, vocab, cfg.clip, [&](const EpochStats& e) {
    trace += trace_line(e, true);
    frac_sum += e.variant_structured_frac;
    progress(ctx, "pretrain-clip", e, cfg.clip.epochs);
  });
  write_text(paths.trace("clip"), trace);
  save_checkpoint(params, "clip", sink.digest, paths.checkpoint("clip"));
  const double first = result.trace.front().mean_loss, last = result.trace.back().mean_loss;
  sink.add("clip_loss", {{"first_epoch", first}, {"final_epoch", last}}, pairs.size());
  sink.add("variant_structured_frac", {{"mean", frac_sum / static_cast<double>(result.trace.size())}}, pairs.size());
  sink.add("vocab_size", {{"words", static_cast<double>(vocab.size())}}, pairs.size());
}

void cmd_eval_zeroshot(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig& cfg = ctx.config;
  const Corpus corpus = read_corpus(paths, cfg);
  LoadedClip m = load_clip(paths, ctx, sink.digest);
  const ClipModel model(cfg.visual, m.tcfg, m.params, m.vocab);
  const auto held = corpus.held_out();
  const auto vols = load_volumes(paths, held, cfg);
  const auto embs = model.images(pointers(vols));
  const auto& cat = default_catalog();
  std::vector<std::pair<std::string, std::optional<double>>> aucs, accs;
  for (std::size_t d = 0; d < kNumAbnormalities; ++d) {
    const auto [pos_prompt, neg_prompt] = make_prompt_pair(cat.names[d]);
    const Embedding ep = model.text(pos_prompt), en = model.text(neg_prompt);
    std::vector<double> scores;
    std::vector<int> labels;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < held.size(); ++i) {
      const ZeroShotResult r = zero_shot_decide(embs[i], ep, en);
      scores.push_back(r.score());
      labels.push_back(held[i].flags[d] ? 1 : 0);
      correct += r.decision == held[i].flags[d] ? 1 : 0;
    }
    aucs.emplace_back(cat.names[d], safe_auroc(scores, labels, "zero-shot " + cat.names[d]));
    accs.emplace_back(cat.names[d], static_cast<double>(correct) / static_cast<double>(held.size()));
  }
  sink.add("zero_shot_auroc", std::move(aucs), held.size());
  sink.add("zero_shot_accuracy", std::move(accs), held.size());
}

void cmd_eval_retrieval(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig& cfg = ctx.config;
  const Corpus corpus = read_corpus(paths, cfg);
  LoadedClip m = load_clip(paths, ctx, sink.digest);
  const ClipModel model(cfg.visual, m.tcfg, m.params, m.vocab);
  const auto held = corpus.held_out();
  const auto vols = load_volumes(paths, held, cfg);
  const auto structured = structured_reports(paths, held);
  std::vector<std::string> ids, texts;
  for (std::size_t i = 0; i < held.size(); ++i) {
    ids.push_back(held[i].case_id);
    texts.push_back(structured_text(structured[i]));
  }
  const auto img = model.images(pointers(vols));
  const auto txt = model.texts(texts);
  std::vector<RankedList> i2t, t2i;
  for (std::size_t i = 0; i < held.size(); ++i) {
    i2t.push_back(image_to_text_retrieve(img[i], ids[i], txt, ids));
    t2i.push_back(text_to_image_retrieve(txt[i], ids[i], img, ids));
  }
  const std::size_t k = cfg.eval.recall_k;
  sink.add("recall_at_k",
           {{"image_to_text", mean_recall_at_k(i2t, ids, k)},
            {"text_to_image", mean_recall_at_k(t2i, ids, k)},
            {"chance", std::min(1.0, static_cast<double>(k) / static_cast<double>(held.size()))}},
           held.size(), k);

  const auto& cat = default_catalog();
  std::vector<std::pair<std::string, std::optional<double>>> prec, prev;
  for (std::size_t d = 0; d < kNumAbnormalities; ++d) {
    std::set<std::string> positives;
    for (const auto& c : held)
      if (c.flags[d]) positives.insert(c.case_id);
    const KeywordResult r = keyword_retrieve(cat.names[d], img, ids, positives, cfg.eval.precision_k, model);
    prec.emplace_back(cat.names[d], r.precision);
    prev.emplace_back(cat.names[d], static_cast<double>(positives.size()) / static_cast<double>(held.size()));
  }
  sink.add("keyword_precision_at_k", std::move(prec), held.size(), cfg.eval.precision_k);
  sink.add("prevalence", std::move(prev), held.size());
}

std::vector<std::size_t> graded_indices(std::span<const CorpusCase> cases) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases[i].grade) idx.push_back(i);
  return idx;
}

void add_ordinal(MetricSink& sink, const std::string& name, std::span<const GradeCase> cases) {
  for (const auto& t : ordinal_auroc(cases, kCacGrades)) {
    if (!t.value) warn(name + ": threshold " + std::to_string(t.threshold) + " has one class only");
    sink.add(name, {{"auroc", t.value}}, cases.size(), std::nullopt, t.threshold);
  }
}

void cmd_eval_cac(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig& cfg = ctx.config;
  const Corpus corpus = read_corpus(paths, cfg);
  LoadedClip m = load_clip(paths, ctx, sink.digest);
  const ClipModel model(cfg.visual, m.tcfg, m.params, m.vocab);
  const auto held = corpus.held_out();
  const auto idx = graded_indices(held);
  if (idx.empty()) throw StateError("eval-cac: no graded held-out cases");
  std::vector<CorpusCase> graded;
  for (auto i : idx) graded.push_back(held[i]);
  const auto vols = load_volumes(paths, graded, cfg);
  const Embedding prompt = model.text(kCacPrompt);
  std::vector<GradeCase> cases;
  for (std::size_t i = 0; i < graded.size(); ++i)
    cases.push_back({graded[i].case_id, *graded[i].grade, cac_confidence(model.image(vols[i]), prompt)});
  add_ordinal(sink, "cac_zero_shot_ordinal_auroc", cases);
  ensure_dir(paths.plot("").parent_path());
  write_grade_plot(cases, paths.plot("cac_zero_shot"), "Zero-shot CAC confidence by grade");
}

void cmd_finetune(const RunContext& ctx, const Paths& paths, MetricSink& sink) {
  const RunConfig cfg = ctx.config.with_derived_seeds();
  const Corpus corpus = read_corpus(paths, cfg);
  const auto stage2 = load_checkpoint_checked(paths.checkpoint("clip"), sink.digest, ctx.force);
  const ParamStore<float> visual = stage2.params.subset("visual.");

  std::vector<CorpusCase> train_cases, test_cases;
  for (auto i : graded_indices(corpus.train())) train_cases.push_back(corpus.train()[i]);
  for (auto i : graded_indices(corpus.held_out())) test_cases.push_back(corpus.held_out()[i]);
  if (train_cases.empty() || test_cases.empty()) throw StateError("finetune: need graded cases in both splits");
  const auto train_vols = load_volumes(paths, train_cases, cfg);
  const auto test_vols = load_volumes(paths, test_cases, cfg);
  std::vector<LabeledVolume> train;
  for (std::size_t i = 0; i < train_cases.size(); ++i) train.push_back({&train_vols[i], *train_cases[i].grade - 1});

  const auto result = finetune_classifier(train, visual, cfg.visual, cfg.finetune);
  std::string trace;
  for (const auto& e : result.trace) {
    trace += trace_line(e, false);
    progress(ctx, "finetune", e, cfg.finetune.epochs);
  }
  write_text(paths.trace("finetune"), trace);
  save_checkpoint(result.params, "finetune", sink.digest, paths.checkpoint("finetune"));

  ParamStore<float> params = result.params;
  const Classifier clf(cfg.visual, cfg.finetune.classes, params);
  std::vector<GradeCase> cases;
  for (std::size_t i = 0; i < test_cases.size(); ++i)
    cases.push_back({test_cases[i].case_id, *test_cases[i].grade, clf.score(test_vols[i])});
  add_ordinal(sink, "cac_finetuned_ordinal_auroc", cases);
  sink.add("finetune_train_accuracy", {{"accuracy", result.train_accuracy}}, train.size());
  ensure_dir(paths.plot("").parent_path());
  write_grade_plot(cases, paths.plot("cac_finetuned"), "Fine-tuned CAC score by grade");
}

bool cmd_gradcheck(const RunContext& ctx, MetricSink& sink) {
  const auto& g = ctx.config.gradcheck;
  const ToyGradcheck r = toy_gradcheck(g, substream_seed(ctx.config.seed, "gradcheck"));
  sink.add("gradcheck_max_rel_error", {{"mae", r.mae_max_rel_error}, {"clip", r.clip_max_rel_error}}, r.probes);
  const bool ok = r.mae_max_rel_error < g.tolerance && r.clip_max_rel_error < g.tolerance;
  if (!ok) {
    std::fprintf(stderr, "gradcheck: max relative error above %.3g (mae %.3g at %s, clip %.3g at %s)\n", g.tolerance,
                 r.mae_max_rel_error, r.mae_worst.c_str(), r.clip_max_rel_error, r.clip_worst.c_str());
  }
  return ok;
}

}  // namespace

ToyGradcheck toy_gradcheck(const GradcheckConfig& cfg, std::uint64_t seed) {
  VisualEncoderConfig v;
  v.input_dims = {16, 16, 16};
  v.patch_size = {4, 4, 4};
  v.embed_dim = 8;
  v.depth = 1;
  v.heads = 2;
  v.proj_dim = 6;
  v.input_mean = 0.5;
  v.input_std = 0.25;
  DecoderConfig d;
  d.embed_dim = 8;
  d.depth = 1;
  d.heads = 2;
  TextEncoderConfig t;
  t.vocab_size = 20;
  t.max_len = 8;
  t.embed_dim = 8;
  t.depth = 1;
  t.heads = 2;
  t.proj_dim = 6;

  Rng data(substream_seed(seed, "data"));
  auto random_volume = [&] {
    Volume3D vol = Volume3D::zeros(v.input_dims);
    for (auto& x : vol.voxels) x = static_cast<float>(data.uniform());
    return vol;
  };
  auto jitter = [&](ParamStore<double>& store, const char* name) {
    Rng r(substream_seed(seed, name));
    for (auto& p : store.items())
      for (auto& x : p.value) x += cfg.perturb * r.normal();
  };

  ToyGradcheck out;
  out.probes = cfg.probes;

  auto mae_store = init_mae_params(v, d, substream_seed(seed, "mae-init")).cast<double>();
  jitter(mae_store, "mae-jitter");
  const auto patches = volume_patches<double>(random_volume(), v);
  const MaskPlan plan = sample_mask(patches.rows(), 0.75, substream_seed(seed, "mask"));
  const VisualEncoder<double> enc(v, mae_store);
  const MaeDecoder<double> dec(v, d, mae_store);
  const auto r1 = gradient_check(
      mae_store, [&](bool g) { return mae_loss_and_grad(enc, dec, d, patches, plan, 1.0, g); }, cfg.probes, cfg.eps,
      substream_seed(seed, "probe-mae"));
  out.mae_max_rel_error = r1.max_rel_error;
  out.mae_worst = r1.worst_param;

  auto clip_store = init_clip_params(v, t, substream_seed(seed, "clip-init")).cast<double>();
  jitter(clip_store, "clip-jitter");
  const VisualEncoder<double> venc(v, clip_store);
  const TextEncoder<double> tenc(t, clip_store);
  std::vector<Matrix<double>> batch;
  std::vector<TokenSequence> texts;
  std::vector<PathologyVector> vecs;
  for (std::size_t i = 0; i < 3; ++i) {
    batch.push_back(volume_patches<double>(random_volume(), v));
    TokenSequence s;
    s.ids.assign(t.max_len, Vocabulary::kPad);
    s.ids[0] = Vocabulary::kCls;
    s.length = 3 + i;
    for (std::size_t k = 1; k < s.length; ++k) s.ids[k] = static_cast<std::int32_t>(3 + data.index(t.vocab_size - 3));
    texts.push_back(std::move(s));
    std::vector<bool> flags(kNumAbnormalities);
    for (std::size_t k = 0; k < flags.size(); ++k) flags[k] = data.bernoulli(0.5);
    vecs.push_back(pathology_vector(flags));
  }
  const auto targets = targets_from_affinity(affinity_matrix(vecs));
  const auto r2 = gradient_check(
      clip_store, [&](bool g) { return clip_loss_and_grad<double>(venc, tenc, batch, texts, targets, 0.5, g); },
      cfg.probes, cfg.eps, substream_seed(seed, "probe-clip"));
  out.clip_max_rel_error = r2.max_rel_error;
  out.clip_worst = r2.worst_param;
  return out;
}

fs::path resolve_output_root(const fs::path& fallback) {
  if (const char* env = std::getenv("CARDIOCLIP_OUT"); env != nullptr && *env != '\0') return fs::path(env);
  return fallback;
}

CommandResult run_command(const std::string& command, const RunContext& ctx) {
  const auto& cmds = pipeline_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end())
    throw std::invalid_argument("unknown command '" + command + "'");
  if (auto errs = ctx.config.validate(); !errs.empty()) throw ConfigError(std::move(errs));

  const Paths paths{ctx.out};
  ensure_dir(ctx.out);
  write_text(ctx.out / "config.json", to_json(ctx.config).dump(2) + "\n");

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  MetricSink sink{ctx, config_digest(ctx.config)};
  bool ok = true;
  if (command == "synth") cmd_synth(ctx, paths, sink);
  else if (command == "structure-reports") cmd_structure(ctx, paths, sink);
  else if (command == "pretrain-mae") cmd_pretrain_mae(ctx, paths, sink);
  else if (command == "pretrain-clip") cmd_pretrain_clip(ctx, paths, sink);
  else if (command == "eval-zeroshot") cmd_eval_zeroshot(ctx, paths, sink);
  else if (command == "eval-retrieval") cmd_eval_retrieval(ctx, paths, sink);
  else if (command == "eval-cac") cmd_eval_cac(ctx, paths, sink);
  else if (command == "finetune") cmd_finetune(ctx, paths, sink);
  else ok = cmd_gradcheck(ctx, sink);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  CommandResult result;
  result.ok = ok;
  result.metrics = ordered_json{{"command", command},
                                {"config_digest", sink.digest},
                                {"seed", ctx.config.seed},
                                {"metrics", std::move(sink.list)}};
  write_text(paths.metrics(command), result.metrics.dump(2) + "\n");
  const ordered_json manifest{{"command", command},
                              {"version", ctx.version},
                              {"config_digest", sink.digest},
                              {"seed", ctx.config.seed},
                              {"started_at", started},
                              {"duration_seconds", seconds},
                              {"ok", ok},
                              {"config", "config.json"},
                              {"metrics", fs::relative(paths.metrics(command), ctx.out).generic_string()}};
  write_text(paths.manifest(command), manifest.dump(2) + "\n");
  return result;
}

}  // namespace cardioclip
