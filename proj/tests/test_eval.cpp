// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "cardioclip/clip.hpp"
#include "cardioclip/errors.hpp"
#include "cardioclip/eval.hpp"
#include "cardioclip/log.hpp"

using namespace cardioclip;

namespace {

double brute_auroc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0, ties = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i]) ++p;
    else ++n;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!l[i] || l[j]) continue;
      if (s[i] > s[j]) ++wins;
      else if (s[i] == s[j]) ++ties;
    }
  }
  return (wins + 0.5 * ties) / (p * n);
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
  return out;
}

struct Tiny {
  VisualEncoderConfig v;
  TextEncoderConfig t;
  Vocabulary vocab;
  ParamStore<float> params;
};

Tiny tiny_model() {
  Tiny m;
  m.v.input_dims = {8, 8, 8};
  m.v.patch_size = {4, 4, 4};
  m.v.embed_dim = 16;
  m.v.depth = 1;
  m.v.heads = 2;
  m.v.proj_dim = 8;
  std::vector<std::string> words;
  for (const auto& n : default_catalog().names) words.push_back(make_prompt_pair(n).second);
  words.emplace_back(kCacPrompt);
  m.vocab = Vocabulary::build(words);
  m.t.vocab_size = m.vocab.size();
  m.t.max_len = 16;
  m.t.embed_dim = 16;
  m.t.depth = 1;
  m.t.heads = 2;
  m.t.proj_dim = 8;
  m.params = init_clip_params(m.v, m.t, 3);
  return m;
}

Volume3D random_volume(Dims3 dims, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D v = Volume3D::zeros(dims);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}) == 0.5);
  CHECK(auroc(std::vector<double>{0.9, 0.2, 0.8, 0.3}, std::vector<int>{1, 0, 0, 1}) == 0.75);
  const std::vector<ScoredCase> cases{{"a", 0.9, 1}, {"b", 0.2, 0}, {"c", 0.8, 0}, {"d", 0.3, 1}};
  CHECK(auroc(cases) == 0.75);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{NAN, 0.2}, std::vector<int>{1, 0}), NumericError);
}

TEST_CASE("auroc equals brute-force pair counting") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(199);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform(0, 20)) / 4.0;  // coarse grid forces ties
      l[i] = rng.bernoulli(0.4);
    }
    l[0] = 1;
    l[1] = 0;
    CHECK(auroc(s, l) == brute_auroc(s, l));
  }
}

TEST_CASE("ordinal auroc examples and relabeling equivalence") {
  const std::vector<GradeCase> g{{"a", 1, 0.1}, {"b", 2, 0.3}, {"c", 3, 0.2}, {"d", 4, 0.8}, {"e", 5, 0.9}};
  const auto r = ordinal_auroc(g);
  REQUIRE(r.size() == 4);
  CHECK(r[0].threshold == 1);
  CHECK(*r[0].value == 1.0);
  CHECK(*r[1].value == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(*r[2].value == 1.0);
  CHECK(*r[3].value == 1.0);

  std::vector<GradeCase> inc, flat;
  for (int i = 0; i < 20; ++i) {
    inc.push_back({"x", 1 + i % 5, double(1 + i % 5)});
    flat.push_back({"x", 1 + i % 5, 0.3});
  }
  for (const auto& t : ordinal_auroc(inc)) CHECK(*t.value == 1.0);
  for (const auto& t : ordinal_auroc(flat)) CHECK(*t.value == 0.5);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GradeCase> cs;
    std::vector<double> s;
    for (int i = 0; i < 60; ++i) {
      cs.push_back({"c", 1 + int(rng.index(5)), rng.uniform()});
      s.push_back(cs.back().score);
    }
    cs[0].grade = 1;
    cs[1].grade = 5;
    for (const auto& t : ordinal_auroc(cs)) {
      std::vector<int> l;
      for (const auto& c : cs) l.push_back(c.grade > t.threshold);
      CHECK(*t.value == auroc(s, l));
    }
  }

  const std::vector<GradeCase> missing{{"a", 1, 0.1}, {"b", 2, 0.3}};
  const auto m = ordinal_auroc(missing);
  CHECK(m[0].value.has_value());
  CHECK_FALSE(m[1].value.has_value());
}

TEST_CASE("recall and precision boundaries") {
  const auto pool = ids(10);
  std::vector<double> scores(10);
  for (std::size_t i = 0; i < 10; ++i) scores[i] = 10.0 - double(i);
  const RankedList r = rank_pool("q", pool, scores);
  CHECK(recall_at_k(r, "id0", 5) == 1);
  CHECK(recall_at_k(r, "id5", 5) == 0);
  CHECK(recall_at_k(r, "id5", 10) == 1);
  CHECK(precision_at_k(r, {"id0", "id1", "id2", "id3", "id4"}, 5) == 1.0);
  CHECK(precision_at_k(r, {}, 5) == 0.0);
  CHECK(precision_at_k(r, {"id1", "id7"}, 4) == 0.25);

  const std::size_t before = warning_count();
  CHECK(recall_at_k(r, "id9", 50) == 1);
  CHECK(warning_count() == before + 1);
}

TEST_CASE("recall is monotone in K and precision matches a brute count") {
  Rng rng(3);
  const auto pool = ids(30);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(30);
    for (auto& x : s) x = rng.uniform();
    const RankedList r = rank_pool("q", pool, s);
    std::set<std::string> pos;
    for (const auto& id : pool)
      if (rng.bernoulli(0.3)) pos.insert(id);
    int prev = 0;
    for (std::size_t k = 1; k <= 30; ++k) {
      const int rec = recall_at_k(r, pool[7], k);
      CHECK(rec >= prev);
      prev = rec;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < k; ++i) hits += pos.count(r.ranked_ids[i]);
      CHECK(precision_at_k(r, pos, k) == double(hits) / double(k));
    }
  }
}

TEST_CASE("random rankings sit at chance") {
  Rng rng(4);
  const std::size_t pool_size = 100, k = 10;
  const auto pool = ids(pool_size);
  std::vector<RankedList> lists;
  std::vector<std::string> relevant;
  double prec = 0;
  std::set<std::string> pos;
  for (std::size_t i = 0; i < 30; ++i) pos.insert(pool[i]);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> s(pool_size);
    for (auto& x : s) x = rng.uniform();
    lists.push_back(rank_pool("q", pool, s));
    relevant.push_back(pool[rng.index(pool_size)]);
    prec += precision_at_k(lists.back(), pos, k);
  }
  CHECK(std::abs(mean_recall_at_k(lists, relevant, k) - 0.10) <= 0.02);
  CHECK(std::abs(prec / 10000.0 - 0.30) <= 0.02);
}

TEST_CASE("ties keep pool order") {
  const auto pool = ids(4);
  const RankedList r = rank_pool("q", pool, std::vector<double>{0.2, 0.5, 0.5, 0.1});
  CHECK(r.ranked_ids == std::vector<std::string>{"id1", "id2", "id0", "id3"});
  CHECK(r.ranked_index == std::vector<std::size_t>{1, 2, 0, 3});
  CHECK(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
}

TEST_CASE("zero-shot decisions and scale invariance") {
  const Embedding img = Embedding::from(std::vector<double>{1.0, 0.5, -0.2});
  const Embedding p = Embedding::from(std::vector<double>{0.9, 0.4, 0.0});
  const Embedding n = Embedding::from(std::vector<double>{-0.3, 1.0, 0.2});
  const auto r = zero_shot_decide(img, p, n);
  CHECK(r.decision);
  CHECK(r.score() == doctest::Approx(r.s_p - r.s_n));
  const Embedding img10 = Embedding::from(std::vector<double>{10.0, 5.0, -2.0});
  const auto r10 = zero_shot_decide(img10, p, n);
  CHECK(r10.decision == r.decision);
  CHECK(r10.score() == doctest::Approx(r.score()).epsilon(1e-12));
  const Embedding p3 = Embedding::from(std::vector<double>{2.7, 1.2, 0.0});
  CHECK(zero_shot_decide(img, p3, n).score() == doctest::Approx(r.score()).epsilon(1e-12));

  const std::size_t before = warning_count();
  const auto tie = zero_shot_decide(img, p, p);
  CHECK_FALSE(tie.decision);
  CHECK(warning_count() == before + 1);
}

TEST_CASE("model-level retrieval, keyword search and CAC confidence") {
  Tiny m = tiny_model();
  const ClipModel model(m.v, m.t, m.params, m.vocab);
  std::vector<Volume3D> vols;
  for (int i = 0; i < 5; ++i) vols.push_back(random_volume(m.v.input_dims, 10 + i));
  std::vector<const Volume3D*> ptrs;
  for (const auto& v : vols) ptrs.push_back(&v);
  const auto embs = model.images(ptrs);
  CHECK(embs.size() == 5);
  for (const auto& e : embs) CHECK(e.vector.size() == m.v.proj_dim);

  const std::vector<std::string> one_text{"There is cardiomegaly"}, one_id{"r0"};
  CHECK(image_to_text_retrieve(vols[0], "q", one_text, one_id, model).ranked_ids == one_id);
  const std::vector<std::string> dup_texts{"There is no cardiomegaly", "There is cardiomegaly", "There is cardiomegaly"};
  const std::vector<std::string> dup_ids{"a", "b", "c"};
  const auto ranked = image_to_text_retrieve(vols[0], "q", dup_texts, dup_ids, model);
  const auto pb = std::find(ranked.ranked_ids.begin(), ranked.ranked_ids.end(), "b");
  REQUIRE(pb + 1 != ranked.ranked_ids.end());
  CHECK(*(pb + 1) == "c");

  const std::vector<const Volume3D*> one_vol{ptrs[0]};
  CHECK(text_to_image_retrieve("There is cardiomegaly", "q", one_vol, one_id, model).ranked_ids == one_id);
  const std::vector<const Volume3D*> dup_vols{ptrs[1], ptrs[0], ptrs[0]};
  const auto tr = text_to_image_retrieve("There is cardiomegaly", "q", dup_vols, dup_ids, model);
  const auto tb = std::find(tr.ranked_ids.begin(), tr.ranked_ids.end(), "b");
  REQUIRE(tb + 1 != tr.ranked_ids.end());
  CHECK(*(tb + 1) == "c");

  const auto pool_ids = ids(5);
  const std::set<std::string> all(pool_ids.begin(), pool_ids.end());
  CHECK(keyword_retrieve("cardiomegaly", embs, pool_ids, all, 3, model).precision == 1.0);
  CHECK_THROWS_AS(keyword_retrieve("pneumothorax", embs, pool_ids, all, 3, model), std::invalid_argument);

  const double c0 = cac_confidence(vols[0], model);
  CHECK(c0 == cac_confidence(vols[0], model));
  CHECK(c0 >= -1.0);
  CHECK(c0 <= 1.0);

  const auto z = zero_shot_classify(vols[0], "cardiomegaly", model);
  CHECK(z.decision == (z.s_p > z.s_n));
}

TEST_CASE("linear head separates separable features") {
  Rng rng(5);
  const std::size_t n = 60, d = 6, classes = 3;
  Matrix<float> x(n, d);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = int(i % classes);
    for (std::size_t j = 0; j < d; ++j) x(i, j) = float(rng.normal() * 0.1 + (j == std::size_t(y[i]) ? 2.0 : 0.0));
  }
  const HeadFit fit = fit_linear_head(x, y, classes, 200, 0.05, 6);
  CHECK(fit.steps <= 200);
  CHECK(fit.train_accuracy == 1.0);
}

TEST_CASE("freezing the encoder only stops encoder updates") {
  Tiny m = tiny_model();
  const ParamStore<float> visual = m.params.subset("visual.");
  std::vector<Volume3D> vols;
  std::vector<LabeledVolume> train;
  for (int i = 0; i < 10; ++i) vols.push_back(random_volume(m.v.input_dims, 40 + i));
  for (int i = 0; i < 10; ++i) train.push_back({&vols[std::size_t(i)], i % 5});
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 5;
  cfg.encoder_lr = 1e-3;
  cfg.head_lr = 1e-3;
  cfg.freeze_encoder = true;
  const auto frozen = finetune_classifier(train, visual, m.v, cfg);
  cfg.freeze_encoder = false;
  const auto free = finetune_classifier(train, visual, m.v, cfg);
  for (const auto& p : visual.items()) {
    CHECK_MESSAGE(frozen.params.at(p.name).value == p.value, p.name);
  }
  bool encoder_moved = false;
  for (const auto& p : visual.items()) encoder_moved = encoder_moved || free.params.at(p.name).value != p.value;
  CHECK(encoder_moved);
  CHECK(frozen.params.contains("head.fc.weight"));
  CHECK(frozen.params.at("head.fc.weight").shape == std::vector<std::size_t>{m.v.embed_dim, 5});

  ParamStore<float> params = frozen.params;
  const Classifier clf(m.v, 5, params);
  const auto probs = clf.probabilities(vols[0]);
  CHECK(probs.size() == 5);
  CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  const double expected = 0 * probs[0] + 1 * probs[1] + 2 * probs[2] + 3 * probs[3] + 4 * probs[4];
  CHECK(clf.score(vols[0]) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("metric report serialization omits absent fields") {
  MetricReport r{"zero_shot_auroc", {{"a", 0.5}, {"b", std::nullopt}}, std::nullopt, 2, 10, 42, "abc"};
  const auto j = to_json(r);
  CHECK(j.at("metric") == "zero_shot_auroc");
  CHECK(j.at("values").at("a") == 0.5);
  CHECK(j.at("values").at("b").is_null());
  CHECK_FALSE(j.contains("k"));
  CHECK(j.at("threshold") == 2);
  CHECK(j.at("config_digest") == "abc");
}

TEST_CASE("grade plot files") {
  const auto dir = std::filesystem::temp_directory_path() / "cardioclip_plot_test";
  std::filesystem::create_directories(dir);
  std::vector<GradeCase> cs;
  for (int i = 0; i < 25; ++i) cs.push_back({"c" + std::to_string(i), 1 + i % 5, 0.1 * i});
  write_grade_plot(cs, dir / "p", "title");
  CHECK(std::filesystem::file_size(dir / "p.csv") > 0);
  CHECK(std::filesystem::file_size(dir / "p.svg") > 0);
}
