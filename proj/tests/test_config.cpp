// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "cardioclip/config.hpp"
#include "cardioclip/errors.hpp"

using namespace cardioclip;
using nlohmann::json;

namespace {

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("defaults validate") {
  const RunConfig c;
  CHECK(c.validate().empty());
  CHECK(c.synth.n_cases == 640);
  CHECK(c.data.n_train == 512);
  CHECK(c.clip.temperature == 0.07);
  CHECK(c.clip.batch == 8);
  CHECK(c.mae.epochs == 20);
}

TEST_CASE("json round trip preserves the digest") {
  RunConfig c;
  c.seed = 9;
  c.clip.temperature = 0.2;
  c.visual.pooling = Pooling::Mean;
  const RunConfig back = config_from_json(json(to_json(c)));
  CHECK(canonical_json(back) == canonical_json(c));
  CHECK(config_digest(back) == config_digest(c));
  CHECK(config_digest(c).size() == 16);
}

TEST_CASE("digest changes with any field") {
  const RunConfig a;
  RunConfig b;
  b.eval.recall_k = 11;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_digest(a) == config_digest(RunConfig{}));
}

TEST_CASE("missing keys keep defaults") {
  const RunConfig c = config_from_json(json::parse(R"({"clip": {"epochs": 3}})"));
  CHECK(c.clip.epochs == 3);
  CHECK(c.clip.batch == 8);
  CHECK(c.mae.epochs == 20);
}

TEST_CASE("unknown keys and wrong types are format errors") {
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"bogus": 1})")), FormatError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"clip": {"tau": 0.1}})")), FormatError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"clip": {"epochs": "ten"}})")), FormatError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"clip": 3})")), FormatError);
  CHECK_THROWS_AS(config_from_json(json::parse("[1, 2]")), FormatError);
}

TEST_CASE("overrides") {
  json doc = json(to_json(RunConfig{}));
  apply_override(doc, "clip.temperature=0.5");
  apply_override(doc, "synth.dims=[32,32,32]");
  apply_override(doc, "visual.pooling=mean");
  const RunConfig c = config_from_json(doc);
  CHECK(c.clip.temperature == 0.5);
  CHECK(c.synth.dims == Dims3{32, 32, 32});
  CHECK(c.visual.pooling == Pooling::Mean);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(doc, "=3"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(doc, "seed.inner=3"), std::invalid_argument);
}

TEST_CASE("validation lists every violation") {
  RunConfig c;
  c.clip.temperature = 0.0;
  c.data.n_train = c.synth.n_cases;
  c.visual.heads = 3;
  const auto v = c.validate();
  CHECK(v.size() >= 3);
  CHECK(mentions(v, "ContrastiveConfig"));
  CHECK(mentions(v, "n_train"));
  CHECK(mentions(v, "visual"));

  RunConfig d;
  d.synth.dims = {32, 32, 32};
  CHECK(mentions(d.validate(), "input_dims"));

  const ConfigError err(v);
  CHECK(err.violations().size() == v.size());
}

TEST_CASE("stage seeds come from named substreams") {
  RunConfig c;
  c.seed = 7;
  const RunConfig d = c.with_derived_seeds();
  CHECK(d.synth.seed == substream_seed(7, "synth"));
  CHECK(d.mae.seed == substream_seed(7, "stage1"));
  CHECK(d.clip.seed == substream_seed(7, "stage2"));
  CHECK(d.finetune.seed == substream_seed(7, "finetune"));
  CHECK(d.mae.seed != d.clip.seed);
  c.seed = 8;
  CHECK(c.with_derived_seeds().synth.seed != d.synth.seed);
}
