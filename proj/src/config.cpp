// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/config.hpp"

#include <fstream>
#include <sstream>

#include "cardioclip/errors.hpp"
#include "cardioclip/rng.hpp"

namespace cardioclip {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string join_violations(const std::vector<std::string>& v) {
  std::string out = "invalid configuration:";
  for (const auto& s : v) out += "\n  - " + s;
  return out;
}

void prefixed(std::vector<std::string>& out, const std::string& prefix, const std::vector<std::string>& in) {
  for (const auto& s : in) out.push_back(prefix + ": " + s);
}

const char* pooling_name(Pooling p) { return p == Pooling::Mean ? "mean" : "class_token"; }
const char* target_name(TargetMode m) { return m == TargetMode::Raw ? "raw" : "remapped"; }

// Reports keys of `j` that have no counterpart in `ref`.
void find_unknown(const json& j, const ordered_json& ref, const std::string& path, std::vector<std::string>& out) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    auto r = ref.find(it.key());
    if (r == ref.end()) {
      out.push_back("unknown key '" + key + "'");
      continue;
    }
    if (r->is_object()) {
      if (!it->is_object()) out.push_back("key '" + key + "' must be an object");
      else find_unknown(*it, *r, key, out);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& field, const std::string& section, std::vector<std::string>& errs) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    field = it->get<T>();
  } catch (const json::exception&) {
    errs.push_back("key '" + section + "." + key + "' has the wrong type (" + it->dump() + ")");
  }
}

const json& section_of(const json& j, const char* name) {
  static const json empty = json::object();
  auto it = j.find(name);
  return it == j.end() ? empty : *it;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error(join_violations(violations)), violations_(std::move(violations)) {}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> v;
  prefixed(v, "synth", synth.validate());
  prefixed(v, "visual", visual.validate());
  prefixed(v, "decoder", decoder.validate());
  // vocab_size is filled in later from the corpus; check the rest only.
  TextEncoderConfig t = text;
  if (t.vocab_size == 0) t.vocab_size = 4;
  prefixed(v, "text", t.validate());
  prefixed(v, "mae", mae.validate());
  prefixed(v, "clip", clip.validate());
  prefixed(v, "finetune", finetune.validate());

  if (visual.input_dims != synth.dims) v.push_back("visual.input_dims must equal synth.dims");
  if (visual.proj_dim != text.proj_dim) v.push_back("visual.proj_dim must equal text.proj_dim (shared embedding space)");
  if (data.n_train == 0 || data.n_train >= synth.n_cases)
    v.push_back("data.n_train must be in [1, synth.n_cases) so a held-out split remains");
  if (!(data.hu_lo < data.hu_hi)) v.push_back("data.hu_lo must be below data.hu_hi");
  if (finetune.classes != kCacGrades) v.push_back("finetune.classes must equal the number of CAC grades (5)");
  if (eval.recall_k == 0) v.push_back("eval.recall_k must be positive");
  if (eval.precision_k == 0) v.push_back("eval.precision_k must be positive");
  if (gradcheck.probes < 1) v.push_back("gradcheck.probes must be positive");
  if (!(gradcheck.eps > 0.0)) v.push_back("gradcheck.eps must be positive");
  if (!(gradcheck.tolerance > 0.0)) v.push_back("gradcheck.tolerance must be positive");
  if (!(gradcheck.perturb >= 0.0)) v.push_back("gradcheck.perturb must be non-negative");
  return v;
}

RunConfig RunConfig::with_derived_seeds() const {
  RunConfig c = *this;
  c.synth.seed = substream_seed(seed, "synth");
  c.mae.seed = substream_seed(seed, "stage1");
  c.clip.seed = substream_seed(seed, "stage2");
  c.finetune.seed = substream_seed(seed, "finetune");
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["synth"] = {{"n_cases", c.synth.n_cases},
                {"dims", c.synth.dims},
                {"prevalence", c.synth.prevalence},
                {"signal_strength", c.synth.signal_strength},
                {"cac_fraction", c.synth.cac_fraction}};
  j["data"] = {{"n_train", c.data.n_train}, {"hu_lo", c.data.hu_lo}, {"hu_hi", c.data.hu_hi}};
  j["visual"] = {{"input_dims", c.visual.input_dims},
                 {"patch_size", c.visual.patch_size},
                 {"embed_dim", c.visual.embed_dim},
                 {"depth", c.visual.depth},
                 {"heads", c.visual.heads},
                 {"mlp_ratio", c.visual.mlp_ratio},
                 {"proj_dim", c.visual.proj_dim},
                 {"pooling", pooling_name(c.visual.pooling)},
                 {"input_mean", c.visual.input_mean},
                 {"input_std", c.visual.input_std}};
  j["decoder"] = {{"embed_dim", c.decoder.embed_dim},
                  {"depth", c.decoder.depth},
                  {"heads", c.decoder.heads},
                  {"mlp_ratio", c.decoder.mlp_ratio},
                  {"normalize_targets", c.decoder.normalize_targets}};
  j["text"] = {{"max_len", c.text.max_len},
               {"embed_dim", c.text.embed_dim},
               {"depth", c.text.depth},
               {"heads", c.text.heads},
               {"mlp_ratio", c.text.mlp_ratio},
               {"proj_dim", c.text.proj_dim}};
  j["mae"] = {{"epochs", c.mae.epochs},
              {"batch", c.mae.batch},
              {"base_lr", c.mae.base_lr},
              {"weight_decay", c.mae.weight_decay},
              {"warmup_frac", c.mae.warmup_frac},
              {"min_lr", c.mae.min_lr},
              {"mask_ratio", c.mae.mask_ratio}};
  j["clip"] = {{"temperature", c.clip.temperature},
               {"variant_prob", c.clip.variant_prob},
               {"epochs", c.clip.epochs},
               {"batch", c.clip.batch},
               {"lr", c.clip.lr},
               {"proj_lr", c.clip.proj_lr},
               {"weight_decay", c.clip.weight_decay},
               {"warmup_frac", c.clip.warmup_frac},
               {"min_lr", c.clip.min_lr},
               {"target_mode", target_name(c.clip.target_mode)}};
  j["finetune"] = {{"classes", c.finetune.classes},
                   {"epochs", c.finetune.epochs},
                   {"batch", c.finetune.batch},
                   {"encoder_lr", c.finetune.encoder_lr},
                   {"head_lr", c.finetune.head_lr},
                   {"weight_decay", c.finetune.weight_decay},
                   {"warmup_frac", c.finetune.warmup_frac},
                   {"min_lr", c.finetune.min_lr},
                   {"freeze_encoder", c.finetune.freeze_encoder}};
  j["eval"] = {{"recall_k", c.eval.recall_k}, {"precision_k", c.eval.precision_k}};
  j["gradcheck"] = {{"probes", c.gradcheck.probes},
                    {"eps", c.gradcheck.eps},
                    {"tolerance", c.gradcheck.tolerance},
                    {"perturb", c.gradcheck.perturb}};
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("configuration must be a JSON object");
  std::vector<std::string> errs;
  find_unknown(j, to_json(RunConfig{}), "", errs);

  RunConfig c;
  read(j, "seed", c.seed, "", errs);

  const auto& s = section_of(j, "synth");
  read(s, "n_cases", c.synth.n_cases, "synth", errs);
  read(s, "dims", c.synth.dims, "synth", errs);
  read(s, "prevalence", c.synth.prevalence, "synth", errs);
  read(s, "signal_strength", c.synth.signal_strength, "synth", errs);
  read(s, "cac_fraction", c.synth.cac_fraction, "synth", errs);

  const auto& d = section_of(j, "data");
  read(d, "n_train", c.data.n_train, "data", errs);
  read(d, "hu_lo", c.data.hu_lo, "data", errs);
  read(d, "hu_hi", c.data.hu_hi, "data", errs);

  const auto& v = section_of(j, "visual");
  read(v, "input_dims", c.visual.input_dims, "visual", errs);
  read(v, "patch_size", c.visual.patch_size, "visual", errs);
  read(v, "embed_dim", c.visual.embed_dim, "visual", errs);
  read(v, "depth", c.visual.depth, "visual", errs);
  read(v, "heads", c.visual.heads, "visual", errs);
  read(v, "mlp_ratio", c.visual.mlp_ratio, "visual", errs);
  read(v, "proj_dim", c.visual.proj_dim, "visual", errs);
  read(v, "input_mean", c.visual.input_mean, "visual", errs);
  read(v, "input_std", c.visual.input_std, "visual", errs);
  std::string pooling = pooling_name(c.visual.pooling);
  read(v, "pooling", pooling, "visual", errs);
  if (pooling == "mean") c.visual.pooling = Pooling::Mean;
  else if (pooling == "class_token") c.visual.pooling = Pooling::ClassToken;
  else errs.push_back("visual.pooling must be \"class_token\" or \"mean\"");

  const auto& dc = section_of(j, "decoder");
  read(dc, "embed_dim", c.decoder.embed_dim, "decoder", errs);
  read(dc, "depth", c.decoder.depth, "decoder", errs);
  read(dc, "heads", c.decoder.heads, "decoder", errs);
  read(dc, "mlp_ratio", c.decoder.mlp_ratio, "decoder", errs);
  read(dc, "normalize_targets", c.decoder.normalize_targets, "decoder", errs);

  const auto& t = section_of(j, "text");
  read(t, "max_len", c.text.max_len, "text", errs);
  read(t, "embed_dim", c.text.embed_dim, "text", errs);
  read(t, "depth", c.text.depth, "text", errs);
  read(t, "heads", c.text.heads, "text", errs);
  read(t, "mlp_ratio", c.text.mlp_ratio, "text", errs);
  read(t, "proj_dim", c.text.proj_dim, "text", errs);

  const auto& m = section_of(j, "mae");
  read(m, "epochs", c.mae.epochs, "mae", errs);
  read(m, "batch", c.mae.batch, "mae", errs);
  read(m, "base_lr", c.mae.base_lr, "mae", errs);
  read(m, "weight_decay", c.mae.weight_decay, "mae", errs);
  read(m, "warmup_frac", c.mae.warmup_frac, "mae", errs);
  read(m, "min_lr", c.mae.min_lr, "mae", errs);
  read(m, "mask_ratio", c.mae.mask_ratio, "mae", errs);

  const auto& cl = section_of(j, "clip");
  read(cl, "temperature", c.clip.temperature, "clip", errs);
  read(cl, "variant_prob", c.clip.variant_prob, "clip", errs);
  read(cl, "epochs", c.clip.epochs, "clip", errs);
  read(cl, "batch", c.clip.batch, "clip", errs);
  read(cl, "lr", c.clip.lr, "clip", errs);
  read(cl, "proj_lr", c.clip.proj_lr, "clip", errs);
  read(cl, "weight_decay", c.clip.weight_decay, "clip", errs);
  read(cl, "warmup_frac", c.clip.warmup_frac, "clip", errs);
  read(cl, "min_lr", c.clip.min_lr, "clip", errs);
  std::string target = target_name(c.clip.target_mode);
  read(cl, "target_mode", target, "clip", errs);
  if (target == "raw") c.clip.target_mode = TargetMode::Raw;
  else if (target == "remapped") c.clip.target_mode = TargetMode::Remapped;
  else errs.push_back("clip.target_mode must be \"remapped\" or \"raw\"");

  const auto& f = section_of(j, "finetune");
  read(f, "classes", c.finetune.classes, "finetune", errs);
  read(f, "epochs", c.finetune.epochs, "finetune", errs);
  read(f, "batch", c.finetune.batch, "finetune", errs);
  read(f, "encoder_lr", c.finetune.encoder_lr, "finetune", errs);
  read(f, "head_lr", c.finetune.head_lr, "finetune", errs);
  read(f, "weight_decay", c.finetune.weight_decay, "finetune", errs);
  read(f, "warmup_frac", c.finetune.warmup_frac, "finetune", errs);
  read(f, "min_lr", c.finetune.min_lr, "finetune", errs);
  read(f, "freeze_encoder", c.finetune.freeze_encoder, "finetune", errs);

  const auto& e = section_of(j, "eval");
  read(e, "recall_k", c.eval.recall_k, "eval", errs);
  read(e, "precision_k", c.eval.precision_k, "eval", errs);

  const auto& g = section_of(j, "gradcheck");
  read(g, "probes", c.gradcheck.probes, "gradcheck", errs);
  read(g, "eps", c.gradcheck.eps, "gradcheck", errs);
  read(g, "tolerance", c.gradcheck.tolerance, "gradcheck", errs);
  read(g, "perturb", c.gradcheck.perturb, "gradcheck", errs);

  if (!errs.empty()) throw FormatError(join_violations(errs));
  return c;
}

RunConfig load_config(const std::string& path_or_default) {
  if (path_or_default.empty() || path_or_default == "default") return RunConfig{};
  std::ifstream in(path_or_default);
  if (!in) throw IoError("cannot open config " + path_or_default);
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path_or_default + ": " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw std::invalid_argument("--set: '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw std::invalid_argument("--set: '" + key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

std::string canonical_json(const RunConfig& c) {
  // nlohmann::json keeps object keys sorted.
  return json(to_json(c)).dump();
}

std::string config_digest(const RunConfig& c) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : canonical_json(c)) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cardioclip
