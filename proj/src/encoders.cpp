// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cardioclip/errors.hpp"

namespace cardioclip {

// --------------------------------------------------------------- configs

std::size_t VisualEncoderConfig::num_patches() const {
  std::size_t n = 1;
  for (std::size_t k = 0; k < 3; ++k) n *= patch_size[k] ? input_dims[k] / patch_size[k] : 0;
  return n;
}

std::vector<std::string> VisualEncoderConfig::validate() const {
  std::vector<std::string> errs;
  for (std::size_t k = 0; k < 3; ++k) {
    if (patch_size[k] == 0 || input_dims[k] == 0 || input_dims[k] % patch_size[k] != 0)
      errs.push_back("VisualEncoderConfig: input_dims must be positive multiples of patch_size");
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    errs.push_back("VisualEncoderConfig: embed_dim must be divisible by heads");
  if (!(mlp_ratio > 0.0)) errs.push_back("VisualEncoderConfig: mlp_ratio must be positive");
  if (!(input_std > 0.0) || !std::isfinite(input_mean))
    errs.push_back("VisualEncoderConfig: input_std must be positive and input_mean finite");
  if (proj_dim == 0) errs.push_back("VisualEncoderConfig: proj_dim must be positive");
  return errs;
}

std::vector<std::string> TextEncoderConfig::validate() const {
  std::vector<std::string> errs;
  if (max_len < 2) errs.push_back("TextEncoderConfig: max_len must be >= 2");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    errs.push_back("TextEncoderConfig: embed_dim must be divisible by heads");
  if (!(mlp_ratio > 0.0)) errs.push_back("TextEncoderConfig: mlp_ratio must be positive");
  if (proj_dim == 0) errs.push_back("TextEncoderConfig: proj_dim must be positive");
  return errs;
}

// ------------------------------------------------------------- embedding

Embedding Embedding::from(std::span<const double> v) {
  Embedding e;
  e.vector.assign(v.begin(), v.end());
  double s = 0.0;
  for (double x : e.vector) {
    if (!std::isfinite(x)) throw NumericError("embedding contains a non-finite value");
    s += x * x;
  }
  e.norm = std::sqrt(s);
  return e;
}

Embedding Embedding::from(std::span<const float> v) {
  std::vector<double> d(v.begin(), v.end());
  return from(std::span<const double>(d));
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.vector.size() != b.vector.size()) throw ShapeError("cosine: width mismatch");
  if (!(a.norm > 0.0) || !(b.norm > 0.0)) throw NumericError("cosine: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) dot += a.vector[i] * b.vector[i];
  return std::clamp(dot / (a.norm * b.norm), -1.0, 1.0);
}

// ------------------------------------------------------------- tokenizer

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  Vocabulary v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.ids_.emplace(v.words_[i], static_cast<std::int32_t>(i)).second)
      throw FormatError("vocabulary: duplicate token '" + v.words_[i] + "'");
  }
  return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::set<std::string> distinct;
  for (const auto& text : corpus)
    for (auto& w : normalize_words(text)) distinct.insert(std::move(w));
  std::vector<std::string> words{"<pad>", "<unk>", "<cls>"};
  for (const auto& w : distinct)
    if (w != "<pad>" && w != "<unk>" && w != "<cls>") words.push_back(w);
  return from_words(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) words.push_back(line);
  if (words.size() < 3 || words[0] != "<pad>" || words[1] != "<unk>" || words[2] != "<cls>")
    throw FormatError("vocabulary: ids 0,1,2 must be <pad>, <unk>, <cls>");
  return from_words(std::move(words));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

std::int32_t Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (vocab.empty()) throw StateError("tokenize: vocabulary is empty");
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.ids[0] = Vocabulary::kCls;
  seq.length = 1;
  for (const auto& w : normalize_words(text)) {
    if (seq.length >= max_len) break;
    seq.ids[seq.length++] = vocab.id(w);
  }
  return seq;
}

// -------------------------------------------------------- visual encoder

template <typename T>
void VisualEncoder<T>::declare(const VisualEncoderConfig& cfg, ParamStore<T>& store, Rng& rng) {
  const std::size_t e = cfg.embed_dim;
  nn::Linear<T>::declare(store, "visual.patch_embed", cfg.patch_volume(), e, ParamGroup::Encoder, rng);
  store.add("visual.cls", {e}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  store.add("visual.pos", {cfg.num_patches(), e}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  nn::TransformerStack<T>::declare(store, "visual", e, cfg.depth, cfg.mlp_hidden(), rng);
  nn::LayerNorm<T>::declare(store, "visual.norm", e, rng);
  nn::Linear<T>::declare(store, "visual.proj", e, cfg.proj_dim, ParamGroup::Projection, rng);
}

template <typename T>
VisualEncoder<T>::VisualEncoder(const VisualEncoderConfig& cfg, ParamStore<T>& store)
    : cfg_(cfg),
      patch_embed_(nn::Linear<T>::bind(store, "visual.patch_embed")),
      cls_(&store.at("visual.cls")),
      pos_(&store.at("visual.pos")),
      stack_(nn::TransformerStack<T>::bind(store, "visual", cfg.depth, cfg.heads)),
      norm_(nn::LayerNorm<T>::bind(store, "visual.norm")),
      proj_(nn::Linear<T>::bind(store, "visual.proj")) {
  if (patch_embed_.in_features() != cfg.patch_volume() || pos_->shape[0] != cfg.num_patches() ||
      pos_->shape[1] != cfg.embed_dim)
    throw ShapeError("visual encoder parameters do not match config geometry");
}

template <typename T>
Matrix<T> VisualEncoder<T>::standardize_input(const Matrix<T>& patches) const {
  Matrix<T> out = patches;
  const T mu = static_cast<T>(cfg_.input_mean);
  const T inv = static_cast<T>(1.0 / cfg_.input_std);
  T* p = out.data();
  for (std::size_t i = 0, n = out.rows() * out.cols(); i < n; ++i) p[i] = (p[i] - mu) * inv;
  return out;
}

template <typename T>
Matrix<T> VisualEncoder<T>::embed_patches(const Matrix<T>& patches,
                                          std::span<const std::size_t> positions) const {
  const std::size_t e = cfg_.embed_dim;
  if (patches.cols() != cfg_.patch_volume()) {
    throw ShapeError("embed_patches: patch length " + std::to_string(patches.cols()) +
                     " != patch volume " + std::to_string(cfg_.patch_volume()));
  }
  if (!positions.empty() && positions.size() != patches.rows())
    throw ShapeError("embed_patches: one position per patch row required");
  const Matrix<T> proj = patch_embed_.forward(standardize_input(patches));
  Matrix<T> tokens(patches.rows() + 1, e);
  std::copy(cls_->value.begin(), cls_->value.end(), tokens.row(0).begin());
  for (std::size_t r = 0; r < patches.rows(); ++r) {
    const std::size_t p = positions.empty() ? r : positions[r];
    if (p >= cfg_.num_patches()) throw ShapeError("embed_patches: position out of range");
    const T* pos = pos_->value.data() + p * e;
    auto src = proj.row(r);
    auto dst = tokens.row(r + 1);
    for (std::size_t j = 0; j < e; ++j) dst[j] = src[j] + pos[j];
  }
  return tokens;
}

template <typename T>
void VisualEncoder<T>::embed_patches_backward(const Matrix<T>& patches,
                                              std::span<const std::size_t> positions,
                                              const Matrix<T>& d_tokens) const {
  const std::size_t e = cfg_.embed_dim;
  for (std::size_t j = 0; j < e; ++j) cls_->grad[j] += d_tokens(0, j);
  Matrix<T> d_proj(patches.rows(), e);
  for (std::size_t r = 0; r < patches.rows(); ++r) {
    const std::size_t p = positions.empty() ? r : positions[r];
    T* gpos = pos_->grad.data() + p * e;
    auto src = d_tokens.row(r + 1);
    std::copy(src.begin(), src.end(), d_proj.row(r).begin());
    for (std::size_t j = 0; j < e; ++j) gpos[j] += src[j];
  }
  patch_embed_.backward(standardize_input(patches), d_proj, false);
}

template <typename T>
Matrix<T> VisualEncoder<T>::encode_visible(const Matrix<T>& tokens, nn::StackCache<T>* cache) const {
  if (tokens.cols() != cfg_.embed_dim) throw ShapeError("encode_visible: embed_dim mismatch");
  if (tokens.rows() > cfg_.num_patches() + 1) throw ShapeError("encode_visible: too many tokens");
  return stack_.forward(tokens, cache);
}

template <typename T>
Matrix<T> VisualEncoder<T>::forward_tokens(const Matrix<T>& patches,
                                           std::span<const std::size_t> positions,
                                           VisualTrace<T>* trace) const {
  const Matrix<T> tokens = embed_patches(patches, positions);
  const Matrix<T> hidden = encode_visible(tokens, trace ? &trace->stack : nullptr);
  Matrix<T> out = norm_.forward(hidden, trace ? &trace->norm : nullptr);
  if (trace) {
    trace->patches = patches;
    trace->positions.assign(positions.begin(), positions.end());
    trace->tokens = out;
  }
  return out;
}

template <typename T>
void VisualEncoder<T>::backward_tokens(const VisualTrace<T>& trace, const Matrix<T>& d_tokens) const {
  const Matrix<T> d_hidden = norm_.backward(trace.norm, d_tokens);
  const Matrix<T> d_embed = stack_.backward(trace.stack, d_hidden);
  embed_patches_backward(trace.patches, trace.positions, d_embed);
}

template <typename T>
std::vector<T> VisualEncoder<T>::pool(const Matrix<T>& tokens) const {
  std::vector<T> pooled(tokens.cols(), T{0});
  if (cfg_.pooling == Pooling::ClassToken) {
    std::copy(tokens.row(0).begin(), tokens.row(0).end(), pooled.begin());
  } else {
    for (std::size_t r = 1; r < tokens.rows(); ++r)
      for (std::size_t j = 0; j < tokens.cols(); ++j) pooled[j] += tokens(r, j);
    const T inv = T{1} / static_cast<T>(tokens.rows() - 1);
    for (T& v : pooled) v *= inv;
  }
  return pooled;
}

template <typename T>
std::vector<T> VisualEncoder<T>::embed(const Matrix<T>& patches, VisualTrace<T>* trace) const {
  const Matrix<T> tokens = forward_tokens(patches, {}, trace);
  std::vector<T> pooled = pool(tokens);
  Matrix<T> row(1, pooled.size());
  std::copy(pooled.begin(), pooled.end(), row.row(0).begin());
  const Matrix<T> out = proj_.forward(row);
  if (trace) trace->pooled = std::move(pooled);
  return {out.row(0).begin(), out.row(0).end()};
}

template <typename T>
void VisualEncoder<T>::embed_backward(const VisualTrace<T>& trace, std::span<const T> d_embed) const {
  Matrix<T> pooled(1, trace.pooled.size());
  std::copy(trace.pooled.begin(), trace.pooled.end(), pooled.row(0).begin());
  Matrix<T> dy(1, d_embed.size());
  std::copy(d_embed.begin(), d_embed.end(), dy.row(0).begin());
  const Matrix<T> d_pooled = proj_.backward(pooled, dy);
  backward_tokens(trace, pool_backward(trace.tokens.rows(), d_pooled.row(0)));
}

template <typename T>
Matrix<T> VisualEncoder<T>::pool_backward(std::size_t rows, std::span<const T> d_pooled) const {
  Matrix<T> d_tokens(rows, d_pooled.size());
  if (cfg_.pooling == Pooling::ClassToken) {
    std::copy(d_pooled.begin(), d_pooled.end(), d_tokens.row(0).begin());
  } else {
    const T inv = T{1} / static_cast<T>(rows - 1);
    for (std::size_t r = 1; r < rows; ++r)
      for (std::size_t j = 0; j < d_pooled.size(); ++j) d_tokens(r, j) = d_pooled[j] * inv;
  }
  return d_tokens;
}

// ---------------------------------------------------------- text encoder

template <typename T>
void TextEncoder<T>::declare(const TextEncoderConfig& cfg, ParamStore<T>& store, Rng& rng) {
  const std::size_t e = cfg.embed_dim;
  store.add("text.token_embed", {cfg.vocab_size, e}, ParamGroup::Encoder, Init::TruncNormal, rng);
  store.add("text.pos", {cfg.max_len, e}, ParamGroup::Encoder, Init::TruncNormal, rng, false);
  nn::TransformerStack<T>::declare(store, "text", e, cfg.depth, cfg.mlp_hidden(), rng);
  nn::LayerNorm<T>::declare(store, "text.norm", e, rng);
  nn::Linear<T>::declare(store, "text.proj", e, cfg.proj_dim, ParamGroup::Projection, rng);
}

template <typename T>
TextEncoder<T>::TextEncoder(const TextEncoderConfig& cfg, ParamStore<T>& store)
    : cfg_(cfg),
      token_embed_(&store.at("text.token_embed")),
      pos_(&store.at("text.pos")),
      stack_(nn::TransformerStack<T>::bind(store, "text", cfg.depth, cfg.heads)),
      norm_(nn::LayerNorm<T>::bind(store, "text.norm")),
      proj_(nn::Linear<T>::bind(store, "text.proj")) {
  if (token_embed_->shape[0] != cfg.vocab_size || token_embed_->shape[1] != cfg.embed_dim ||
      pos_->shape[0] != cfg.max_len)
    throw ShapeError("text encoder parameters do not match config");
}

template <typename T>
std::vector<T> TextEncoder<T>::embed(const TokenSequence& seq, TextTrace<T>* trace) const {
  const std::size_t e = cfg_.embed_dim;
  if (seq.length < 1 || seq.length > cfg_.max_len || seq.ids.size() < seq.length)
    throw std::invalid_argument("encode_text: sequence length outside [1, max_len]");
  Matrix<T> x(seq.length, e);
  for (std::size_t i = 0; i < seq.length; ++i) {
    const std::int32_t id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
      throw std::invalid_argument("encode_text: token id " + std::to_string(id) + " out of range");
    const T* te = token_embed_->value.data() + static_cast<std::size_t>(id) * e;
    const T* pe = pos_->value.data() + i * e;
    auto dst = x.row(i);
    for (std::size_t j = 0; j < e; ++j) dst[j] = te[j] + pe[j];
  }
  const Matrix<T> hidden = stack_.forward(x, trace ? &trace->stack : nullptr);
  Matrix<T> tokens = norm_.forward(hidden, trace ? &trace->norm : nullptr);
  Matrix<T> cls(1, e);
  std::copy(tokens.row(0).begin(), tokens.row(0).end(), cls.row(0).begin());
  const Matrix<T> out = proj_.forward(cls);
  if (trace) {
    trace->ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.length));
    trace->tokens = std::move(tokens);
  }
  return {out.row(0).begin(), out.row(0).end()};
}

template <typename T>
void TextEncoder<T>::embed_backward(const TextTrace<T>& trace, std::span<const T> d_embed) const {
  const std::size_t e = cfg_.embed_dim;
  Matrix<T> cls(1, e);
  std::copy(trace.tokens.row(0).begin(), trace.tokens.row(0).end(), cls.row(0).begin());
  Matrix<T> dy(1, d_embed.size());
  std::copy(d_embed.begin(), d_embed.end(), dy.row(0).begin());
  const Matrix<T> d_cls = proj_.backward(cls, dy);
  Matrix<T> d_tokens(trace.tokens.rows(), e);
  std::copy(d_cls.row(0).begin(), d_cls.row(0).end(), d_tokens.row(0).begin());
  const Matrix<T> d_hidden = norm_.backward(trace.norm, d_tokens);
  const Matrix<T> dx = stack_.backward(trace.stack, d_hidden);
  for (std::size_t i = 0; i < trace.ids.size(); ++i) {
    T* gt = token_embed_->grad.data() + static_cast<std::size_t>(trace.ids[i]) * e;
    T* gp = pos_->grad.data() + i * e;
    for (std::size_t j = 0; j < e; ++j) {
      gt[j] += dx(i, j);
      gp[j] += dx(i, j);
    }
  }
}

// --------------------------------------------------------------- helpers

template <typename T>
Matrix<T> volume_patches(const Volume3D& v, const VisualEncoderConfig& cfg) {
  if (v.dims != cfg.input_dims) {
    throw ShapeError("volume dims " + std::to_string(v.dims[0]) + "x" + std::to_string(v.dims[1]) +
                     "x" + std::to_string(v.dims[2]) + " do not match encoder input dims");
  }
  PatchGrid g = patchify(v, cfg.patch_size);
  if constexpr (std::is_same_v<T, float>) {
    return std::move(g.patches);
  } else {
    return g.patches.cast<T>();
  }
}

Embedding encode_image(const Volume3D& v, const VisualEncoder<float>& enc) {
  const auto out = enc.embed(volume_patches<float>(v, enc.config()), nullptr);
  return Embedding::from(std::span<const float>(out));
}

Embedding encode_text(const TokenSequence& seq, const TextEncoder<float>& enc) {
  const auto out = enc.embed(seq, nullptr);
  return Embedding::from(std::span<const float>(out));
}

template class VisualEncoder<float>;
template class VisualEncoder<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template Matrix<float> volume_patches<float>(const Volume3D&, const VisualEncoderConfig&);
template Matrix<double> volume_patches<double>(const Volume3D&, const VisualEncoderConfig&);

}  // namespace cardioclip
