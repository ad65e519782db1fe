// SPDX-License-Identifier: Apache-2.0
//
// Visual and textual transformer encoders projecting into a shared
// embedding space, plus the word-level tokenizer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cardioclip/matrix.hpp"
#include "cardioclip/nn.hpp"
#include "cardioclip/params.hpp"
#include "cardioclip/volume.hpp"

namespace cardioclip {

enum class Pooling { ClassToken, Mean };

struct VisualEncoderConfig {
  Dims3 input_dims{64, 64, 64};
  Dims3 patch_size{16, 16, 16};
  std::size_t embed_dim = 128;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t proj_dim = 64;
  Pooling pooling = Pooling::ClassToken;
  /// Fixed affine map applied to voxel intensities before patch embedding.
  double input_mean = 0.3;
  double input_std = 0.1;

  std::size_t num_patches() const;
  std::size_t patch_volume() const { return patch_size[0] * patch_size[1] * patch_size[2]; }
  std::size_t mlp_hidden() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }
  /// Human-readable invariant violations; empty when valid.
  std::vector<std::string> validate() const;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t embed_dim = 128;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t proj_dim = 64;

  std::size_t mlp_hidden() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }
  std::vector<std::string> validate() const;
};

/// A vector in the shared space with its cached Euclidean norm.
struct Embedding {
  std::vector<double> vector;
  double norm = 0.0;

  static Embedding from(std::span<const float> v);
  static Embedding from(std::span<const double> v);
};

double cosine(const Embedding& a, const Embedding& b);

// ------------------------------------------------------------ tokenizer

/// Lowercase, drop punctuation, split on whitespace.
std::vector<std::string> normalize_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;

  /// Specials first, then every distinct corpus word in sorted order.
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary from_words(std::vector<std::string> words);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::int32_t id(std::string_view word) const;
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// ids has max_len entries; positions >= length hold padding.
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::size_t length = 0;
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

// -------------------------------------------------------- visual encoder

template <typename T>
struct VisualTrace {
  Matrix<T> patches;
  std::vector<std::size_t> positions;
  nn::StackCache<T> stack;
  nn::LayerNormCache<T> norm;
  Matrix<T> tokens;     // after the final norm
  std::vector<T> pooled;
};

template <typename T>
class VisualEncoder {
 public:
  static void declare(const VisualEncoderConfig& cfg, ParamStore<T>& store, Rng& rng);
  VisualEncoder(const VisualEncoderConfig& cfg, ParamStore<T>& store);

  const VisualEncoderConfig& config() const { return cfg_; }

  /// Rows: class token, then one row per selected patch with the positional
  /// vector of its grid position added. `positions` defaults to 0..rows-1.
  Matrix<T> embed_patches(const Matrix<T>& patches, std::span<const std::size_t> positions) const;
  void embed_patches_backward(const Matrix<T>& patches, std::span<const std::size_t> positions,
                              const Matrix<T>& d_tokens) const;

  /// Transformer blocks only (no final norm).
  Matrix<T> encode_visible(const Matrix<T>& tokens, nn::StackCache<T>* cache) const;

  /// embed_patches -> blocks -> final norm.
  Matrix<T> forward_tokens(const Matrix<T>& patches, std::span<const std::size_t> positions,
                           VisualTrace<T>* trace) const;
  void backward_tokens(const VisualTrace<T>& trace, const Matrix<T>& d_tokens) const;

  /// Pooled, projected (unnormalized) embedding of a full patch set.
  std::vector<T> embed(const Matrix<T>& patches, VisualTrace<T>* trace) const;
  void embed_backward(const VisualTrace<T>& trace, std::span<const T> d_embed) const;

  /// Pooled representation before the projection head.
  std::vector<T> pool(const Matrix<T>& tokens) const;
  /// (x - input_mean) / input_std, elementwise.
  Matrix<T> standardize_input(const Matrix<T>& patches) const;
  /// Gradient of pool() spread back onto `rows` tokens.
  Matrix<T> pool_backward(std::size_t rows, std::span<const T> d_pooled) const;

  const nn::Linear<T>& projection() const { return proj_; }

 private:
  VisualEncoderConfig cfg_;
  nn::Linear<T> patch_embed_;
  Parameter<T>* cls_;
  Parameter<T>* pos_;
  nn::TransformerStack<T> stack_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> proj_;
};

// ---------------------------------------------------------- text encoder

template <typename T>
struct TextTrace {
  std::vector<std::int32_t> ids;
  nn::StackCache<T> stack;
  nn::LayerNormCache<T> norm;
  Matrix<T> tokens;
};

template <typename T>
class TextEncoder {
 public:
  static void declare(const TextEncoderConfig& cfg, ParamStore<T>& store, Rng& rng);
  TextEncoder(const TextEncoderConfig& cfg, ParamStore<T>& store);

  const TextEncoderConfig& config() const { return cfg_; }

  /// Class-token output through the projection head. Only the first
  /// `seq.length` positions enter attention, so padding never contributes.
  std::vector<T> embed(const TokenSequence& seq, TextTrace<T>* trace) const;
  void embed_backward(const TextTrace<T>& trace, std::span<const T> d_embed) const;

 private:
  TextEncoderConfig cfg_;
  Parameter<T>* token_embed_;
  Parameter<T>* pos_;
  nn::TransformerStack<T> stack_;
  nn::LayerNorm<T> norm_;
  nn::Linear<T> proj_;
};

/// Patches of `v` as a matrix of the encoder's scalar type.
template <typename T>
Matrix<T> volume_patches(const Volume3D& v, const VisualEncoderConfig& cfg);

Embedding encode_image(const Volume3D& v, const VisualEncoder<float>& enc);
Embedding encode_text(const TokenSequence& seq, const TextEncoder<float>& enc);

}  // namespace cardioclip
