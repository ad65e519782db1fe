// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks with hand-written backward passes.
//
// Layers are thin views over parameters held in a ParamStore. forward() is
// const and never touches gradients; backward() accumulates into the bound
// parameters' grad buffers. Passing a null cache to forward() runs inference
// only.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cardioclip/matrix.hpp"
#include "cardioclip/params.hpp"

namespace cardioclip::nn {

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // out; absent for bias-free layers

  static void declare(ParamStore<T>& store, const std::string& name, std::size_t in,
                      std::size_t out, ParamGroup group, Rng& rng, bool with_bias = true);
  static Linear bind(ParamStore<T>& store, const std::string& name);

  std::size_t in_features() const { return weight->shape[0]; }
  std::size_t out_features() const { return weight->shape[1]; }

  Matrix<T> forward(const Matrix<T>& x) const;
  /// Accumulates weight/bias gradients. Returns dx (empty when !want_dx).
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy, bool want_dx = true) const;
};

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;

  static void declare(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
  static LayerNorm bind(ParamStore<T>& store, const std::string& name);

  Matrix<T> forward(const Matrix<T>& x, LayerNormCache<T>* cache) const;
  Matrix<T> backward(const LayerNormCache<T>& cache, const Matrix<T>& dy) const;
};

template <typename T>
struct AttentionCache {
  Matrix<T> x;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // one rows x rows matrix per head
  Matrix<T> context;
};

/// Multi-head self-attention over all rows of the input. The key projection
/// has no bias: a key bias shifts every score in a row equally and cannot
/// change the softmax.
template <typename T>
struct SelfAttention {
  Linear<T> q;
  Linear<T> k;
  Linear<T> v;
  Linear<T> proj;
  std::size_t heads = 1;

  static void declare(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
  static SelfAttention bind(ParamStore<T>& store, const std::string& name, std::size_t heads);

  Matrix<T> forward(const Matrix<T>& x, AttentionCache<T>* cache) const;
  Matrix<T> backward(const AttentionCache<T>& cache, const Matrix<T>& dy) const;
};

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1;
  Matrix<T> h1;
  AttentionCache<T> attn;
  LayerNormCache<T> ln2;
  Matrix<T> h2;
  Matrix<T> pre;
  Matrix<T> act;
};

/// Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(.)).
template <typename T>
struct Block {
  LayerNorm<T> ln1;
  SelfAttention<T> attn;
  LayerNorm<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;

  static void declare(ParamStore<T>& store, const std::string& name, std::size_t dim,
                      std::size_t hidden, Rng& rng);
  static Block bind(ParamStore<T>& store, const std::string& name, std::size_t heads);

  Matrix<T> forward(const Matrix<T>& x, BlockCache<T>* cache) const;
  Matrix<T> backward(const BlockCache<T>& cache, const Matrix<T>& dy) const;
};

template <typename T>
using StackCache = std::vector<BlockCache<T>>;

/// Sequence of blocks. Zero depth is the identity.
template <typename T>
struct TransformerStack {
  std::vector<Block<T>> blocks;

  static void declare(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                      std::size_t depth, std::size_t hidden, Rng& rng);
  static TransformerStack bind(ParamStore<T>& store, const std::string& prefix, std::size_t depth,
                               std::size_t heads);

  Matrix<T> forward(const Matrix<T>& x, StackCache<T>* cache) const;
  Matrix<T> backward(const StackCache<T>& cache, const Matrix<T>& dy) const;
};

/// y = x / ||x||; returns the norm.
template <typename T>
T l2_normalize(std::span<const T> x, std::span<T> y);

/// Backward of y = x / ||x|| given y, ||x||, dy.
template <typename T>
void l2_normalize_backward(std::span<const T> y, T norm, std::span<const T> dy, std::span<T> dx);

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b);

}  // namespace cardioclip::nn
