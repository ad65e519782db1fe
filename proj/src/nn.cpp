// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/nn.hpp"

#include <cmath>

#include "cardioclip/errors.hpp"
#include "cardioclip/kernels.hpp"

namespace cardioclip::nn {

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add_inplace: shape mismatch");
  T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

// ---------------------------------------------------------------- Linear

template <typename T>
void Linear<T>::declare(ParamStore<T>& store, const std::string& name, std::size_t in,
                        std::size_t out, ParamGroup group, Rng& rng, bool with_bias) {
  store.add(name + ".weight", {in, out}, group, Init::TruncNormal, rng);
  if (with_bias) store.add(name + ".bias", {out}, group, Init::Zeros, rng, false);
}

template <typename T>
Linear<T> Linear<T>::bind(ParamStore<T>& store, const std::string& name) {
  Linear l;
  l.weight = &store.at(name + ".weight");
  if (store.contains(name + ".bias")) l.bias = &store.at(name + ".bias");
  if (l.weight->shape.size() != 2 ||
      (l.bias && (l.bias->shape.size() != 1 || l.bias->shape[0] != l.weight->shape[1])))
    throw ShapeError("inconsistent linear parameters " + name);
  return l;
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) const {
  const std::size_t in = in_features(), out = out_features();
  if (x.cols() != in) {
    throw ShapeError("linear " + weight->name + ": input width " + std::to_string(x.cols()) +
                     " != " + std::to_string(in));
  }
  Matrix<T> y(x.rows(), out);
  kernels::gemm_nn<T>(x.flat(), weight->value, y.flat(), x.rows(), in, out);
  if (bias) kernels::add_row_bias<T>(y.flat(), bias->value, y.rows(), out);
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Matrix<T>& x, const Matrix<T>& dy, bool want_dx) const {
  const std::size_t in = in_features(), out = out_features();
  kernels::gemm_tn_acc<T>(x.flat(), dy.flat(), weight->grad, x.rows(), in, out);
  if (bias) kernels::col_sum_acc<T>(dy.flat(), bias->grad, dy.rows(), out);
  if (!want_dx) return {};
  Matrix<T> dx(x.rows(), in);
  kernels::gemm_nt<T>(dy.flat(), weight->value, dx.flat(), dy.rows(), out, in);
  return dx;
}

// ------------------------------------------------------------- LayerNorm

template <typename T>
void LayerNorm<T>::declare(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng) {
  store.add(name + ".gamma", {dim}, ParamGroup::Encoder, Init::Ones, rng, false);
  store.add(name + ".beta", {dim}, ParamGroup::Encoder, Init::Zeros, rng, false);
}

template <typename T>
LayerNorm<T> LayerNorm<T>::bind(ParamStore<T>& store, const std::string& name) {
  return {&store.at(name + ".gamma"), &store.at(name + ".beta")};
}

template <typename T>
Matrix<T> LayerNorm<T>::forward(const Matrix<T>& x, LayerNormCache<T>* cache) const {
  const std::size_t dim = gamma->numel();
  if (x.cols() != dim) throw ShapeError("layernorm " + gamma->name + ": width mismatch");
  Matrix<T> y(x.rows(), dim);
  LayerNormCache<T> local;
  LayerNormCache<T>& c = cache ? *cache : local;
  c.xhat = Matrix<T>(x.rows(), dim);
  c.rstd.assign(x.rows(), T{0});
  kernels::layernorm_forward<T>(x.flat(), gamma->value, beta->value, y.flat(), c.xhat.flat(), c.rstd,
                                x.rows(), dim, static_cast<T>(1e-5));
  return y;
}

template <typename T>
Matrix<T> LayerNorm<T>::backward(const LayerNormCache<T>& cache, const Matrix<T>& dy) const {
  Matrix<T> dx(dy.rows(), dy.cols());
  kernels::layernorm_backward<T>(dy.flat(), cache.xhat.flat(), cache.rstd, gamma->value, dx.flat(),
                                 gamma->grad, beta->grad, dy.rows(), dy.cols());
  return dx;
}

// --------------------------------------------------------- SelfAttention

namespace {

template <typename T>
Matrix<T> take_cols(const Matrix<T>& m, std::size_t offset, std::size_t width) {
  Matrix<T> out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy_n(m.row(r).data() + offset, width, out.row(r).data());
  return out;
}

template <typename T>
void put_cols(Matrix<T>& m, const Matrix<T>& part, std::size_t offset) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy_n(part.row(r).data(), part.cols(), m.row(r).data() + offset);
}

}  // namespace

template <typename T>
void SelfAttention<T>::declare(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng) {
  Linear<T>::declare(store, name + ".q", dim, dim, ParamGroup::Encoder, rng);
  Linear<T>::declare(store, name + ".k", dim, dim, ParamGroup::Encoder, rng, false);
  Linear<T>::declare(store, name + ".v", dim, dim, ParamGroup::Encoder, rng);
  Linear<T>::declare(store, name + ".proj", dim, dim, ParamGroup::Encoder, rng);
}

template <typename T>
SelfAttention<T> SelfAttention<T>::bind(ParamStore<T>& store, const std::string& name, std::size_t heads) {
  SelfAttention a{Linear<T>::bind(store, name + ".q"), Linear<T>::bind(store, name + ".k"),
                  Linear<T>::bind(store, name + ".v"), Linear<T>::bind(store, name + ".proj"), heads};
  if (heads == 0 || a.proj.in_features() % heads != 0)
    throw ShapeError("attention " + name + ": embed dim not divisible by heads");
  return a;
}

template <typename T>
Matrix<T> SelfAttention<T>::forward(const Matrix<T>& x, AttentionCache<T>* cache) const {
  const std::size_t n = x.rows();
  const std::size_t dim = proj.in_features();
  const std::size_t dh = dim / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  Matrix<T> q_all = q.forward(x);
  Matrix<T> k_all = k.forward(x);
  Matrix<T> v_all = v.forward(x);
  Matrix<T> context(n, dim);
  if (cache) cache->probs.assign(heads, {});
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix<T> qh = take_cols(q_all, h * dh, dh);
    const Matrix<T> kh = take_cols(k_all, h * dh, dh);
    const Matrix<T> vh = take_cols(v_all, h * dh, dh);
    Matrix<T> p(n, n);
    kernels::gemm_nt<T>(qh.flat(), kh.flat(), p.flat(), n, dh, n);
    for (T& s : p.flat()) s *= scale;
    kernels::softmax_rows<T>(p.flat(), n, n);
    Matrix<T> ctx(n, dh);
    kernels::gemm_nn<T>(p.flat(), vh.flat(), ctx.flat(), n, n, dh);
    put_cols(context, ctx, h * dh);
    if (cache) cache->probs[h] = std::move(p);
  }
  Matrix<T> y = proj.forward(context);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q_all);
    cache->k = std::move(k_all);
    cache->v = std::move(v_all);
    cache->context = std::move(context);
  }
  return y;
}

template <typename T>
Matrix<T> SelfAttention<T>::backward(const AttentionCache<T>& cache, const Matrix<T>& dy) const {
  const std::size_t n = dy.rows();
  const std::size_t dim = proj.in_features();
  const std::size_t dh = dim / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  const Matrix<T> dcontext = proj.backward(cache.context, dy);
  Matrix<T> dq_all(n, dim), dk_all(n, dim), dv_all(n, dim);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix<T>& p = cache.probs[h];
    const Matrix<T> qh = take_cols(cache.q, h * dh, dh);
    const Matrix<T> kh = take_cols(cache.k, h * dh, dh);
    const Matrix<T> vh = take_cols(cache.v, h * dh, dh);
    const Matrix<T> dctx = take_cols(dcontext, h * dh, dh);

    Matrix<T> dp(n, n);
    kernels::gemm_nt<T>(dctx.flat(), vh.flat(), dp.flat(), n, dh, n);
    Matrix<T> dv(n, dh);
    kernels::gemm_tn_acc<T>(p.flat(), dctx.flat(), dv.flat(), n, n, dh);
    Matrix<T> ds(n, n);
    kernels::softmax_rows_backward<T>(p.flat(), dp.flat(), ds.flat(), n, n);
    for (T& s : ds.flat()) s *= scale;
    Matrix<T> dq(n, dh);
    kernels::gemm_nn<T>(ds.flat(), kh.flat(), dq.flat(), n, n, dh);
    Matrix<T> dk(n, dh);
    kernels::gemm_tn_acc<T>(ds.flat(), qh.flat(), dk.flat(), n, n, dh);

    put_cols(dq_all, dq, h * dh);
    put_cols(dk_all, dk, h * dh);
    put_cols(dv_all, dv, h * dh);
  }
  Matrix<T> dx = q.backward(cache.x, dq_all);
  add_inplace(dx, k.backward(cache.x, dk_all));
  add_inplace(dx, v.backward(cache.x, dv_all));
  return dx;
}

// ----------------------------------------------------------------- Block

template <typename T>
void Block<T>::declare(ParamStore<T>& store, const std::string& name, std::size_t dim,
                       std::size_t hidden, Rng& rng) {
  LayerNorm<T>::declare(store, name + ".ln1", dim, rng);
  SelfAttention<T>::declare(store, name + ".attn", dim, rng);
  LayerNorm<T>::declare(store, name + ".ln2", dim, rng);
  Linear<T>::declare(store, name + ".fc1", dim, hidden, ParamGroup::Encoder, rng);
  Linear<T>::declare(store, name + ".fc2", hidden, dim, ParamGroup::Encoder, rng);
}

template <typename T>
Block<T> Block<T>::bind(ParamStore<T>& store, const std::string& name, std::size_t heads) {
  return {LayerNorm<T>::bind(store, name + ".ln1"), SelfAttention<T>::bind(store, name + ".attn", heads),
          LayerNorm<T>::bind(store, name + ".ln2"), Linear<T>::bind(store, name + ".fc1"),
          Linear<T>::bind(store, name + ".fc2")};
}

template <typename T>
Matrix<T> Block<T>::forward(const Matrix<T>& x, BlockCache<T>* cache) const {
  BlockCache<T> local;
  BlockCache<T>& c = cache ? *cache : local;
  c.h1 = ln1.forward(x, &c.ln1);
  Matrix<T> out = attn.forward(c.h1, cache ? &c.attn : nullptr);
  add_inplace(out, x);
  c.h2 = ln2.forward(out, &c.ln2);
  c.pre = fc1.forward(c.h2);
  c.act = Matrix<T>(c.pre.rows(), c.pre.cols());
  kernels::gelu_forward<T>(c.pre.flat(), c.act.flat());
  add_inplace(out, fc2.forward(c.act));
  return out;
}

template <typename T>
Matrix<T> Block<T>::backward(const BlockCache<T>& cache, const Matrix<T>& dy) const {
  const Matrix<T> dact = fc2.backward(cache.act, dy);
  Matrix<T> dpre(dact.rows(), dact.cols());
  kernels::gelu_backward<T>(cache.pre.flat(), dact.flat(), dpre.flat());
  const Matrix<T> dh2 = fc1.backward(cache.h2, dpre);
  Matrix<T> dmid = ln2.backward(cache.ln2, dh2);
  add_inplace(dmid, dy);
  const Matrix<T> dh1 = attn.backward(cache.attn, dmid);
  Matrix<T> dx = ln1.backward(cache.ln1, dh1);
  add_inplace(dx, dmid);
  return dx;
}

// ------------------------------------------------------ TransformerStack

template <typename T>
void TransformerStack<T>::declare(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                  std::size_t depth, std::size_t hidden, Rng& rng) {
  for (std::size_t i = 0; i < depth; ++i)
    Block<T>::declare(store, prefix + ".blocks." + std::to_string(i), dim, hidden, rng);
}

template <typename T>
TransformerStack<T> TransformerStack<T>::bind(ParamStore<T>& store, const std::string& prefix,
                                              std::size_t depth, std::size_t heads) {
  TransformerStack s;
  for (std::size_t i = 0; i < depth; ++i)
    s.blocks.push_back(Block<T>::bind(store, prefix + ".blocks." + std::to_string(i), heads));
  return s;
}

template <typename T>
Matrix<T> TransformerStack<T>::forward(const Matrix<T>& x, StackCache<T>* cache) const {
  if (cache) cache->assign(blocks.size(), {});
  Matrix<T> h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, cache ? &(*cache)[i] : nullptr);
  return h;
}

template <typename T>
Matrix<T> TransformerStack<T>::backward(const StackCache<T>& cache, const Matrix<T>& dy) const {
  Matrix<T> d = dy;
  for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(cache[i], d);
  return d;
}

// ------------------------------------------------------------- helpers

template <typename T>
T l2_normalize(std::span<const T> x, std::span<T> y) {
  T s = 0;
  for (T v : x) s += v * v;
  const T norm = std::sqrt(s);
  if (!(norm > T{0})) throw NumericError("l2_normalize: zero-norm vector");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / norm;
  return norm;
}

template <typename T>
void l2_normalize_backward(std::span<const T> y, T norm, std::span<const T> dy, std::span<T> dx) {
  T dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (dy[i] - y[i] * dot) / norm;
}

#define CARDIOCLIP_INSTANTIATE_NN(T)                                                           \
  template struct Linear<T>;                                                                   \
  template struct LayerNorm<T>;                                                                \
  template struct SelfAttention<T>;                                                            \
  template struct Block<T>;                                                                    \
  template struct TransformerStack<T>;                                                         \
  template T l2_normalize<T>(std::span<const T>, std::span<T>);                                \
  template void l2_normalize_backward<T>(std::span<const T>, T, std::span<const T>, std::span<T>); \
  template void add_inplace<T>(Matrix<T>&, const Matrix<T>&);

CARDIOCLIP_INSTANTIATE_NN(float)
CARDIOCLIP_INSTANTIATE_NN(double)

}  // namespace cardioclip::nn
