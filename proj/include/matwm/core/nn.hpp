#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "matwm/core/graph.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/core/rng.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// Named parameter registry. Modules append their parameters in a stable order;
// the optimizer and the checkpoint format both key off that order.
template <typename T>
struct ParamList {
  std::vector<std::pair<std::string, Var<T>>> items;

  void add(std::string name, const Var<T>& v) { items.emplace_back(std::move(name), v); }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [name, v] : items) n += v.val().size();
    return n;
  }
};

template <typename T>
Tensor<T> uniform_init(std::vector<int> shape, T bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
  return t;
}

template <typename T>
Tensor<T> normal_init(std::vector<int> shape, T stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal() * static_cast<double>(stddev));
  return t;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Var<T> w;  // [out, in]
  Var<T> b;  // [out]

  Linear() = default;

  // zero_init makes the layer start as the zero function; used for output
  // heads so early predictions are neutral.
  Linear(int in, int out, Rng& rng, bool zero_init = false) {
    if (zero_init) {
      w = variable(Tensor<T>({out, in}));
    } else {
      const T bound = T(1) / std::sqrt(static_cast<T>(in));
      w = variable(uniform_init<T>({out, in}, bound, rng));
    }
    b = variable(Tensor<T>({out}));
  }

  Var<T> forward(const Var<T>& x) const { return add_bias(matmul_nt(x, w), b); }

  // Tape-free forward for imagination / acting.
  Tensor<T> forward_value(const Tensor<T>& x) const {
    Tensor<T> out({x.rows(), w.val().rows()});
    out.mat().noalias() = x.mat() * w.val().mat().transpose();
    out.mat().rowwise() += b.val().vec().transpose();
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".w", w);
    out.add(prefix + ".b", b);
  }
};

template <typename T>
struct LayerNormLayer {
  static constexpr T kEps = T(1e-5);
  Var<T> gain;
  Var<T> bias;

  LayerNormLayer() = default;

  explicit LayerNormLayer(int width) {
    gain = variable(Tensor<T>::full({width}, T(1)));
    bias = variable(Tensor<T>({width}));
  }

  Var<T> forward(const Var<T>& x) const { return layer_norm(x, gain, bias, kEps); }

  Tensor<T> forward_value(const Tensor<T>& x) const {
    return layer_norm_value(x, gain.val(), bias.val(), kEps);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".gain", gain);
    out.add(prefix + ".bias", bias);
  }
};

// Linear -> LayerNorm -> SiLU stacks with a plain linear head on top.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> hidden;
  std::vector<LayerNormLayer<T>> norms;
  Linear<T> head;

  Mlp() = default;

  Mlp(int in, int width, int depth, int out, Rng& rng, bool zero_head = false) {
    int cur = in;
    for (int i = 0; i < depth; ++i) {
      hidden.emplace_back(cur, width, rng);
      norms.emplace_back(width);
      cur = width;
    }
    head = Linear<T>(cur, out, rng, zero_head);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = x;
    for (size_t i = 0; i < hidden.size(); ++i)
      h = silu(norms[i].forward(hidden[i].forward(h)));
    return head.forward(h);
  }

  Tensor<T> forward_value(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (size_t i = 0; i < hidden.size(); ++i) {
      h = norms[i].forward_value(hidden[i].forward_value(h));
      for (int64_t j = 0; j < h.size(); ++j) h[j] = h[j] / (T(1) + std::exp(-h[j]));
    }
    return head.forward_value(h);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (size_t i = 0; i < hidden.size(); ++i) {
      hidden[i].collect(out, prefix + ".h" + std::to_string(i));
      norms[i].collect(out, prefix + ".ln" + std::to_string(i));
    }
    head.collect(out, prefix + ".head");
  }
};

// ---------------------------------------------------------------------------
// Causal self-attention
// ---------------------------------------------------------------------------

// Incremental decoding cache: keys/values for positions seen so far.
template <typename T>
struct KvCache {
  Tensor<T> k;  // [B*heads, cap, dk]
  Tensor<T> v;
  int len = 0;

  KvCache() = default;
  KvCache(int rows, int cap, int dk) : k({rows, cap, dk}), v({rows, cap, dk}) {}
};

template <typename T>
struct MultiHeadSelfAttention {
  int dim = 0;
  int heads = 0;
  Linear<T> wq, wk, wv, wo;

  MultiHeadSelfAttention() = default;

  MultiHeadSelfAttention(int d, int h, Rng& rng)
      : dim(d), heads(h), wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng) {
    if (d % h != 0) throw std::invalid_argument("attention: dim not divisible by heads");
  }

  int head_dim() const { return dim / heads; }

  // Full-sequence causal attention over x: [B*T, d].
  Var<T> forward(const Var<T>& x, int batch, int seq) const {
    const int dk = head_dim();
    const T inv = T(1) / std::sqrt(static_cast<T>(dk));
    Var<T> q = split_heads(wq.forward(x), batch, seq, heads);
    Var<T> k = split_heads(wk.forward(x), batch, seq, heads);
    Var<T> v = split_heads(wv.forward(x), batch, seq, heads);
    Var<T> scores = scale(batched_matmul(q, k, false, true), inv);
    Var<T> attn = softmax_causal(scores, seq);
    Var<T> ctx = merge_heads(batched_matmul(attn, v, false, false), batch, seq, heads);
    return wo.forward(ctx);
  }

  // One-step decode for a batch of streams; appends to the cache.
  Tensor<T> step(const Tensor<T>& x, KvCache<T>& cache) const {
    const int B = x.rows();
    const int dk = head_dim();
    if (cache.len >= cache.k.dim(1)) throw std::runtime_error("attention: cache overflow");
    Tensor<T> q = wq.forward_value(x);
    Tensor<T> k = wk.forward_value(x);
    Tensor<T> v = wv.forward_value(x);
    const int cap = cache.k.dim(1);
    const int t = cache.len;
    Tensor<T> ctx({B, dim});
    const T inv = T(1) / std::sqrt(static_cast<T>(dk));
    std::vector<T> attn(static_cast<size_t>(t) + 1);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h) {
        const int row = b * heads + h;
        T* krow = cache.k.data() + ((static_cast<int64_t>(row) * cap) + t) * dk;
        T* vrow = cache.v.data() + ((static_cast<int64_t>(row) * cap) + t) * dk;
        const T* qh = q.data() + static_cast<int64_t>(b) * dim + h * dk;
        std::copy_n(k.data() + static_cast<int64_t>(b) * dim + h * dk, dk, krow);
        std::copy_n(v.data() + static_cast<int64_t>(b) * dim + h * dk, dk, vrow);
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= t; ++j) {
          const T* kj = cache.k.data() + ((static_cast<int64_t>(row) * cap) + j) * dk;
          T s = T(0);
          for (int i = 0; i < dk; ++i) s += qh[i] * kj[i];
          attn[static_cast<size_t>(j)] = s * inv;
          mx = std::max(mx, s * inv);
        }
        T z = T(0);
        for (int j = 0; j <= t; ++j) {
          attn[static_cast<size_t>(j)] = std::exp(attn[static_cast<size_t>(j)] - mx);
          z += attn[static_cast<size_t>(j)];
        }
        T* ch = ctx.data() + static_cast<int64_t>(b) * dim + h * dk;
        for (int j = 0; j <= t; ++j) {
          const T a = attn[static_cast<size_t>(j)] / z;
          const T* vj = cache.v.data() + ((static_cast<int64_t>(row) * cap) + j) * dk;
          for (int i = 0; i < dk; ++i) ch[i] += a * vj[i];
        }
      }
    return wo.forward_value(ctx);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
  }
};

// Pre-norm block: x + attn(LN(x)); x + ffn(LN(x)).
template <typename T>
struct TransformerBlock {
  MultiHeadSelfAttention<T> attn;
  LayerNormLayer<T> ln1, ln2;
  Linear<T> ff1, ff2;

  TransformerBlock() = default;

  TransformerBlock(int d, int h, int ff, Rng& rng)
      : attn(d, h, rng), ln1(d), ln2(d), ff1(d, ff, rng), ff2(ff, d, rng) {}

  Var<T> forward(const Var<T>& x, int batch, int seq) const {
    Var<T> h = add(x, attn.forward(ln1.forward(x), batch, seq));
    Var<T> f = ff2.forward(silu(ff1.forward(ln2.forward(h))));
    return add(h, f);
  }

  Tensor<T> step(const Tensor<T>& x, KvCache<T>& cache) const {
    Tensor<T> h = x;
    h.vec() += attn.step(ln1.forward_value(x), cache).vec();
    Tensor<T> f = ff1.forward_value(ln2.forward_value(h));
    for (int64_t i = 0; i < f.size(); ++i) f[i] = f[i] / (T(1) + std::exp(-f[i]));
    Tensor<T> out = h;
    out.vec() += ff2.forward_value(f).vec();
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    attn.collect(out, prefix + ".attn");
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    ff1.collect(out, prefix + ".ff1");
    ff2.collect(out, prefix + ".ff2");
  }
};

// Decoder-only transformer with learned positional embeddings and a final
// LayerNorm. Token embeddings are produced by the caller.
template <typename T>
struct Transformer {
  int dim = 0;
  int max_seq = 0;
  Var<T> pos;  // [max_seq, dim]
  std::vector<TransformerBlock<T>> blocks;
  LayerNormLayer<T> ln_out;

  Transformer() = default;

  Transformer(int d, int h, int layers, int ff, int max_positions, Rng& rng)
      : dim(d), max_seq(max_positions), ln_out(d) {
    pos = variable(normal_init<T>({max_positions, d}, T(0.02), rng));
    for (int i = 0; i < layers; ++i) blocks.emplace_back(d, h, ff, rng);
  }

  // x: [B*T, d] token embeddings; positions 0..T-1 per stream.
  Var<T> forward(const Var<T>& x, int batch, int seq) const {
    if (seq > max_seq) throw std::invalid_argument("transformer: sequence too long");
    std::vector<int> idx(static_cast<size_t>(batch) * seq);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < seq; ++t) idx[static_cast<size_t>(b) * seq + t] = t;
    Var<T> h = add(x, gather_rows(pos, std::move(idx)));
    for (const auto& blk : blocks) h = blk.forward(h, batch, seq);
    return ln_out.forward(h);
  }

  // Incremental step at position caches[0].len; one token per stream.
  Tensor<T> step(const Tensor<T>& x, std::vector<KvCache<T>>& caches) const {
    if (caches.size() != blocks.size()) throw std::invalid_argument("transformer: cache count");
    const int t = caches.empty() ? 0 : caches[0].len;
    if (t >= max_seq) throw std::runtime_error("transformer: position beyond max_seq");
    Tensor<T> h = x;
    h.mat().rowwise() += pos.val().mat().row(t);
    for (size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i].step(h, caches[i]);
      caches[i].len += 1;
    }
    return ln_out.forward_value(h);
  }

  std::vector<KvCache<T>> make_caches(int batch, int cap) const {
    std::vector<KvCache<T>> out;
    const int h = blocks.empty() ? 1 : blocks[0].attn.heads;
    const int dk = blocks.empty() ? dim : blocks[0].attn.head_dim();
    for (size_t i = 0; i < blocks.size(); ++i) out.emplace_back(batch * h, cap, dk);
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, prefix + ".blk" + std::to_string(i));
    ln_out.collect(out, prefix + ".ln_out");
  }
};

}  // namespace matwm
