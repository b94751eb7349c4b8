#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "matwm/core/graph.hpp"
#include "matwm/core/rng.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> variable(Tensor<T> v) {
  return Var<T>(std::move(v), true);
}

// Value sharing without gradient flow (the sg(.) operator).
template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>(a.val(), false);
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor<T> out = a.val();
  out.vec() += b.val().vec();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad()) a.node()->ensure_grad().vec() += n.grad.vec();
    if (b.requires_grad()) b.node()->ensure_grad().vec() += n.grad.vec();
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor<T> out = a.val();
  out.vec() -= b.val().vec();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad()) a.node()->ensure_grad().vec() += n.grad.vec();
    if (b.requires_grad()) b.node()->ensure_grad().vec() -= n.grad.vec();
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor<T> out = a.val();
  out.vec().array() *= b.val().vec().array();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad())
      a.node()->ensure_grad().vec().array() += n.grad.vec().array() * b.val().vec().array();
    if (b.requires_grad())
      b.node()->ensure_grad().vec().array() += n.grad.vec().array() * a.val().vec().array();
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.val();
  out.vec() *= s;
  return make_node<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    a.node()->ensure_grad().vec() += s * n.grad.vec();
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.val();
  out.vec().array() += s;
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    a.node()->ensure_grad().vec() += n.grad.vec();
  });
}

// y = x + b with b broadcast over rows; the linear-layer bias.
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& b) {
  if (a.val().cols() != b.val().size())
    throw std::invalid_argument("add_bias: bias width mismatch");
  Tensor<T> out = a.val();
  out.mat().rowwise() += b.val().vec().transpose();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad()) a.node()->ensure_grad().vec() += n.grad.vec();
    if (b.requires_grad())
      b.node()->ensure_grad().vec() += n.grad.mat().colwise().sum().transpose();
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.val();
  out.vec() = out.vec().cwiseMax(T(0));
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a.node()->ensure_grad();
    const auto& x = a.val();
    for (int64_t i = 0; i < x.size(); ++i)
      if (x[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-out[i]));
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a.node()->ensure_grad();
    const auto& v = n.value;
    for (int64_t i = 0; i < v.size(); ++i) g[i] += n.grad[i] * v[i] * (T(1) - v[i]);
  });
}

// x * sigmoid(x); the smooth ReLU-family activation used throughout.
template <typename T>
Var<T> silu(const Var<T>& a) {
  const auto& x = a.val();
  Tensor<T> out(x.shape());
  Tensor<T> sig(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    sig[i] = T(1) / (T(1) + std::exp(-x[i]));
    out[i] = x[i] * sig[i];
  }
  return make_node<T>(std::move(out), {a}, [a, sig](Node<T>& n) {
    auto& g = a.node()->ensure_grad();
    const auto& x = a.val();
    for (int64_t i = 0; i < x.size(); ++i) {
      const T s = sig[i];
      g[i] += n.grad[i] * (s + x[i] * s * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = a.val();
  out.vec().array() = out.vec().array().square();
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    a.node()->ensure_grad().vec().array() +=
        T(2) * n.grad.vec().array() * a.val().vec().array();
  });
}

// max(x, floor) with zero gradient in the clamped branch (free-bits clamp).
template <typename T>
Var<T> clamp_min_constgrad(const Var<T>& a, T floor) {
  Tensor<T> out = a.val();
  out.vec() = out.vec().cwiseMax(floor);
  return make_node<T>(std::move(out), {a}, [a, floor](Node<T>& n) {
    auto& g = a.node()->ensure_grad();
    const auto& x = a.val();
    for (int64_t i = 0; i < x.size(); ++i)
      if (x[i] > floor) g[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  Tensor<T> out = a.val().reshaped(std::move(shape));
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    a.node()->ensure_grad().vec() += n.grad.vec();
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, int c0, int len) {
  const auto& x = a.val();
  if (c0 < 0 || c0 + len > x.cols()) throw std::invalid_argument("slice_cols: out of range");
  Tensor<T> out({x.rows(), len});
  out.mat() = x.mat().middleCols(c0, len);
  return make_node<T>(std::move(out), {a}, [a, c0, len](Node<T>& n) {
    a.node()->ensure_grad().mat().middleCols(c0, len) += n.grad.mat();
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int rows = parts[0].val().rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.val().rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.val().cols();
  }
  Tensor<T> out({rows, total});
  int c = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(c, p.val().cols()) = p.val().mat();
    c += p.val().cols();
  }
  return make_node<T>(std::move(out), parts, [parts](Node<T>& n) {
    int c = 0;
    for (const auto& p : parts) {
      const int w = p.val().cols();
      if (p.requires_grad()) p.node()->ensure_grad().mat() += n.grad.mat().middleCols(c, w);
      c += w;
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<int> idx) {
  const auto& x = a.val();
  const int cols = x.cols();
  Tensor<T> out({static_cast<int>(idx.size()), cols});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows()) throw std::invalid_argument("gather_rows: index");
    out.mat().row(static_cast<int>(i)) = x.mat().row(idx[i]);
  }
  return make_node<T>(std::move(out), {a}, [a, idx = std::move(idx)](Node<T>& n) {
    auto g = a.node()->ensure_grad().mat();
    for (size_t i = 0; i < idx.size(); ++i)
      g.row(idx[i]) += n.grad.mat().row(static_cast<int>(i));
  });
}

// [B*T, d] -> [B*h, T, dk] head split for attention (row-major copy).
template <typename T>
Var<T> split_heads(const Var<T>& a, int batch, int seq, int heads) {
  const int d = a.val().cols();
  if (a.val().rows() != batch * seq || d % heads != 0)
    throw std::invalid_argument("split_heads: shape mismatch");
  const int dk = d / heads;
  Tensor<T> out({batch * heads, seq, dk});
  const T* src = a.val().data();
  T* dst = out.data();
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq; ++t)
      for (int h = 0; h < heads; ++h)
        std::copy_n(src + (static_cast<int64_t>(b) * seq + t) * d + h * dk, dk,
                    dst + ((static_cast<int64_t>(b) * heads + h) * seq + t) * dk);
  return make_node<T>(std::move(out), {a}, [a, batch, seq, heads, dk, d](Node<T>& n) {
    T* gsrc = a.node()->ensure_grad().data();
    const T* gdst = n.grad.data();
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < seq; ++t)
        for (int h = 0; h < heads; ++h) {
          const T* from = gdst + ((static_cast<int64_t>(b) * heads + h) * seq + t) * dk;
          T* to = gsrc + (static_cast<int64_t>(b) * seq + t) * d + h * dk;
          for (int i = 0; i < dk; ++i) to[i] += from[i];
        }
  });
}

// Inverse of split_heads: [B*h, T, dk] -> [B*T, d].
template <typename T>
Var<T> merge_heads(const Var<T>& a, int batch, int seq, int heads) {
  if (a.val().rank() != 3 || a.val().dim(0) != batch * heads || a.val().dim(1) != seq)
    throw std::invalid_argument("merge_heads: shape mismatch");
  const int dk = a.val().dim(2);
  const int d = heads * dk;
  Tensor<T> out({batch * seq, d});
  const T* src = a.val().data();
  T* dst = out.data();
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq; ++t)
      for (int h = 0; h < heads; ++h)
        std::copy_n(src + ((static_cast<int64_t>(b) * heads + h) * seq + t) * dk, dk,
                    dst + (static_cast<int64_t>(b) * seq + t) * d + h * dk);
  return make_node<T>(std::move(out), {a}, [a, batch, seq, heads, dk, d](Node<T>& n) {
    T* gsrc = a.node()->ensure_grad().data();
    const T* gdst = n.grad.data();
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < seq; ++t)
        for (int h = 0; h < heads; ++h) {
          const T* from = gdst + (static_cast<int64_t>(b) * seq + t) * d + h * dk;
          T* to = gsrc + ((static_cast<int64_t>(b) * heads + h) * seq + t) * dk;
          for (int i = 0; i < dk; ++i) to[i] += from[i];
        }
  });
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.val();
  const auto& B = b.val();
  if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor<T> out({A.rows(), B.cols()});
  out.mat().noalias() = A.mat() * B.mat();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad())
      a.node()->ensure_grad().mat().noalias() += n.grad.mat() * b.val().mat().transpose();
    if (b.requires_grad())
      b.node()->ensure_grad().mat().noalias() += a.val().mat().transpose() * n.grad.mat();
  });
}

// a [M,K] * b[N,K]^T -> [M,N]; the natural layout for Linear weights [out,in].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const auto& A = a.val();
  const auto& B = b.val();
  if (A.cols() != B.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Tensor<T> out({A.rows(), B.rows()});
  out.mat().noalias() = A.mat() * B.mat().transpose();
  return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad())
      a.node()->ensure_grad().mat().noalias() += n.grad.mat() * b.val().mat();
    if (b.requires_grad())
      b.node()->ensure_grad().mat().noalias() += n.grad.mat().transpose() * a.val().mat();
  });
}

// out[g] = op(a[g]) * op(b[g]) over a leading group dimension.
template <typename T>
Var<T> batched_matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  const auto& A = a.val();
  const auto& B = b.val();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0))
    throw std::invalid_argument("batched_matmul: expects rank-3 with equal group dim");
  const int G = A.dim(0);
  const int am = A.dim(1), ak = A.dim(2);
  const int bk = B.dim(1), bn = B.dim(2);
  const int M = trans_a ? ak : am;
  const int K = trans_a ? am : ak;
  const int Kb = trans_b ? bn : bk;
  const int N = trans_b ? bk : bn;
  if (K != Kb) throw std::invalid_argument("batched_matmul: inner dim mismatch");
  Tensor<T> out({G, M, N});
  const int64_t sa = static_cast<int64_t>(am) * ak;
  const int64_t sb = static_cast<int64_t>(bk) * bn;
  const int64_t so = static_cast<int64_t>(M) * N;
  for (int g = 0; g < G; ++g) {
    auto Am = A.block_mat(g * sa, am, ak);
    auto Bm = B.block_mat(g * sb, bk, bn);
    auto Om = out.block_mat(g * so, M, N);
    if (!trans_a && !trans_b)
      Om.noalias() = Am * Bm;
    else if (!trans_a && trans_b)
      Om.noalias() = Am * Bm.transpose();
    else if (trans_a && !trans_b)
      Om.noalias() = Am.transpose() * Bm;
    else
      Om.noalias() = Am.transpose() * Bm.transpose();
  }
  return make_node<T>(std::move(out), {a, b},
                      [a, b, G, am, ak, bk, bn, M, N, sa, sb, so, trans_a, trans_b](Node<T>& n) {
    for (int g = 0; g < G; ++g) {
      auto Gm = n.grad.block_mat(g * so, M, N);
      auto Am = a.val().block_mat(g * sa, am, ak);
      auto Bm = b.val().block_mat(g * sb, bk, bn);
      if (a.requires_grad()) {
        auto dA = a.node()->ensure_grad().block_mat(g * sa, am, ak);
        // dA' = dC * B'^T, then undo trans_a
        if (!trans_a) {
          if (!trans_b)
            dA.noalias() += Gm * Bm.transpose();
          else
            dA.noalias() += Gm * Bm;
        } else {
          if (!trans_b)
            dA.noalias() += Bm * Gm.transpose();
          else
            dA.noalias() += Bm.transpose() * Gm.transpose();
        }
      }
      if (b.requires_grad()) {
        auto dB = b.node()->ensure_grad().block_mat(g * sb, bk, bn);
        if (!trans_b) {
          if (!trans_a)
            dB.noalias() += Am.transpose() * Gm;
          else
            dB.noalias() += Am * Gm;
        } else {
          if (!trans_a)
            dB.noalias() += Gm.transpose() * Am;
          else
            dB.noalias() += Gm.transpose() * Am.transpose();
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(a.val().vec().sum());
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    a.node()->ensure_grad().vec().array() += n.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const T inv = T(1) / static_cast<T>(a.val().size());
  Tensor<T> out = Tensor<T>::scalar(a.val().vec().sum() * inv);
  return make_node<T>(std::move(out), {a}, [a, inv](Node<T>& n) {
    a.node()->ensure_grad().vec().array() += n.grad[0] * inv;
  });
}

template <typename T>
Var<T> rowwise_sum(const Var<T>& a) {
  const auto& x = a.val();
  Tensor<T> out({x.rows()});
  out.vec() = x.mat().rowwise().sum();
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    a.node()->ensure_grad().mat().colwise() += n.grad.vec();
  });
}

// Sums groups of `group` consecutive entries of a flat [R] tensor -> [R/group];
// used to total per-variable KL over the categorical grid.
template <typename T>
Var<T> group_sum(const Var<T>& a, int group) {
  const auto& x = a.val();
  if (x.size() % group != 0) throw std::invalid_argument("group_sum: size not divisible");
  const int out_n = static_cast<int>(x.size() / group);
  Tensor<T> out({out_n});
  for (int i = 0; i < out_n; ++i) {
    T s = T(0);
    for (int j = 0; j < group; ++j) s += x[static_cast<int64_t>(i) * group + j];
    out[i] = s;
  }
  return make_node<T>(std::move(out), {a}, [a, group, out_n](Node<T>& n) {
    auto& g = a.node()->ensure_grad();
    for (int i = 0; i < out_n; ++i)
      for (int j = 0; j < group; ++j) g[static_cast<int64_t>(i) * group + j] += n.grad[i];
  });
}

// Per-row scaling by constant weights w[R].
template <typename T>
Var<T> scale_rows_const(const Var<T>& a, Tensor<T> w) {
  const auto& x = a.val();
  if (w.size() != x.rows()) throw std::invalid_argument("scale_rows_const: weight length");
  Tensor<T> out = x;
  out.mat().array().colwise() *= w.vec().array();
  return make_node<T>(std::move(out), {a}, [a, w = std::move(w)](Node<T>& n) {
    auto g = a.node()->ensure_grad().mat();
    g.array() += n.grad.mat().array().colwise() * w.vec().array();
  });
}

// ---------------------------------------------------------------------------
// Plain-tensor math shared by tape forward passes and inference paths
// ---------------------------------------------------------------------------

template <typename T>
void softmax_rows_inplace(Tensor<T>& x) {
  auto m = x.mat();
  for (int r = 0; r < x.rows(); ++r) {
    auto row = m.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

template <typename T>
Tensor<T> softmax_rows_value(const Tensor<T>& x) {
  Tensor<T> out = x;
  softmax_rows_inplace(out);
  return out;
}

template <typename T>
Tensor<T> log_softmax_rows_value(const Tensor<T>& x) {
  Tensor<T> out = x;
  auto m = out.mat();
  for (int r = 0; r < out.rows(); ++r) {
    auto row = m.row(r);
    const T mx = row.maxCoeff();
    const T lse = std::log((row.array() - mx).exp().sum()) + mx;
    row.array() -= lse;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family (tape)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  Tensor<T> out = softmax_rows_value(a.val());
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto g = a.node()->ensure_grad().mat();
    const auto& p = n.value;
    for (int r = 0; r < p.rows(); ++r) {
      auto pr = p.mat().row(r).array();
      auto gr = n.grad.mat().row(r).array();
      const T dot = (pr * gr).sum();
      g.row(r).array() += pr * (gr - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  Tensor<T> out = log_softmax_rows_value(a.val());
  return make_node<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto g = a.node()->ensure_grad().mat();
    const auto& lp = n.value;
    for (int r = 0; r < lp.rows(); ++r) {
      auto gr = n.grad.mat().row(r).array();
      const T gsum = gr.sum();
      g.row(r).array() += gr - lp.mat().row(r).array().exp() * gsum;
    }
  });
}

// Softmax over the causal prefix: input is [G, T, T] attention scores; row
// (g, t) is normalized over columns 0..t, the rest forced to zero.
template <typename T>
Var<T> softmax_causal(const Var<T>& a, int seq) {
  const auto& x = a.val();
  if (x.cols() != seq || x.rows() % seq != 0)
    throw std::invalid_argument("softmax_causal: shape mismatch");
  Tensor<T> out = x;
  auto m = out.mat();
  for (int r = 0; r < out.rows(); ++r) {
    const int t = r % seq;
    auto row = m.row(r).head(t + 1);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
    m.row(r).tail(seq - t - 1).setZero();
  }
  return make_node<T>(std::move(out), {a}, [a, seq](Node<T>& n) {
    auto g = a.node()->ensure_grad().mat();
    const auto& p = n.value;
    for (int r = 0; r < p.rows(); ++r) {
      const int t = r % seq;
      auto pr = p.mat().row(r).head(t + 1).array();
      auto gr = n.grad.mat().row(r).head(t + 1).array();
      const T dot = (pr * gr).sum();
      g.row(r).head(t + 1).array() += pr * (gr - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Per-row cross-entropy against constant soft targets: -sum p * log_softmax.
template <typename T>
Var<T> cross_entropy_soft(const Var<T>& logits, Tensor<T> target_probs) {
  const auto& x = logits.val();
  check_same_shape(x, target_probs, "cross_entropy_soft");
  Tensor<T> lp = log_softmax_rows_value(x);
  Tensor<T> out({x.rows()});
  for (int r = 0; r < x.rows(); ++r)
    out[r] = -(target_probs.mat().row(r).array() * lp.mat().row(r).array()).sum();
  return make_node<T>(std::move(out), {logits},
                      [logits, lp = std::move(lp), tp = std::move(target_probs)](Node<T>& n) {
    auto g = logits.node()->ensure_grad().mat();
    for (int r = 0; r < lp.rows(); ++r) {
      const T gr = n.grad[r];
      g.row(r).array() +=
          gr * (lp.mat().row(r).array().exp() - tp.mat().row(r).array());
    }
  });
}

// Per-row cross-entropy against integer class targets.
template <typename T>
Var<T> cross_entropy_index(const Var<T>& logits, std::vector<int> targets) {
  const auto& x = logits.val();
  if (static_cast<int>(targets.size()) != x.rows())
    throw std::invalid_argument("cross_entropy_index: target count mismatch");
  Tensor<T> lp = log_softmax_rows_value(x);
  Tensor<T> out({x.rows()});
  for (int r = 0; r < x.rows(); ++r) out[r] = -lp.at2(r, targets[static_cast<size_t>(r)]);
  return make_node<T>(std::move(out), {logits},
                      [logits, lp = std::move(lp), targets = std::move(targets)](Node<T>& n) {
    auto g = logits.node()->ensure_grad().mat();
    for (int r = 0; r < lp.rows(); ++r) {
      const T gr = n.grad[r];
      g.row(r).array() += gr * lp.mat().row(r).array().exp();
      g(r, targets[static_cast<size_t>(r)]) -= gr;
    }
  });
}

// Numerically stable elementwise binary cross-entropy on logits.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, Tensor<T> targets) {
  const auto& x = logits.val();
  check_same_shape(x, targets, "bce_with_logits");
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    const T xi = x[i];
    out[i] = std::max(xi, T(0)) - xi * targets[i] + std::log1p(std::exp(-std::abs(xi)));
  }
  return make_node<T>(std::move(out), {logits}, [logits, y = std::move(targets)](Node<T>& n) {
    auto& g = logits.node()->ensure_grad();
    const auto& x = logits.val();
    for (int64_t i = 0; i < x.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      g[i] += n.grad[i] * (s - y[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Straight-through categorical sample
// ---------------------------------------------------------------------------

// Forward: exact one-hot per row sampled from softmax(logits). Backward: the
// cotangent is routed as if the output were softmax(logits) itself.
template <typename T>
Var<T> straight_through_sample(const Var<T>& logits, Rng& rng) {
  const auto& x = logits.val();
  if (!x.all_finite()) throw std::domain_error("straight_through_sample: non-finite logits");
  Tensor<T> p = softmax_rows_value(x);
  Tensor<T> out(x.shape());
  for (int r = 0; r < x.rows(); ++r) {
    const T* row = p.data() + static_cast<int64_t>(r) * p.cols();
    const int k = rng.categorical(std::span<const T>(row, static_cast<size_t>(p.cols())));
    out.at2(r, k) = T(1);
  }
  return make_node<T>(std::move(out), {logits}, [logits, p = std::move(p)](Node<T>& n) {
    auto g = logits.node()->ensure_grad().mat();
    for (int r = 0; r < p.rows(); ++r) {
      auto pr = p.mat().row(r).array();
      auto gr = n.grad.mat().row(r).array();
      const T dot = (pr * gr).sum();
      g.row(r).array() += pr * (gr - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm_value(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                           T eps) {
  Tensor<T> out = x;
  auto m = out.mat();
  const int C = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    auto row = m.row(r);
    const T mu = row.mean();
    const T var = (row.array() - mu).square().sum() / static_cast<T>(C);
    const T inv = T(1) / std::sqrt(var + eps);
    row = ((row.array() - mu) * inv) * gain.vec().transpose().array() +
          bias.vec().transpose().array();
  }
  return out;
}

template <typename T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gain, const Var<T>& bias, T eps) {
  const auto& x = a.val();
  const int C = x.cols();
  if (gain.val().size() != C || bias.val().size() != C)
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std({x.rows()});
  for (int r = 0; r < x.rows(); ++r) {
    auto row = x.mat().row(r);
    const T mu = row.mean();
    const T var = (row.array() - mu).square().sum() / static_cast<T>(C);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    xhat.mat().row(r) = (row.array() - mu) * inv;
  }
  Tensor<T> out(x.shape());
  out.mat() = ((xhat.mat().array().rowwise() * gain.val().vec().transpose().array()).rowwise() +
               bias.val().vec().transpose().array())
                  .matrix();
  return make_node<T>(std::move(out), {a, gain, bias},
                      [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
                       C](Node<T>& n) {
    const auto gmat = n.grad.mat();
    if (gain.requires_grad())
      gain.node()->ensure_grad().vec() +=
          (gmat.array() * xhat.mat().array()).matrix().colwise().sum().transpose();
    if (bias.requires_grad())
      bias.node()->ensure_grad().vec() += gmat.colwise().sum().transpose();
    if (a.requires_grad()) {
      auto ga = a.node()->ensure_grad().mat();
      const T invC = T(1) / static_cast<T>(C);
      for (int r = 0; r < xhat.rows(); ++r) {
        auto dxhat = (gmat.row(r).array() * gain.val().vec().transpose().array()).eval();
        const T s1 = dxhat.sum();
        const T s2 = (dxhat * xhat.mat().row(r).array()).sum();
        ga.row(r).array() +=
            inv_std[r] * (dxhat - invC * s1 - xhat.mat().row(r).array() * (invC * s2));
      }
    }
  });
}

}  // namespace matwm
