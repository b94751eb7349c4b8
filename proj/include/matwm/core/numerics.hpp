#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "matwm/core/graph.hpp"
#include "matwm/core/nn.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// ---------------------------------------------------------------------------
// symlog squashing
// ---------------------------------------------------------------------------

template <typename T>
T symlog(T x) {
  if (!std::isfinite(x)) throw std::domain_error("symlog: non-finite input");
  return x >= T(0) ? std::log1p(x) : -std::log1p(-x);
}

template <typename T>
T symexp(T x) {
  if (!std::isfinite(x)) throw std::domain_error("symexp: non-finite input");
  return x >= T(0) ? std::expm1(x) : -std::expm1(-x);
}

template <typename T>
Tensor<T> symlog(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = symlog(out[i]);
  return out;
}

template <typename T>
Tensor<T> symexp(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = symexp(out[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Two-hot discretization over symlog-spaced buckets
// ---------------------------------------------------------------------------

// Scalar targets are squashed with symlog and encoded as a convex combination
// of the two nearest bucket centers; decoding reverses both steps exactly for
// in-range values.
template <typename T>
struct TwoHot {
  int bins;
  T lo, hi;                 // bucket range in symlog space
  std::vector<T> centers;   // length `bins`, uniform in symlog space

  explicit TwoHot(int bins_ = 255, T lo_ = T(-20), T hi_ = T(20))
      : bins(bins_), lo(lo_), hi(hi_), centers(static_cast<size_t>(bins_)) {
    if (bins < 2) throw std::invalid_argument("TwoHot: needs at least 2 bins");
    for (int i = 0; i < bins; ++i)
      centers[static_cast<size_t>(i)] =
          lo + (hi - lo) * static_cast<T>(i) / static_cast<T>(bins - 1);
  }

  // Writes the target distribution for raw value y into row r of `probs`.
  void encode_row(T y, Tensor<T>& probs, int r) const {
    const T ys = std::clamp(symlog(y), lo, hi);
    const T pos = (ys - lo) / (hi - lo) * static_cast<T>(bins - 1);
    const int k = std::min(static_cast<int>(pos), bins - 2);
    const T w_hi = pos - static_cast<T>(k);
    probs.at2(r, k) = T(1) - w_hi;
    probs.at2(r, k + 1) = w_hi;
  }

  Tensor<T> encode(const std::vector<T>& ys) const {
    Tensor<T> probs({static_cast<int>(ys.size()), bins});
    for (size_t i = 0; i < ys.size(); ++i) encode_row(ys[i], probs, static_cast<int>(i));
    return probs;
  }

  // Expected value under a distribution over buckets, mapped back through
  // symexp. `probs` rows must sum to one.
  T decode_row(const Tensor<T>& probs, int r) const {
    T acc = T(0);
    for (int i = 0; i < bins; ++i) {
      const T p = probs.at2(r, i);
      if (p < T(0)) throw std::domain_error("TwoHot::decode: negative probability");
      acc += p * centers[static_cast<size_t>(i)];
    }
    return symexp(acc);
  }

  std::vector<T> decode(const Tensor<T>& probs) const {
    std::vector<T> out(static_cast<size_t>(probs.rows()));
    for (int r = 0; r < probs.rows(); ++r) out[static_cast<size_t>(r)] = decode_row(probs, r);
    return out;
  }

  // Decode straight from logits (softmax applied internally).
  std::vector<T> decode_logits(const Tensor<T>& logits) const {
    return decode(softmax_rows_value(logits));
  }
};

// ---------------------------------------------------------------------------
// Lambda returns
// ---------------------------------------------------------------------------

// rewards[t] and conts[t] describe the transition out of state t; values has
// one extra bootstrap entry. Output is G_0..G_{L-1}; the recursion bottoms
// out at G_L = values[L].
template <typename T>
std::vector<T> lambda_returns(const std::vector<T>& rewards, const std::vector<T>& conts,
                              const std::vector<T>& values, T gamma, T lambda) {
  const size_t L = rewards.size();
  if (conts.size() != L || values.size() != L + 1)
    throw std::invalid_argument("lambda_returns: length mismatch");
  std::vector<T> out(L);
  T next = values[L];
  for (size_t i = L; i-- > 0;) {
    next = rewards[i] +
           gamma * conts[i] * ((T(1) - lambda) * values[i + 1] + lambda * next);
    out[i] = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Percentile-based return scale
// ---------------------------------------------------------------------------

// Linear-interpolation percentile (the numpy default): rank q/100 * (n-1).
template <typename T>
T percentile(std::vector<T> xs, T q) {
  if (xs.empty()) throw std::invalid_argument("percentile: empty input");
  std::sort(xs.begin(), xs.end());
  const T pos = q / T(100) * static_cast<T>(xs.size() - 1);
  const size_t k = static_cast<size_t>(pos);
  if (k + 1 >= xs.size()) return xs.back();
  const T frac = pos - static_cast<T>(k);
  return xs[k] + frac * (xs[k + 1] - xs[k]);
}

// Spread between the 95th and 5th percentile; the advantage denominator is
// max(1, this).
template <typename T>
T percentile_scale(const std::vector<T>& xs) {
  return percentile(xs, T(95)) - percentile(xs, T(5));
}

// ---------------------------------------------------------------------------
// Categorical KL with free bits (tape)
// ---------------------------------------------------------------------------

// KL(P || Q) per row from logits; rows are individual categorical variables.
template <typename T>
Var<T> kl_categorical_rows(const Var<T>& p_logits, const Var<T>& q_logits) {
  Var<T> lp = log_softmax_rows(p_logits);
  Var<T> lq = log_softmax_rows(q_logits);
  Var<T> p = softmax_rows(p_logits);
  return rowwise_sum(mul(p, sub(lp, lq)));
}

// Total KL over a grid of `vars_per_sample` categorical variables, clamped at
// one nat per sample (zero gradient when clamped), averaged over samples.
template <typename T>
Var<T> kl_free_bits(const Var<T>& p_logits, const Var<T>& q_logits, int vars_per_sample,
                    T floor = T(1)) {
  Var<T> per_row = kl_categorical_rows(p_logits, q_logits);
  Var<T> per_sample = group_sum(per_row, vars_per_sample);
  return mean_all(clamp_min_constgrad(per_sample, floor));
}

// Value-only KL for diagnostics.
template <typename T>
T kl_categorical_value(const Tensor<T>& p_logits, const Tensor<T>& q_logits) {
  Tensor<T> lp = log_softmax_rows_value(p_logits);
  Tensor<T> lq = log_softmax_rows_value(q_logits);
  T total = T(0);
  for (int r = 0; r < lp.rows(); ++r)
    for (int c = 0; c < lp.cols(); ++c)
      total += std::exp(lp.at2(r, c)) * (lp.at2(r, c) - lq.at2(r, c));
  return total;
}

// Single-grid value form: max(floor, total KL over the grid).
template <typename T>
T kl_free_bits_value(const Tensor<T>& p_logits, const Tensor<T>& q_logits, T floor = T(1)) {
  check_same_shape(p_logits, q_logits, "kl_free_bits");
  return std::max(floor, kl_categorical_value(p_logits, q_logits));
}

// ---------------------------------------------------------------------------
// EMA copy of a parameter set (the slow critic)
// ---------------------------------------------------------------------------

template <typename T>
struct EmaParams {
  T sigma = T(0.98);
  std::vector<Tensor<T>> shadow;

  EmaParams() = default;

  EmaParams(const ParamList<T>& params, T sigma_) : sigma(sigma_) {
    for (const auto& [name, p] : params.items) shadow.push_back(p.val());
  }

  void update(const ParamList<T>& params) {
    if (params.items.size() != shadow.size())
      throw std::invalid_argument("EmaParams: param count changed");
    for (size_t i = 0; i < shadow.size(); ++i)
      shadow[i].vec() =
          sigma * shadow[i].vec() + (T(1) - sigma) * params.items[i].second.val().vec();
  }

  // Writes the shadow weights into a structurally identical module.
  void apply_to(ParamList<T>& params) const {
    if (params.items.size() != shadow.size())
      throw std::invalid_argument("EmaParams: param count changed");
    for (size_t i = 0; i < shadow.size(); ++i) {
      check_same_shape(shadow[i], params.items[i].second.val(), params.items[i].first.c_str());
      params.items[i].second.val() = shadow[i];
    }
  }
};

}  // namespace matwm
