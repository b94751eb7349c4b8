#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "matwm/core/nn.hpp"
#include "matwm/core/serialize.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// Adam with optional global-norm gradient clipping and linear warmup.
// Holds moment buffers aligned with a fixed ParamList; the list order must be
// identical across runs and across checkpoint save/load.
template <typename T>
struct Adam {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T clip_norm = T(0);     // 0 disables clipping
  int64_t warmup = 0;     // steps of linear learning-rate ramp, 0 disables
  int64_t step_count = 0;

  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  Adam() = default;

  Adam(const ParamList<T>& params, T lr_, T clip, int64_t warmup_steps)
      : lr(lr_), clip_norm(clip), warmup(warmup_steps) {
    for (const auto& [name, p] : params.items) {
      m.emplace_back(p.val().shape());
      v.emplace_back(p.val().shape());
    }
  }

  // Returns the pre-clip global gradient norm (a useful training metric).
  T step(ParamList<T>& params) {
    if (params.items.size() != m.size()) throw std::invalid_argument("adam: param count changed");
    double sq = 0;
    for (auto& [name, p] : params.items) {
      const Tensor<T>& g = p.node()->ensure_grad();
      sq += static_cast<double>(g.vec().squaredNorm());
    }
    const T gnorm = static_cast<T>(std::sqrt(sq));
    T scale = T(1);
    if (clip_norm > T(0) && gnorm > clip_norm) scale = clip_norm / gnorm;

    step_count += 1;
    T lr_t = lr;
    if (warmup > 0 && step_count < warmup)
      lr_t = lr * static_cast<T>(step_count) / static_cast<T>(warmup);
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));

    for (size_t i = 0; i < m.size(); ++i) {
      auto& p = params.items[i].second;
      Tensor<T>& g = p.node()->ensure_grad();
      auto gv = g.vec().array() * scale;
      m[i].vec().array() = beta1 * m[i].vec().array() + (T(1) - beta1) * gv;
      v[i].vec().array() = beta2 * v[i].vec().array() + (T(1) - beta2) * gv.square();
      p.val().vec().array() -=
          lr_t * (m[i].vec().array() / bc1) / ((v[i].vec().array() / bc2).sqrt() + eps);
    }
    return gnorm;
  }

  void zero_grad(ParamList<T>& params) {
    for (auto& [name, p] : params.items) p.zero_grad();
  }

  void save(BinWriter& w) const {
    w.tag("adam");
    w.i64(step_count);
    w.u64(m.size());
    for (size_t i = 0; i < m.size(); ++i) {
      w.tensor(m[i]);
      w.tensor(v[i]);
    }
  }

  void load(BinReader& r) {
    r.expect_tag("adam");
    step_count = r.i64();
    const uint64_t n = r.u64();
    if (n != m.size()) throw std::runtime_error("checkpoint: adam buffer count mismatch");
    for (size_t i = 0; i < m.size(); ++i) {
      Tensor<T> mm = r.template tensor<T>();
      Tensor<T> vv = r.template tensor<T>();
      check_same_shape(mm, m[i], "adam.m");
      check_same_shape(vv, v[i], "adam.v");
      m[i] = std::move(mm);
      v[i] = std::move(vv);
    }
  }
};

// Parameter save/load keyed by the registry names.
template <typename T>
void save_params(BinWriter& w, const ParamList<T>& params) {
  w.tag("params");
  w.u64(params.items.size());
  for (const auto& [name, p] : params.items) {
    w.str(name);
    w.tensor(p.val());
  }
}

template <typename T>
void load_params(BinReader& r, ParamList<T>& params) {
  r.expect_tag("params");
  const uint64_t n = r.u64();
  if (n != params.items.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& [name, p] : params.items) {
    const std::string got = r.str();
    if (got != name)
      throw std::runtime_error("checkpoint: parameter order mismatch: expected " + name +
                               ", found " + got);
    Tensor<T> t = r.template tensor<T>();
    check_same_shape(t, p.val(), name.c_str());
    p.val() = std::move(t);
  }
}

}  // namespace matwm
