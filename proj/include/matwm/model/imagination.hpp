#pragma once

#include <functional>
#include <vector>

#include "matwm/model/batch.hpp"
#include "matwm/model/dynamics.hpp"

namespace matwm {

// One imagined on-policy batch for a single agent. Rows are stored k-major:
// row k*batch + b is step k of rollout b. `states` holds H+1 entries per
// rollout (the extra one bootstraps the value target); actions, masks,
// rewards and continuations hold H.
template <typename T>
struct ImaginationBuffer {
  int batch = 0, horizon = 0, state_dim = 0, num_actions = 0;
  Tensor<T> states;          // [(H+1)*batch, state_dim]
  std::vector<int> actions;  // [H*batch], local ids
  Tensor<T> masks;           // [H*batch, A] in {0,1}; empty when masking off
  std::vector<T> rewards;    // [H*batch], decoded units
  std::vector<T> conts;      // [H*batch], predicted P(continue)

  int row(int k, int b) const { return k * batch + b; }
};

// policy(states [B, Ds], masks or nullptr, rng) -> local action per row.
template <typename T>
using PolicyFn =
    std::function<std::vector<int>(const Tensor<T>&, const Tensor<T>*, Rng&)>;

// Sequence-model state after replaying a real context incrementally.
template <typename T>
struct WarmState {
  typename WorldModel<T>::Stream stream;
  Tensor<T> h_last;  // [B, hidden], trunk output at the final context step
  int batch = 0;
};

// Contiguous row block [first, first+count) as its own tensor.
template <typename T>
Tensor<T> slice_rows_of(const Tensor<T>& x, int first, int count) {
  Tensor<T> out({count, x.cols()});
  out.mat() = x.mat().block(first, 0, count, x.cols());
  return out;
}

namespace imagine_detail {

template <typename T>
Tensor<T> step_slice(const Tensor<T>& obs, int batch, int len, int t) {
  std::vector<int> shape = obs.shape();
  const int64_t per = obs.size() / ((int64_t)batch * len);
  shape[0] = batch;
  Tensor<T> out(shape);
  for (int b = 0; b < batch; ++b)
    std::copy(obs.data() + ((int64_t)b * len + t) * per,
              obs.data() + ((int64_t)b * len + t + 1) * per, out.data() + (int64_t)b * per);
  return out;
}

}  // namespace imagine_detail

// Replays `ctx` through the trunk with KV caches, consuming the recorded
// actions, and leaves the caches positioned after the last context step.
// `h_all` (optional) receives every h_t, laid out like ctx.obs, so tests can
// compare the incremental path against a full-sequence forward pass.
template <typename T>
WarmState<T> warm_context(const WorldModel<T>& wm, const ContextBatch<T>& ctx, int horizon,
                          Rng& rng, Tensor<T>* h_all = nullptr) {
  if (ctx.batch < 1 || ctx.len < 1) throw std::invalid_argument("imagine: empty context");
  const int cap = ctx.len + horizon + 1;
  if (cap > wm.cfg.max_seq)
    throw std::invalid_argument("imagine: context + horizon exceeds max sequence length");
  WarmState<T> ws;
  ws.batch = ctx.batch;
  ws.stream = wm.make_stream(ctx.batch, cap);
  if (h_all) *h_all = Tensor<T>({ctx.rows(), wm.cfg.hidden});
  for (int t = 0; t < ctx.len; ++t) {
    Tensor<T> obs_t = imagine_detail::step_slice(ctx.obs, ctx.batch, ctx.len, t);
    Tensor<T> z = wm.sample_value(wm.encode_value(obs_t), rng);
    wm.teammate_step(z, ws.stream);  // keep the teammate cache in sync
    std::vector<int> acts(ctx.batch);
    for (int b = 0; b < ctx.batch; ++b) acts[b] = ctx.actions[b * ctx.len + t];
    ws.h_last = wm.trunk_step(z, acts, ws.stream);
    if (h_all)
      for (int b = 0; b < ctx.batch; ++b)
        h_all->mat().row(b * ctx.len + t) = ws.h_last.mat().row(b);
  }
  return ws;
}

// Predicted-legality gate: probabilities > 0.5 count as legal; if a row has
// none, the single highest-probability action is forced legal so the policy
// always has a choice.
template <typename T>
Tensor<T> threshold_masks(const Tensor<T>& probs) {
  Tensor<T> out({probs.dim(0), probs.dim(1)});
  for (int r = 0; r < probs.dim(0); ++r) {
    int best = 0;
    bool any = false;
    for (int c = 0; c < probs.dim(1); ++c) {
      if (probs.at2(r, c) > probs.at2(r, best)) best = c;
      if (probs.at2(r, c) > T(0.5)) {
        out.at2(r, c) = T(1);
        any = true;
      }
    }
    if (!any) out.at2(r, best) = T(1);
  }
  return out;
}

// Rolls the world model forward `horizon` steps from a warmed context, acting
// with `policy` for agent `agent_index` and letting the model dream teammate
// behaviour, rewards and continuations. Entirely tape-free.
template <typename T>
ImaginationBuffer<T> imagine_rollout(const WorldModel<T>& wm, WarmState<T> ws, int agent_index,
                                     const PolicyFn<T>& policy, int horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("imagine: horizon must be >= 1");
  if (agent_index < 0 || agent_index >= wm.cfg.num_agents)
    throw std::invalid_argument("imagine: agent index out of range");
  const int b = ws.batch;
  const int tm_width = wm.has_teammate() ? wm.cfg.teammates() * wm.cfg.num_actions : 0;
  const int ds = wm.cfg.latent_dim() + wm.cfg.hidden + tm_width;

  ImaginationBuffer<T> buf;
  buf.batch = b;
  buf.horizon = horizon;
  buf.state_dim = ds;
  buf.num_actions = wm.cfg.num_actions;
  buf.states = Tensor<T>({(horizon + 1) * b, ds});
  buf.actions.resize((size_t)horizon * b);
  buf.rewards.resize((size_t)horizon * b);
  buf.conts.resize((size_t)horizon * b);
  if (wm.cfg.use_masks) buf.masks = Tensor<T>({horizon * b, wm.cfg.num_actions});

  Tensor<T> h = ws.h_last;
  Tensor<T> z = wm.sample_value(wm.prior_logits_value(h), rng);

  auto write_state = [&](int k, const Tensor<T>& zk, const Tensor<T>& hk, const Tensor<T>& tmk) {
    for (int i = 0; i < b; ++i) {
      auto row = buf.states.mat().row(buf.row(k, i));
      row.segment(0, wm.cfg.latent_dim()) = zk.mat().row(i);
      row.segment(wm.cfg.latent_dim(), wm.cfg.hidden) = hk.mat().row(i);
      if (tm_width > 0)
        row.segment(wm.cfg.latent_dim() + wm.cfg.hidden, tm_width) = tmk.mat().row(i);
    }
  };

  for (int k = 0; k < horizon; ++k) {
    Tensor<T> tm = wm.teammate_step(z, ws.stream);
    write_state(k, z, h, tm);

    const Tensor<T>* mask_ptr = nullptr;
    Tensor<T> mask;
    if (wm.cfg.use_masks) {
      mask = threshold_masks(wm.mask_value(z));
      for (int i = 0; i < b; ++i)
        buf.masks.mat().row((int64_t)k * b + i) = mask.mat().row(i);
      mask_ptr = &mask;
    }

    std::vector<int> local = policy(slice_rows_of(buf.states, k * b, b), mask_ptr, rng);
    if ((int)local.size() != b) throw std::runtime_error("imagine: policy returned wrong count");
    std::vector<int> global(b);
    for (int i = 0; i < b; ++i) {
      if (local[i] < 0 || local[i] >= wm.cfg.num_actions)
        throw std::runtime_error("imagine: policy action out of range");
      buf.actions[(size_t)k * b + i] = local[i];
      global[i] = wm.cfg.global_action(agent_index, local[i]);
    }

    h = wm.trunk_step(z, global, ws.stream);
    std::vector<T> r = wm.reward_value(h);
    std::vector<T> c = wm.cont_value(h);
    for (int i = 0; i < b; ++i) {
      buf.rewards[(size_t)k * b + i] = r[i];
      buf.conts[(size_t)k * b + i] = c[i];
    }
    z = wm.sample_value(wm.prior_logits_value(h), rng);
  }

  Tensor<T> tm = wm.teammate_step(z, ws.stream);
  write_state(horizon, z, h, tm);
  return buf;
}

}  // namespace matwm
