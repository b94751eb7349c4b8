#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "matwm/core/nn.hpp"
#include "matwm/core/numerics.hpp"
#include "matwm/core/optim.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/model/imagination.hpp"

namespace matwm {

struct AgentConfig {
  int state_dim = 0;
  int num_actions = 0;
  int mlp_width = 512, mlp_layers = 3;
  int twohot_bins = 255;
  double twohot_lo = -20.0, twohot_hi = 20.0;
  double lr = 3e-4, clip = 100.0;
  double gamma = 0.985, lambda = 0.95;
  double entropy = 3e-4;    // eta
  double ema_sigma = 0.98;  // critic EMA decay
};

template <typename T>
struct AgentUpdateStats {
  T actor_loss = 0, critic_loss = 0, entropy = 0;
  T return_scale = 0;     // S before the max(1, .) floor
  T mean_return = 0;      // mean lambda-return over the batch
  T v_mse_target = 0;     // decoded-unit (V - G)^2, diagnostic
  T v_mse_ema = 0;        // decoded-unit (V - V_ema)^2, diagnostic
  T actor_grad_norm = 0, critic_grad_norm = 0;
};

// One agent's policy and value function, trained purely on imagined batches.
// The critic is a two-hot symlog head; a slow EMA copy of its weights
// regularises the targets. Masked acting renormalises the policy over legal
// actions (illegal logits pushed far negative), matching how the losses see
// the distribution.
template <typename T>
class Agent {
 public:
  AgentConfig cfg;

  Agent(const AgentConfig& c, Rng& rng)
      : cfg(c),
        twohot(c.twohot_bins, T(c.twohot_lo), T(c.twohot_hi)),
        actor_(c.state_dim, c.mlp_width, c.mlp_layers, c.num_actions, rng, true),
        critic_(c.state_dim, c.mlp_width, c.mlp_layers, c.twohot_bins, rng, true),
        ema_net_(c.state_dim, c.mlp_width, c.mlp_layers, c.twohot_bins, rng, true) {
    if (c.state_dim < 1 || c.num_actions < 1)
      throw std::invalid_argument("agent: state_dim and num_actions must be positive");
    actor_.collect(actor_params_, "actor");
    critic_.collect(critic_params_, "critic");
    ema_net_.collect(ema_params_, "critic_ema");
    ema_ = EmaParams<T>(critic_params_, T(c.ema_sigma));
    ema_.apply_to(ema_params_);  // EMA copy starts identical to the critic
    opt_actor_ = Adam<T>(actor_params_, T(c.lr), T(c.clip), 0);
    opt_critic_ = Adam<T>(critic_params_, T(c.lr), T(c.clip), 0);
  }

  // ---- acting ----

  // One local action per state row. argmax=true is the evaluation policy;
  // ties break toward the lowest action index.
  std::vector<int> act(const Tensor<T>& states, const Tensor<T>* masks, bool argmax,
                       Rng& rng) const {
    Tensor<T> logits = actor_.forward_value(states);
    apply_mask_offsets(logits, masks);
    const int b = logits.dim(0), a = logits.dim(1);
    std::vector<int> out(b);
    std::vector<T> probs(a);
    for (int r = 0; r < b; ++r) {
      if (argmax) {
        int best = 0;
        for (int c = 1; c < a; ++c)
          if (logits.at2(r, c) > logits.at2(r, best)) best = c;
        out[r] = best;
        continue;
      }
      T mx = logits.at2(r, 0);
      for (int c = 1; c < a; ++c) mx = std::max(mx, logits.at2(r, c));
      T sum = T(0);
      for (int c = 0; c < a; ++c) {
        probs[c] = std::exp(logits.at2(r, c) - mx);
        sum += probs[c];
      }
      for (auto& p : probs) p /= sum;
      out[r] = (int)rng.categorical(std::span<const T>(probs.data(), probs.size()));
    }
    return out;
  }

  PolicyFn<T> policy(bool argmax) const {
    return [this, argmax](const Tensor<T>& s, const Tensor<T>* m, Rng& rng) {
      return act(s, m, argmax, rng);
    };
  }

  // Decoded state values, value-only path.
  std::vector<T> values(const Tensor<T>& states) const {
    return twohot.decode_logits(critic_.forward_value(states));
  }
  std::vector<T> values_ema(const Tensor<T>& states) const {
    ema_.apply_to(ema_params_);
    return twohot.decode_logits(ema_net_.forward_value(states));
  }

  // ---- learning ----

  AgentUpdateStats<T> update(const ImaginationBuffer<T>& buf, Rng& rng) {
    const int b = buf.batch, h = buf.horizon;
    if (b < 1 || h < 1) throw std::invalid_argument("agent: empty imagination batch");
    if (buf.state_dim != cfg.state_dim || buf.num_actions != cfg.num_actions)
      throw std::invalid_argument("agent: imagination batch shape mismatch");
    AgentUpdateStats<T> stats;

    std::vector<T> v = values(buf.states);
    std::vector<T> v_ema = values_ema(buf.states);

    // Lambda returns per rollout, flattened back k-major like the buffer.
    std::vector<T> g_flat((size_t)h * b);
    std::vector<T> rew(h), con(h), vals(h + 1);
    for (int i = 0; i < b; ++i) {
      for (int k = 0; k < h; ++k) {
        rew[k] = buf.rewards[(size_t)k * b + i];
        con[k] = buf.conts[(size_t)k * b + i];
        vals[k] = v[(size_t)k * b + i];
      }
      vals[h] = v[(size_t)h * b + i];
      std::vector<T> g = lambda_returns(rew, con, vals, T(cfg.gamma), T(cfg.lambda));
      for (int k = 0; k < h; ++k) g_flat[(size_t)k * b + i] = g[k];
    }

    stats.return_scale = percentile_scale(g_flat);
    const T denom = std::max(T(1), stats.return_scale);
    Tensor<T> adv({h * b});
    T g_sum = T(0), mse_g = T(0), mse_e = T(0);
    for (int r = 0; r < h * b; ++r) {
      adv.data()[r] = (g_flat[r] - v[r]) / denom;
      g_sum += g_flat[r];
      mse_g += (v[r] - g_flat[r]) * (v[r] - g_flat[r]);
      mse_e += (v[r] - v_ema[r]) * (v[r] - v_ema[r]);
    }
    stats.mean_return = g_sum / T(h * b);
    stats.v_mse_target = mse_g / T(h * b);
    stats.v_mse_ema = mse_e / T(h * b);

    Tensor<T> train_states = slice_rows_of(buf.states, 0, h * b);

    // Actor: -sg(normalised advantage) * ln pi - eta * entropy.
    {
      Var<T> logits = actor_.forward(constant(train_states));
      if (buf.masks.size() > 0) {
        Tensor<T> offs({h * b, cfg.num_actions});
        for (int64_t i = 0; i < offs.size(); ++i)
          offs.data()[i] = buf.masks.data()[i] == T(0) ? T(-1e4) : T(0);
        logits = add(logits, constant(offs));
      }
      Var<T> lp = log_softmax_rows(logits);
      Tensor<T> onehot({h * b, cfg.num_actions});
      for (int r = 0; r < h * b; ++r) onehot.at2(r, buf.actions[r]) = T(1);
      Var<T> lp_a = rowwise_sum(mul(lp, constant(onehot)));
      Var<T> ent = neg(rowwise_sum(mul(softmax_rows(logits), lp)));
      Var<T> loss = add(neg(mean_all(mul(lp_a, constant(adv)))),
                        scale(mean_all(ent), T(-cfg.entropy)));
      backward(loss);
      stats.actor_loss = loss.val().data()[0];
      stats.entropy = ent.val().vec().sum() / T(h * b);
      stats.actor_grad_norm = opt_actor_.step(actor_params_);
      opt_actor_.zero_grad(actor_params_);
    }

    // Critic: CE against two-hot lambda-return and EMA-value targets.
    {
      Var<T> logits = critic_.forward(constant(train_states));
      std::vector<T> ema_t(v_ema.begin(), v_ema.begin() + (size_t)h * b);
      Var<T> ce = add(cross_entropy_soft(logits, twohot.encode(g_flat)),
                      cross_entropy_soft(logits, twohot.encode(ema_t)));
      Var<T> loss = mean_all(ce);
      backward(loss);
      stats.critic_loss = loss.val().data()[0];
      stats.critic_grad_norm = opt_critic_.step(critic_params_);
      opt_critic_.zero_grad(critic_params_);
      ema_.update(critic_params_);
    }
    (void)rng;
    return stats;
  }

  // ---- persistence ----

  void save(BinWriter& w) const {
    w.tag("agnt");
    save_params(w, actor_params_);
    save_params(w, critic_params_);
    opt_actor_.save(w);
    opt_critic_.save(w);
    w.u64(ema_.shadow.size());
    for (const auto& t : ema_.shadow) w.tensor(t);
  }
  void load(BinReader& r) {
    r.expect_tag("agnt");
    load_params(r, actor_params_);
    load_params(r, critic_params_);
    opt_actor_.load(r);
    opt_critic_.load(r);
    uint64_t n = r.u64();
    if (n != ema_.shadow.size()) throw std::runtime_error("agent: EMA shadow count mismatch");
    for (auto& t : ema_.shadow) {
      Tensor<T> loaded = r.template tensor<T>();
      check_same_shape(loaded, t, "agent ema shadow");
      t = loaded;
    }
  }

  ParamList<T>& actor_params() { return actor_params_; }
  ParamList<T>& critic_params() { return critic_params_; }
  const EmaParams<T>& ema() const { return ema_; }
  Mlp<T>& actor() { return actor_; }
  Mlp<T>& critic() { return critic_; }

  TwoHot<T> twohot;

 private:
  static void apply_mask_offsets(Tensor<T>& logits, const Tensor<T>* masks) {
    if (!masks) return;
    check_same_shape(logits, *masks, "agent mask");
    for (int64_t i = 0; i < logits.size(); ++i)
      if (masks->data()[i] == T(0)) logits.data()[i] += T(-1e4);
  }

  Mlp<T> actor_, critic_, ema_net_;
  ParamList<T> actor_params_, critic_params_;
  mutable ParamList<T> ema_params_;
  EmaParams<T> ema_;
  Adam<T> opt_actor_, opt_critic_;
};

}  // namespace matwm
