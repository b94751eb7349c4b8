#pragma once

#include <string>
#include <vector>

#include "matwm/core/nn.hpp"
#include "matwm/core/numerics.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/model/batch.hpp"
#include "matwm/model/codec.hpp"

namespace matwm {

struct WorldModelConfig {
  CodecConfig codec;
  int hidden = 512, layers = 2, heads = 8, ff_mult = 2, max_seq = 64;
  int num_agents = 2, num_actions = 4;
  bool action_scaling = true;
  bool use_masks = false;
  bool teammate = true;
  int teammate_layers = 1;
  int head_width = 512, head_layers = 1;
  int twohot_bins = 255;
  double twohot_lo = -20.0, twohot_hi = 20.0;
  double beta1 = 0.5, beta2 = 0.1;

  int latent_dim() const { return codec.latent_dim(); }
  int teammates() const { return num_agents - 1; }
  // Width of the action one-hot fed to the mixer. With action scaling each
  // (agent, local action) pair gets its own id; without it agents share ids.
  int action_width() const { return action_scaling ? num_agents * num_actions : num_actions; }
  int global_action(int agent, int local) const {
    return action_scaling ? agent * num_actions + local : local;
  }
};

template <typename T>
struct WmLossStats {
  T total = 0, rec = 0, rew = 0, con = 0, team = 0, mask = 0, dyn = 0, rep = 0;
  bool has_mask = false, has_team = false;
};

// The individual loss terms as live tape nodes, before weighting. Lets tests
// and diagnostics differentiate one term in isolation; undefined Vars mean the
// corresponding head is disabled.
template <typename T>
struct WmLossTerms {
  Var<T> rec, rew, con, team, mask, dyn, rep, total;
};

// Shared world model: codec + action mixer + causal transformer trunk with
// reward / continuation / dynamics heads on h_t, a mask head on z_t, and a
// separate small transformer predicting teammate actions from the latent
// history. One instance is trained on the concatenated batches of all agents.
//
// Gradient routing: the trunk consumes stop-gradient latents, so the encoder
// is shaped only by reconstruction, representation KL and the mask head;
// likewise the teammate branch reads sg(z) and trains only its own weights.
template <typename T>
class WorldModel {
 public:
  WorldModelConfig cfg;
  Codec<T> codec;
  TwoHot<T> twohot;

  WorldModel(const WorldModelConfig& c, Rng& rng)
      : cfg(c),
        codec(c.codec, rng),
        twohot(c.twohot_bins, T(c.twohot_lo), T(c.twohot_hi)),
        mixer_(c.latent_dim() + c.action_width(), c.hidden, rng),
        seq_(c.hidden, c.heads, c.layers, c.hidden * c.ff_mult, c.max_seq, rng),
        dyn_head_(c.hidden, c.head_width, c.head_layers, c.latent_dim(), rng, true),
        reward_head_(c.hidden, c.head_width, c.head_layers, c.twohot_bins, rng, true),
        cont_head_(c.hidden, c.head_width, c.head_layers, 1, rng, true) {
    if (cfg.num_agents < 1) throw std::invalid_argument("world model: need at least one agent");
    if (cfg.use_masks)
      mask_head_.emplace(c.latent_dim(), c.head_width, c.head_layers, c.num_actions, rng, true);
    if (cfg.teammate && cfg.teammates() > 0) {
      tm_embed_.emplace(c.latent_dim(), c.hidden, rng);
      tm_seq_.emplace(c.hidden, c.heads, c.teammate_layers, c.hidden * c.ff_mult, c.max_seq, rng);
      tm_head_.emplace(c.hidden, c.teammates() * c.num_actions, rng, true);
    }
  }

  // ---- training ----

  Var<T> loss(const WmBatch<T>& batch, Rng& rng, WmLossStats<T>* stats = nullptr,
              WmLossTerms<T>* terms = nullptr) const {
    const int b = batch.batch, s = batch.seq, rows = batch.rows();
    if (b < 1 || s < 2) throw std::invalid_argument("world model: batch needs seq length >= 2");
    if (batch.obs.dim(0) != rows || (int)batch.actions.size() != rows ||
        (int)batch.rewards.size() != rows || (int)batch.conts.size() != rows)
      throw std::invalid_argument("world model: batch field sizes disagree");

    Var<T> z_logits = codec.encode(constant(batch.obs));
    Var<T> z = latent_sample(z_logits, cfg.codec.num_vars, cfg.codec.num_classes, rng);

    Var<T> l_rec = codec.reconstruction_loss(codec.decode(z), batch.obs);

    Var<T> e = mixer_.forward(concat_cols<T>({detach(z), constant(encode_actions(batch.actions))}));
    Var<T> h = seq_.forward(e, b, s);

    Var<T> l_rew = mean_all(cross_entropy_soft(reward_head_.forward(h), twohot.encode(batch.rewards)));

    Tensor<T> cont_t({rows, 1});
    for (int i = 0; i < rows; ++i) cont_t.at2(i, 0) = batch.conts[i];
    Var<T> l_con = mean_all(bce_with_logits(cont_head_.forward(h), cont_t));

    Var<T> l_mask;
    if (cfg.use_masks) {
      if (batch.masks.rank() != 2 || batch.masks.dim(0) != rows)
        throw std::invalid_argument("world model: mask rows disagree");
      l_mask = mean_all(bce_with_logits(mask_head_->forward(z), batch.masks));
    }

    Var<T> l_team;
    if (has_teammate()) {
      if ((int)batch.teammate_actions.size() != rows * cfg.teammates())
        throw std::invalid_argument("world model: teammate action count disagrees");
      Var<T> tl = teammate_logits(detach(z), b, s);
      Var<T> ce = cross_entropy_index(reshape(tl, {rows * cfg.teammates(), cfg.num_actions}),
                                      batch.teammate_actions);
      // Mean over positions, sum over the N-1 teammates.
      l_team = scale(mean_all(ce), T(cfg.teammates()));
    }

    // Prior at (b, t) predicts the posterior at (b, t+1).
    std::vector<int> prior_idx, post_idx;
    prior_idx.reserve((size_t)b * (s - 1));
    post_idx.reserve((size_t)b * (s - 1));
    for (int i = 0; i < b; ++i)
      for (int t = 0; t + 1 < s; ++t) {
        prior_idx.push_back(i * s + t);
        post_idx.push_back(i * s + t + 1);
      }
    int kl_rows = (int)prior_idx.size();
    const int v = cfg.codec.num_vars, cdim = cfg.codec.num_classes;
    Var<T> prior = reshape(gather_rows(dyn_head_.forward(h), prior_idx), {kl_rows * v, cdim});
    Var<T> post = reshape(gather_rows(z_logits, post_idx), {kl_rows * v, cdim});
    Var<T> l_dyn = kl_free_bits(detach(post), prior, v);
    Var<T> l_rep = kl_free_bits(post, detach(prior), v);

    Var<T> kl_block = cfg.use_masks ? add(l_mask, l_dyn) : l_dyn;
    Var<T> total = add(add(l_rec, add(l_rew, l_con)),
                       add(scale(kl_block, T(cfg.beta1)), scale(l_rep, T(cfg.beta2))));
    if (has_teammate()) total = add(total, l_team);

    if (terms) *terms = {l_rec, l_rew, l_con, l_team, l_mask, l_dyn, l_rep, total};
    if (stats) {
      stats->rec = l_rec.val().data()[0];
      stats->rew = l_rew.val().data()[0];
      stats->con = l_con.val().data()[0];
      stats->has_mask = cfg.use_masks;
      stats->mask = cfg.use_masks ? l_mask.val().data()[0] : T(0);
      stats->has_team = has_teammate();
      stats->team = has_teammate() ? l_team.val().data()[0] : T(0);
      stats->dyn = l_dyn.val().data()[0];
      stats->rep = l_rep.val().data()[0];
      stats->total = total.val().data()[0];
    }
    return total;
  }

  // ---- tape-free stepping (acting and imagination) ----

  struct Stream {
    std::vector<KvCache<T>> seq_cache;
    std::vector<KvCache<T>> tm_cache;
  };

  Stream make_stream(int batch, int cap) const {
    Stream s;
    s.seq_cache = seq_.make_caches(batch, cap);
    if (has_teammate()) s.tm_cache = tm_seq_->make_caches(batch, cap);
    return s;
  }

  Tensor<T> encode_value(const Tensor<T>& obs) const { return codec.encode_value(obs); }

  Tensor<T> sample_value(const Tensor<T>& logits, Rng& rng) const {
    return latent_sample_value(logits, cfg.codec.num_vars, cfg.codec.num_classes, rng);
  }

  // Advances the trunk one step: h_t = f(e(z_t, a_t)); returns h_t [B, hidden].
  Tensor<T> trunk_step(const Tensor<T>& z, const std::vector<int>& actions, Stream& st) const {
    Tensor<T> in({z.dim(0), cfg.latent_dim() + cfg.action_width()});
    Tensor<T> acts = encode_actions(actions);
    for (int r = 0; r < z.dim(0); ++r) {
      in.mat().row(r).segment(0, cfg.latent_dim()) = z.mat().row(r);
      in.mat().row(r).segment(cfg.latent_dim(), cfg.action_width()) = acts.mat().row(r);
    }
    return seq_.step(mixer_.forward_value(in), st.seq_cache);
  }

  // Teammate logits for the step whose latent is z_t; advances the tm cache.
  Tensor<T> teammate_step(const Tensor<T>& z, Stream& st) const {
    if (!has_teammate()) return Tensor<T>({z.dim(0), 0});
    return tm_head_->forward_value(tm_seq_->step(tm_embed_->forward_value(z), st.tm_cache));
  }

  Tensor<T> prior_logits_value(const Tensor<T>& h) const { return dyn_head_.forward_value(h); }

  // Full-sequence trunk pass over batch-major (z, action) rows; the reference
  // the incremental KV-cache path must agree with.
  Tensor<T> trunk_forward_value(const Tensor<T>& z, const std::vector<int>& actions, int batch,
                                int seq) const {
    Var<T> e = mixer_.forward(concat_cols<T>({constant(z), constant(encode_actions(actions))}));
    return seq_.forward(e, batch, seq).val();
  }

  Tensor<T> reward_logits_value(const Tensor<T>& h) const {
    return reward_head_.forward_value(h);
  }

  std::vector<T> reward_value(const Tensor<T>& h) const {
    return twohot.decode_logits(reward_head_.forward_value(h));
  }

  std::vector<T> cont_value(const Tensor<T>& h) const {
    Tensor<T> logits = cont_head_.forward_value(h);
    std::vector<T> out(logits.dim(0));
    for (int i = 0; i < logits.dim(0); ++i)
      out[i] = T(1) / (T(1) + std::exp(-logits.at2(i, 0)));
    return out;
  }

  // Predicted legality probabilities from z_t.
  Tensor<T> mask_value(const Tensor<T>& z) const {
    if (!cfg.use_masks) throw std::logic_error("world model: mask head disabled");
    Tensor<T> logits = mask_head_->forward_value(z);
    for (auto& x : logits.storage()) x = T(1) / (T(1) + std::exp(-x));
    return logits;
  }

  // ---- plumbing ----

  bool has_teammate() const { return cfg.teammate && cfg.teammates() > 0; }

  Var<T> teammate_logits(const Var<T>& z_detached, int batch, int seq) const {
    return tm_head_->forward(tm_seq_->forward(tm_embed_->forward(z_detached), batch, seq));
  }

  Tensor<T> encode_actions(const std::vector<int>& global_ids) const {
    Tensor<T> out({(int)global_ids.size(), cfg.action_width()});
    for (size_t i = 0; i < global_ids.size(); ++i) {
      if (global_ids[i] < 0 || global_ids[i] >= cfg.action_width())
        throw std::invalid_argument("world model: global action id out of range");
      out.at2((int)i, global_ids[i]) = T(1);
    }
    return out;
  }

  void collect(ParamList<T>& out) const {
    codec.collect(out, "codec");
    mixer_.collect(out, "mixer");
    seq_.collect(out, "seq");
    dyn_head_.collect(out, "dyn");
    reward_head_.collect(out, "rew");
    cont_head_.collect(out, "con");
    if (cfg.use_masks) mask_head_->collect(out, "mask");
    if (has_teammate()) {
      tm_embed_->collect(out, "tm.embed");
      tm_seq_->collect(out, "tm.seq");
      tm_head_->collect(out, "tm.head");
    }
  }

 private:
  Linear<T> mixer_;
  Transformer<T> seq_;
  Mlp<T> dyn_head_, reward_head_, cont_head_;
  std::optional<Mlp<T>> mask_head_;
  std::optional<Linear<T>> tm_embed_;
  std::optional<Transformer<T>> tm_seq_;
  std::optional<Linear<T>> tm_head_;
};

}  // namespace matwm
