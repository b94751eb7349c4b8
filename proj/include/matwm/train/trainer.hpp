#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "matwm/agent/agent.hpp"
#include "matwm/env/registry.hpp"
#include "matwm/model/dynamics.hpp"
#include "matwm/model/imagination.hpp"
#include "matwm/replay/replay.hpp"
#include "matwm/train/config.hpp"
#include "matwm/train/metrics.hpp"

namespace matwm {

// Owns one training run: a single environment instance, the shared world
// model, one actor-critic per agent, per-agent replay, and all RNG streams.
// Every random draw flows through one of five named streams seeded from the
// run seed, so a fixed seed reproduces the byte-identical run and a
// checkpoint restores it mid-flight.
template <typename T>
class Trainer {
 public:
  explicit Trainer(const RunConfig& rc, MetricsLogger* metrics = nullptr)
      : rc_(rc), metrics_(metrics) {
    env_ = make_env(rc_.env_name, rc_.env_knobs);
    spec_ = env_->spec();
    rc_.validate_against(spec_);
    wc_ = rc_.world_model_config(spec_);
    horizon_ = rc_.horizon_for(spec_.num_agents);
    agent_batch_ = rc_.agent_batch_for(spec_.num_agents);

    Rng root(rc_.seed);
    rng_env_ = root.fork(1);
    rng_act_ = root.fork(2);
    rng_wm_ = root.fork(3);
    rng_img_ = root.fork(4);
    rng_eval_ = root.fork(5);
    Rng rng_init = root.fork(6);

    wm_ = std::make_unique<WorldModel<T>>(wc_, rng_init);
    wm_->collect(wm_params_);
    opt_wm_ = Adam<T>(wm_params_, T(rc_.wm_lr), T(rc_.clip_wm), 0);

    AgentConfig ac = rc_.agent_config(wc_);
    for (int i = 0; i < spec_.num_agents; ++i) {
      agents_.push_back(std::make_unique<Agent<T>>(ac, rng_init));
      buffers_.emplace_back((size_t)rc_.replay_capacity);
    }
    last_agent_.assign(spec_.num_agents, std::nullopt);
    begin_episode(*env_, ep_, rng_env_);
  }

  // ---- main loop ----

  void train() { train_for(rc_.total_steps - step_); }

  void train_for(int64_t steps) {
    for (int64_t i = 0; i < steps; ++i) env_step();
  }

  int64_t step() const { return step_; }
  int64_t episodes() const { return episodes_; }
  bool ready() const {
    for (const auto& b : buffers_)
      if (!b.is_ready((size_t)rc_.warmup_steps)) return false;
    return true;
  }

  // Mean shared episode return under the greedy policy, on a fresh env.
  double evaluate(int episodes) {
    auto env = make_env(rc_.env_name, rc_.env_knobs);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
      EpState ep;
      begin_episode(*env, ep, rng_eval_);
      while (true) {
        std::vector<int> locals = policy_actions(ep, true, false, rng_eval_);
        StepResult res = env->step(locals);
        advance_streams(ep, locals);
        ep.ret += res.rewards[0];
        ep.len += 1;
        if (res.done()) break;
        refresh_obs(ep, res);
      }
      total += ep.ret;
    }
    return total / episodes;
  }

  // ---- accessors (tests, tools) ----

  const RunConfig& config() const { return rc_; }
  const EnvSpec& env_spec() const { return spec_; }
  WorldModel<T>& world_model() { return *wm_; }
  Agent<T>& agent(int i) { return *agents_.at(i); }
  ReplayBuffer<T>& buffer(int i) { return buffers_.at(i); }
  ParamList<T>& wm_params() { return wm_params_; }
  int horizon() const { return horizon_; }
  int agent_batch() const { return agent_batch_; }

  // ---- checkpointing ----

  void save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    BinWriter w(os);
    w.tag("mtwm");
    w.u32(1);
    w.u8((uint8_t)sizeof(T));  // scalar width, so tools pick the right type
    w.str(rc_.to_json().dump());
    w.i64(step_);
    w.i64(episodes_);
    w.i64(wm_updates_);
    w.i64(agent_updates_);
    w.rng(rng_env_);
    w.rng(rng_act_);
    w.rng(rng_wm_);
    w.rng(rng_img_);
    w.rng(rng_eval_);
    save_params(w, wm_params_);
    opt_wm_.save(w);
    for (const auto& a : agents_) a->save(w);
    for (const auto& b : buffers_) b.dump(w);
    env_->save(w);
    save_ep(w, ep_);
    w.f64(0.0);  // reserved
  }

  void load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    BinReader r(is);
    r.expect_tag("mtwm");
    if (r.u32() != 1) throw std::runtime_error("checkpoint: unsupported version");
    if (r.u8() != sizeof(T)) throw std::runtime_error("checkpoint: scalar width mismatch");
    const std::string cfg = r.str();
    if (RunConfig::from_json(nlohmann::json::parse(cfg)).signature() != rc_.signature())
      throw std::runtime_error("checkpoint: run configuration differs from this trainer's");
    step_ = r.i64();
    episodes_ = r.i64();
    wm_updates_ = r.i64();
    agent_updates_ = r.i64();
    r.rng(rng_env_);
    r.rng(rng_act_);
    r.rng(rng_wm_);
    r.rng(rng_img_);
    r.rng(rng_eval_);
    load_params(r, wm_params_);
    opt_wm_.load(r);
    for (auto& a : agents_) a->load(r);
    for (auto& b : buffers_) b.restore(r);
    env_->load(r);
    load_ep(r, ep_);
    r.f64();
  }

 private:
  // Live state of one episode: per-agent KV streams plus the current
  // observation, mask, latent and h from the previous step.
  struct EpState {
    struct PerAgent {
      typename WorldModel<T>::Stream stream;
      Tensor<T> obs, mask, z, h_last;
      bool has_h = false;
    };
    std::vector<PerAgent> agents;
    double ret = 0.0;
    int64_t len = 0;
  };

  static Tensor<T> cast_batched(const Tensor<float>& o) {
    std::vector<int> shape = o.shape();
    shape.insert(shape.begin(), 1);
    Tensor<T> out(shape);
    for (int64_t i = 0; i < o.size(); ++i) out.data()[i] = T(o.data()[i]);
    return out;
  }
  static Tensor<T> cast_flat(const Tensor<float>& o) {
    Tensor<T> out(o.shape());
    for (int64_t i = 0; i < o.size(); ++i) out.data()[i] = T(o.data()[i]);
    return out;
  }

  void begin_episode(Env& env, EpState& ep, Rng& seed_rng) {
    std::vector<Tensor<float>> obs = env.reset(seed_rng.next_u64());
    std::vector<Tensor<float>> masks = env.masks();
    ep.agents.assign(spec_.num_agents, typename EpState::PerAgent{});
    for (int i = 0; i < spec_.num_agents; ++i) {
      auto& a = ep.agents[i];
      a.stream = wm_->make_stream(1, wc_.max_seq);
      a.obs = cast_batched(obs[i]);
      if (spec_.masking) a.mask = cast_batched(masks[i]);
      a.h_last = Tensor<T>({1, wc_.hidden});
      a.has_h = false;
    }
    ep.ret = 0.0;
    ep.len = 0;
  }

  void refresh_obs(EpState& ep, const StepResult& res) {
    for (int i = 0; i < spec_.num_agents; ++i) {
      ep.agents[i].obs = cast_batched(res.obs[i]);
      if (spec_.masking) ep.agents[i].mask = cast_batched(res.masks[i]);
    }
  }

  // Builds each agent's state (sampling z_t and advancing the teammate
  // cache), then picks actions: learned policy or uniform-legal warmup.
  std::vector<int> policy_actions(EpState& ep, bool argmax, bool warmup_random, Rng& rng) {
    std::vector<int> locals(spec_.num_agents);
    const int tm_w = wm_->has_teammate() ? wc_.teammates() * wc_.num_actions : 0;
    for (int i = 0; i < spec_.num_agents; ++i) {
      auto& a = ep.agents[i];
      if (!a.stream.seq_cache.empty() && a.stream.seq_cache[0].len >= wc_.max_seq) {
        // Episode outlived the positional range: restart the context window.
        a.stream = wm_->make_stream(1, wc_.max_seq);
      }
      a.z = wm_->sample_value(wm_->encode_value(a.obs), rng);
      Tensor<T> tm = wm_->teammate_step(a.z, a.stream);
      Tensor<T> state({1, wc_.latent_dim() + wc_.hidden + tm_w});
      state.mat().row(0).segment(0, wc_.latent_dim()) = a.z.mat().row(0);
      state.mat().row(0).segment(wc_.latent_dim(), wc_.hidden) = a.h_last.mat().row(0);
      if (tm_w > 0)
        state.mat().row(0).segment(wc_.latent_dim() + wc_.hidden, tm_w) = tm.mat().row(0);
      if (warmup_random) {
        if (spec_.masking) {
          std::vector<int> legal;
          for (int c = 0; c < spec_.num_actions; ++c)
            if (a.mask.at2(0, c) != T(0)) legal.push_back(c);
          locals[i] = legal[rng.uniform_int(legal.size())];
        } else {
          locals[i] = (int)rng.uniform_int(spec_.num_actions);
        }
      } else {
        const Tensor<T>* mask_ptr = spec_.masking ? &a.mask : nullptr;
        locals[i] = agents_[i]->act(state, mask_ptr, argmax, rng)[0];
      }
    }
    return locals;
  }

  // Feeds (z_t, a_t) through the trunk so h_t is available for the next step.
  void advance_streams(EpState& ep, const std::vector<int>& locals) {
    for (int i = 0; i < spec_.num_agents; ++i) {
      auto& a = ep.agents[i];
      a.h_last = wm_->trunk_step(a.z, {wc_.global_action(i, locals[i])}, a.stream);
      a.has_h = true;
    }
  }

  void env_step() {
    const bool is_ready = ready();
    std::vector<int> locals = policy_actions(ep_, false, !is_ready, rng_act_);
    StepResult res = env_->step(locals);

    for (int i = 0; i < spec_.num_agents; ++i) {
      Transition<T> tr;
      tr.obs = cast_flat_from_batched(ep_.agents[i].obs);
      tr.action = wc_.global_action(i, locals[i]);
      tr.reward = T(res.rewards[i]);
      tr.cont = res.conts[i];
      if (spec_.masking) tr.mask = cast_flat_from_batched(ep_.agents[i].mask);
      for (int j = 0; j < spec_.num_agents; ++j)
        if (j != i) tr.teammates.push_back(locals[j]);
      buffers_[i].push(std::move(tr));
    }

    advance_streams(ep_, locals);
    ep_.ret += res.rewards[0];
    ep_.len += 1;
    step_ += 1;

    if (res.done()) {
      episodes_ += 1;
      if (metrics_)
        metrics_->log(step_, "episode",
                      {{"return", ep_.ret}, {"length", (double)ep_.len}, {"index", (double)episodes_}});
      begin_episode(*env_, ep_, rng_env_);
    } else {
      refresh_obs(ep_, res);
    }

    if (ready()) {
      if (step_ % rc_.wm_every == 0) train_world_model();
      if (step_ % rc_.agent_every == 0) train_agents();
    }
    if (metrics_ && step_ % rc_.metrics_every == 0) flush_metrics();
    if (rc_.eval_every > 0 && step_ % rc_.eval_every == 0 && metrics_) {
      double ev = evaluate(rc_.eval_episodes);
      metrics_->log(step_, "eval", {{"return", ev}, {"episodes", (double)rc_.eval_episodes}});
    }
    if (!rc_.checkpoint_path.empty() && rc_.checkpoint_every > 0 &&
        step_ % rc_.checkpoint_every == 0)
      save_checkpoint(rc_.checkpoint_path);
  }

  void train_world_model() {
    // Equal share of the batch per agent (first agents take the remainder).
    const int n = spec_.num_agents;
    WmBatch<T> combined;
    std::vector<WmBatch<T>> parts;
    for (int i = 0; i < n; ++i) {
      int share = rc_.wm_batch_size / n + (i < rc_.wm_batch_size % n ? 1 : 0);
      if (share == 0) continue;
      std::vector<int> starts =
          buffers_[i].sample_sequences(share, rc_.wm_batch_length, rc_.effective_decay(), rng_wm_);
      parts.push_back(buffers_[i].gather(starts, rc_.wm_batch_length));
    }
    combined = concat_batches(parts);
    WmLossStats<T> stats;
    Var<T> loss = wm_->loss(combined, rng_wm_, &stats);
    backward(loss);
    T gnorm = opt_wm_.step(wm_params_);
    opt_wm_.zero_grad(wm_params_);
    last_wm_ = stats;
    last_wm_gnorm_ = gnorm;
    wm_updates_ += 1;
  }

  void train_agents() {
    for (int i = 0; i < spec_.num_agents; ++i) {
      std::vector<int> starts = buffers_[i].sample_contexts(agent_batch_, rc_.context_length, rng_img_);
      ContextBatch<T> ctx = buffers_[i].gather_contexts(starts, rc_.context_length);
      WarmState<T> ws = warm_context(*wm_, ctx, horizon_, rng_img_);
      ImaginationBuffer<T> buf =
          imagine_rollout(*wm_, std::move(ws), i, agents_[i]->policy(false), horizon_, rng_img_);
      last_agent_[i] = agents_[i]->update(buf, rng_img_);
    }
    agent_updates_ += 1;
  }

  void flush_metrics() {
    if (last_wm_) {
      const auto& s = *last_wm_;
      std::map<std::string, double> f = {
          {"total", (double)s.total}, {"rec", (double)s.rec},   {"rew", (double)s.rew},
          {"con", (double)s.con},     {"dyn", (double)s.dyn},   {"rep", (double)s.rep},
          {"grad_norm", (double)last_wm_gnorm_}, {"updates", (double)wm_updates_}};
      if (s.has_mask) f["mask"] = (double)s.mask;
      if (s.has_team) f["team"] = (double)s.team;
      metrics_->log(step_, "wm", f);
      last_wm_.reset();
    }
    for (int i = 0; i < spec_.num_agents; ++i) {
      if (!last_agent_[i]) continue;
      const auto& s = *last_agent_[i];
      metrics_->log(step_, "agent", {{"agent", (double)i},
                                     {"actor_loss", (double)s.actor_loss},
                                     {"critic_loss", (double)s.critic_loss},
                                     {"entropy", (double)s.entropy},
                                     {"return_scale", (double)s.return_scale},
                                     {"mean_return", (double)s.mean_return},
                                     {"v_mse_target", (double)s.v_mse_target},
                                     {"v_mse_ema", (double)s.v_mse_ema},
                                     {"actor_grad_norm", (double)s.actor_grad_norm},
                                     {"critic_grad_norm", (double)s.critic_grad_norm}});
      last_agent_[i].reset();
    }
  }

  static WmBatch<T> concat_batches(const std::vector<WmBatch<T>>& parts) {
    if (parts.empty()) throw std::runtime_error("trainer: empty world-model batch");
    if (parts.size() == 1) return parts[0];
    WmBatch<T> out;
    out.seq = parts[0].seq;
    for (const auto& p : parts) out.batch += p.batch;
    std::vector<int> obs_shape = parts[0].obs.shape();
    obs_shape[0] = out.rows();
    out.obs = Tensor<T>(obs_shape);
    const bool with_mask = parts[0].masks.size() > 0;
    if (with_mask) out.masks = Tensor<T>({out.rows(), parts[0].masks.dim(1)});
    int64_t obs_off = 0, mask_off = 0;
    for (const auto& p : parts) {
      std::copy(p.obs.data(), p.obs.data() + p.obs.size(), out.obs.data() + obs_off);
      obs_off += p.obs.size();
      if (with_mask) {
        std::copy(p.masks.data(), p.masks.data() + p.masks.size(), out.masks.data() + mask_off);
        mask_off += p.masks.size();
      }
      out.actions.insert(out.actions.end(), p.actions.begin(), p.actions.end());
      out.rewards.insert(out.rewards.end(), p.rewards.begin(), p.rewards.end());
      out.conts.insert(out.conts.end(), p.conts.begin(), p.conts.end());
      out.teammate_actions.insert(out.teammate_actions.end(), p.teammate_actions.begin(),
                                  p.teammate_actions.end());
    }
    return out;
  }

  static Tensor<T> cast_flat_from_batched(const Tensor<T>& o) {
    std::vector<int> shape(o.shape().begin() + 1, o.shape().end());
    Tensor<T> out(shape);
    std::copy(o.data(), o.data() + o.size(), out.data());
    return out;
  }

  void save_ep(BinWriter& w, const EpState& ep) const {
    w.tag("epst");
    w.f64(ep.ret);
    w.i64(ep.len);
    w.u32((uint32_t)ep.agents.size());
    for (const auto& a : ep.agents) {
      w.tensor(a.obs);
      w.tensor(a.mask);
      w.tensor(a.z);
      w.tensor(a.h_last);
      w.u8(a.has_h ? 1 : 0);
      save_stream(w, a.stream);
    }
  }
  void load_ep(BinReader& r, EpState& ep) {
    r.expect_tag("epst");
    ep.ret = r.f64();
    ep.len = r.i64();
    uint32_t n = r.u32();
    if ((int)n != spec_.num_agents) throw std::runtime_error("checkpoint: agent count mismatch");
    ep.agents.assign(n, typename EpState::PerAgent{});
    for (auto& a : ep.agents) {
      a.obs = r.template tensor<T>();
      a.mask = r.template tensor<T>();
      a.z = r.template tensor<T>();
      a.h_last = r.template tensor<T>();
      a.has_h = r.u8() != 0;
      load_stream(r, a.stream);
    }
  }
  void save_stream(BinWriter& w, const typename WorldModel<T>::Stream& st) const {
    auto one = [&](const std::vector<KvCache<T>>& cs) {
      w.u32((uint32_t)cs.size());
      for (const auto& c : cs) {
        w.tensor(c.k);
        w.tensor(c.v);
        w.i32(c.len);
      }
    };
    one(st.seq_cache);
    one(st.tm_cache);
  }
  void load_stream(BinReader& r, typename WorldModel<T>::Stream& st) {
    auto one = [&](std::vector<KvCache<T>>& cs) {
      uint32_t n = r.u32();
      cs.assign(n, KvCache<T>{});
      for (auto& c : cs) {
        c.k = r.template tensor<T>();
        c.v = r.template tensor<T>();
        c.len = r.i32();
      }
    };
    one(st.seq_cache);
    one(st.tm_cache);
  }

  RunConfig rc_;
  MetricsLogger* metrics_ = nullptr;
  std::unique_ptr<Env> env_;
  EnvSpec spec_;
  WorldModelConfig wc_;
  int horizon_ = 16, agent_batch_ = 512;

  Rng rng_env_, rng_act_, rng_wm_, rng_img_, rng_eval_;

  std::unique_ptr<WorldModel<T>> wm_;
  ParamList<T> wm_params_;
  Adam<T> opt_wm_;
  std::vector<std::unique_ptr<Agent<T>>> agents_;
  std::vector<ReplayBuffer<T>> buffers_;

  EpState ep_;
  int64_t step_ = 0, episodes_ = 0, wm_updates_ = 0, agent_updates_ = 0;
  std::optional<WmLossStats<T>> last_wm_;
  T last_wm_gnorm_ = T(0);
  std::vector<std::optional<AgentUpdateStats<T>>> last_agent_;
};

// ---------------------------------------------------------------------------
// Multi-seed experiment driver
// ---------------------------------------------------------------------------

struct ExperimentReport {
  std::vector<uint64_t> seeds;
  std::vector<int64_t> eval_steps;
  std::vector<std::vector<double>> returns;  // [eval_point][seed]

  double median_at(size_t point) const {
    std::vector<double> xs = returns.at(point);
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  }
  double stddev_at(size_t point) const {
    const auto& xs = returns.at(point);
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double acc = 0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / xs.size());
  }
  double best_median() const {
    double best = -std::numeric_limits<double>::infinity();
    for (size_t p = 0; p < eval_steps.size(); ++p) best = std::max(best, median_at(p));
    return best;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("experiment: cannot open " + path);
    out << "step";
    for (uint64_t s : seeds) out << ",seed" << s;
    out << ",median,std\n";
    for (size_t p = 0; p < eval_steps.size(); ++p) {
      out << eval_steps[p];
      for (double r : returns[p]) out << "," << r;
      out << "," << median_at(p) << "," << stddev_at(p) << "\n";
    }
  }
};

// Trains one run per seed, evaluating every rc.eval_every steps.
template <typename T>
ExperimentReport run_experiment(RunConfig rc, const std::vector<uint64_t>& seeds,
                                std::ostream* progress = nullptr) {
  if (rc.eval_every < 1) throw std::invalid_argument("experiment: eval cadence must be positive");
  if (seeds.empty()) throw std::invalid_argument("experiment: need at least one seed");
  ExperimentReport rep;
  rep.seeds = seeds;
  const int64_t points = rc.total_steps / rc.eval_every;
  for (int64_t p = 1; p <= points; ++p) rep.eval_steps.push_back(p * rc.eval_every);
  rep.returns.assign((size_t)points, {});
  rc.eval_every = 0;  // experiment driver schedules its own evals
  for (uint64_t seed : seeds) {
    RunConfig one = rc;
    one.seed = seed;
    one.metrics_path.clear();
    one.checkpoint_path.clear();
    Trainer<T> tr(one);
    for (size_t p = 0; p < rep.eval_steps.size(); ++p) {
      tr.train_for(rep.eval_steps[p] - tr.step());
      double ret = tr.evaluate(one.eval_episodes);
      rep.returns[p].push_back(ret);
      if (progress)
        (*progress) << "seed " << seed << " step " << tr.step() << " eval " << ret << "\n";
    }
  }
  return rep;
}

}  // namespace matwm
