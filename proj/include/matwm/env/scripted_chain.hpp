#pragma once

#include <cmath>
#include <vector>

#include "matwm/env/env.hpp"

namespace matwm {

// Deterministic diagnostic world: `states` states on a ring, observed as a
// one-hot vector by every agent. Agent 0's action advances the ring by
// 1 + a0 cells; other agents' actions are recorded but inert, so scripted
// teammates stay exactly predictable from the state. The reward for entering
// state s' is a fixed pseudo-random value in [-0.8, 0.8] drawn once from
// `reward_seed`. Episodes run to the cap; there are no masks.
//
// Everything about a rollout is a closed-form function of the start state and
// the action script, which is what makes this env usable as a ground-truth
// oracle for model fidelity checks.
class ScriptedChainEnv final : public Env {
 public:
  explicit ScriptedChainEnv(const EnvKnobs& knobs) {
    k_ = (int)knob(knobs, "states", 8);
    int agents = (int)knob(knobs, "agents", 2);
    int actions = (int)knob(knobs, "actions", 4);
    cap_ = (int)knob(knobs, "cap", 32);
    uint64_t rseed = (uint64_t)knob(knobs, "reward_seed", 1);
    if (k_ < 2) throw std::invalid_argument("scripted_chain: states must be >= 2");
    spec_.num_agents = agents;
    spec_.num_actions = actions;
    spec_.image = false;
    spec_.obs_dim = k_;
    spec_.masking = false;
    spec_.episode_cap = cap_;
    Rng table_rng(rseed);
    rewards_.resize(k_);
    for (int s = 0; s < k_; ++s)
      rewards_[s] = (float)(-0.8 + 1.6 * table_rng.uniform());
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<Tensor<float>> reset(uint64_t seed) override {
    rng_ = Rng(seed);
    s_ = (int)rng_.uniform_int(k_);
    t_ = 0;
    done_ = false;
    return broadcast_obs();
  }

  StepResult step(const std::vector<int>& actions) override {
    if (done_) throw std::logic_error("scripted_chain: step after episode end");
    check_actions(actions);
    s_ = next_state(s_, actions[0]);
    float r = rewards_[s_];
    t_++;
    if (t_ >= cap_) done_ = true;
    StepResult out;
    out.obs = broadcast_obs();
    out.rewards.assign(spec_.num_agents, r);
    out.conts.assign(spec_.num_agents, (uint8_t)(done_ ? 0 : 1));
    return out;
  }

  std::vector<Tensor<float>> masks() const override { return {}; }

  void save(BinWriter& w) const override {
    w.tag("scch");
    w.i32(s_);
    w.i32(t_);
    w.u8(done_ ? 1 : 0);
    w.rng(rng_);
  }
  void load(BinReader& r) override {
    r.expect_tag("scch");
    s_ = r.i32();
    t_ = r.i32();
    done_ = r.u8() != 0;
    r.rng(rng_);
  }

  // Closed-form model, exposed so tests can roll the true system forward.
  int next_state(int s, int a0) const { return (s + 1 + a0) % k_; }
  float reward_of_state(int s) const { return rewards_[s]; }
  int state() const { return s_; }

 private:
  std::vector<Tensor<float>> broadcast_obs() const {
    Tensor<float> o({k_});
    o.vec()[s_] = 1.0f;
    return std::vector<Tensor<float>>((size_t)spec_.num_agents, o);
  }

  EnvSpec spec_;
  int k_ = 8, cap_ = 32;
  std::vector<float> rewards_;
  int s_ = 0, t_ = 0;
  bool done_ = false;
  Rng rng_{0};
};

}  // namespace matwm
