#pragma once

#include <algorithm>
#include <cmath>

#include "matwm/env/env.hpp"

namespace matwm {

// Two agents on a 1-D corridor of `length` cells. Agent 0's switch sits on
// cell 0, agent 1's on cell length-1. Reward +1 and episode end when both
// agents press their own switch on the same step; a lone press costs
// `solo_penalty`. Each agent sees its own cell exactly and its teammate only
// within `sight` cells, which is what makes teammate modelling matter here.
//
// Actions: 0 = left, 1 = right, 2 = stay, 3 = press.
// Masks: moves off the corridor are illegal; press is legal only on the
// agent's own switch cell; stay is always legal.
class SwitchCorridorEnv final : public Env {
 public:
  explicit SwitchCorridorEnv(const EnvKnobs& knobs) {
    length_ = (int)knob(knobs, "length", 7);
    sight_ = (int)knob(knobs, "sight", 2);
    solo_penalty_ = (float)knob(knobs, "solo_penalty", 0.05);
    cap_ = (int)knob(knobs, "cap", 50);
    if (length_ < 3) throw std::invalid_argument("switch_corridor: length must be >= 3");
    if (cap_ < 1) throw std::invalid_argument("switch_corridor: cap must be >= 1");
    spec_.num_agents = 2;
    spec_.num_actions = 4;
    spec_.image = false;
    spec_.obs_dim = 2 * length_ + 4;
    spec_.masking = true;
    spec_.episode_cap = cap_;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<Tensor<float>> reset(uint64_t seed) override {
    rng_ = Rng(seed);
    pos_[0] = (int)rng_.uniform_int(length_);
    pos_[1] = (int)rng_.uniform_int(length_ - 1);
    if (pos_[1] >= pos_[0]) pos_[1]++;  // distinct start cells
    t_ = 0;
    done_ = false;
    return {observe(0), observe(1)};
  }

  StepResult step(const std::vector<int>& actions) override {
    if (done_) throw std::logic_error("switch_corridor: step after episode end");
    check_actions(actions);
    auto m = masks();
    for (int i = 0; i < 2; ++i)
      if (m[i].vec()[actions[i]] == 0.0f)
        throw std::invalid_argument("switch_corridor: illegal action under mask");

    bool press0 = actions[0] == 3, press1 = actions[1] == 3;
    for (int i = 0; i < 2; ++i) {
      if (actions[i] == 0) pos_[i]--;
      else if (actions[i] == 1) pos_[i]++;
    }
    float r = 0.0f;
    if (press0 && press1) {
      r = 1.0f;
      done_ = true;
    } else if (press0 || press1) {
      r = -solo_penalty_;
    }
    t_++;
    if (t_ >= cap_) done_ = true;

    StepResult out;
    out.obs = {observe(0), observe(1)};
    out.rewards = {r, r};
    out.conts = {(uint8_t)(done_ ? 0 : 1), (uint8_t)(done_ ? 0 : 1)};
    out.masks = masks();
    return out;
  }

  std::vector<Tensor<float>> masks() const override {
    std::vector<Tensor<float>> out;
    for (int i = 0; i < 2; ++i) {
      Tensor<float> m({4});
      m.vec()[0] = pos_[i] > 0 ? 1.0f : 0.0f;
      m.vec()[1] = pos_[i] < length_ - 1 ? 1.0f : 0.0f;
      m.vec()[2] = 1.0f;
      m.vec()[3] = pos_[i] == switch_cell(i) ? 1.0f : 0.0f;
      out.push_back(std::move(m));
    }
    return out;
  }

  void save(BinWriter& w) const override {
    w.tag("scor");
    w.i32(pos_[0]);
    w.i32(pos_[1]);
    w.i32(t_);
    w.u8(done_ ? 1 : 0);
    w.rng(rng_);
  }
  void load(BinReader& r) override {
    r.expect_tag("scor");
    pos_[0] = r.i32();
    pos_[1] = r.i32();
    t_ = r.i32();
    done_ = r.u8() != 0;
    r.rng(rng_);
  }

  int switch_cell(int agent) const { return agent == 0 ? 0 : length_ - 1; }
  int position(int agent) const { return pos_[agent]; }
  int steps_taken() const { return t_; }

 private:
  Tensor<float> observe(int i) const {
    int j = 1 - i;
    Tensor<float> o({spec_.obs_dim});
    auto v = o.vec();
    v[pos_[i]] = 1.0f;
    v[length_] = pos_[i] == switch_cell(i) ? 1.0f : 0.0f;
    bool visible = std::abs(pos_[i] - pos_[j]) <= sight_;
    v[length_ + 1] = visible ? 1.0f : 0.0f;
    if (visible) {
      v[length_ + 2 + pos_[j]] = 1.0f;
      v[2 * length_ + 2] = pos_[j] == switch_cell(j) ? 1.0f : 0.0f;
    }
    v[2 * length_ + 3] = (float)t_ / (float)cap_;
    return o;
  }

  EnvSpec spec_;
  int length_ = 7, sight_ = 2, cap_ = 50;
  float solo_penalty_ = 0.05f;
  int pos_[2] = {0, 0};
  int t_ = 0;
  bool done_ = false;
  Rng rng_{0};
};

}  // namespace matwm
