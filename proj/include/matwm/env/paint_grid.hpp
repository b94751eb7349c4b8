#pragma once

#include <algorithm>
#include <vector>

#include "matwm/env/env.hpp"

namespace matwm {

// Cooperative painting on a grid_w x grid_h board rendered as an RGB image.
// `targets` cells start unpainted; standing on one and playing `paint` marks
// it and pays a shared reward of 1/targets, so a fully painted board is worth
// exactly 1 per episode. All agents receive the same global image; agents are
// drawn with distinct 2x2 sprite patterns, so identity must be inferred from
// how actions move the sprites (this is the case action scaling exists for).
//
// Channels: R = unpainted targets, G = agent sprites, B = painted cells.
// Actions: 0 = up, 1 = down, 2 = left, 3 = right (clamped at borders),
// 4 = paint. No action masking.
class PaintGridEnv final : public Env {
 public:
  explicit PaintGridEnv(const EnvKnobs& knobs) {
    gw_ = (int)knob(knobs, "grid", 8);
    gh_ = gw_;
    k_ = (int)knob(knobs, "targets", 6);
    n_ = (int)knob(knobs, "agents", 2);
    px_ = (int)knob(knobs, "pixels_per_cell", 2);
    cap_ = (int)knob(knobs, "cap", 64);
    if (gw_ < 2 || px_ < 2) throw std::invalid_argument("paint_grid: grid >= 2 and pixels_per_cell >= 2 required");
    if (k_ < 1 || k_ > gw_ * gh_) throw std::invalid_argument("paint_grid: bad target count");
    if (n_ < 1 || n_ > 4) throw std::invalid_argument("paint_grid: 1..4 agents supported");
    spec_.num_agents = n_;
    spec_.num_actions = 5;
    spec_.image = true;
    spec_.img_c = 3;
    spec_.img_h = gh_ * px_;
    spec_.img_w = gw_ * px_;
    spec_.masking = false;
    spec_.episode_cap = cap_;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<Tensor<float>> reset(uint64_t seed) override {
    rng_ = Rng(seed);
    targets_ = sample_distinct_cells(k_);
    painted_.assign(k_, 0);
    auto starts = sample_distinct_cells(n_);
    ax_.resize(n_);
    ay_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      ax_[i] = starts[i] % gw_;
      ay_[i] = starts[i] / gw_;
    }
    t_ = 0;
    done_ = false;
    return broadcast_obs();
  }

  StepResult step(const std::vector<int>& actions) override {
    if (done_) throw std::logic_error("paint_grid: step after episode end");
    check_actions(actions);
    float r = 0.0f;
    for (int i = 0; i < n_; ++i) {
      switch (actions[i]) {
        case 0: ay_[i] = std::max(0, ay_[i] - 1); break;
        case 1: ay_[i] = std::min(gh_ - 1, ay_[i] + 1); break;
        case 2: ax_[i] = std::max(0, ax_[i] - 1); break;
        case 3: ax_[i] = std::min(gw_ - 1, ax_[i] + 1); break;
        case 4: {
          int cell = ay_[i] * gw_ + ax_[i];
          for (int j = 0; j < k_; ++j)
            if (targets_[j] == cell && !painted_[j]) {
              painted_[j] = 1;
              r += 1.0f / (float)k_;
            }
          break;
        }
      }
    }
    t_++;
    bool all_done = std::all_of(painted_.begin(), painted_.end(), [](uint8_t p) { return p != 0; });
    if (all_done || t_ >= cap_) done_ = true;

    StepResult out;
    out.obs = broadcast_obs();
    out.rewards.assign(n_, r);
    out.conts.assign(n_, (uint8_t)(done_ ? 0 : 1));
    return out;
  }

  std::vector<Tensor<float>> masks() const override { return {}; }

  void save(BinWriter& w) const override {
    w.tag("pgrd");
    w.i32(t_);
    w.u8(done_ ? 1 : 0);
    w.u32((uint32_t)targets_.size());
    for (int c : targets_) w.i32(c);
    for (uint8_t p : painted_) w.u8(p);
    for (int i = 0; i < n_; ++i) { w.i32(ax_[i]); w.i32(ay_[i]); }
    w.rng(rng_);
  }
  void load(BinReader& r) override {
    r.expect_tag("pgrd");
    t_ = r.i32();
    done_ = r.u8() != 0;
    uint32_t k = r.u32();
    if ((int)k != k_) throw std::runtime_error("paint_grid: checkpoint target count mismatch");
    targets_.resize(k);
    for (auto& c : targets_) c = r.i32();
    painted_.resize(k);
    for (auto& p : painted_) p = r.u8();
    ax_.resize(n_); ay_.resize(n_);
    for (int i = 0; i < n_; ++i) { ax_[i] = r.i32(); ay_[i] = r.i32(); }
    r.rng(rng_);
  }

  // State accessors used by the scripted greedy baseline.
  int grid_w() const { return gw_; }
  int grid_h() const { return gh_; }
  int agent_x(int i) const { return ax_[i]; }
  int agent_y(int i) const { return ay_[i]; }
  std::vector<int> unpainted_cells() const {
    std::vector<int> out;
    for (int j = 0; j < k_; ++j)
      if (!painted_[j]) out.push_back(targets_[j]);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<int> sample_distinct_cells(int count) {
    std::vector<int> cells;
    while ((int)cells.size() < count) {
      int c = (int)rng_.uniform_int(gw_ * gh_);
      if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
    }
    return cells;
  }

  std::vector<Tensor<float>> broadcast_obs() const {
    Tensor<float> img({3, gh_ * px_, gw_ * px_});
    auto put = [&](int c, int y, int x) { img.data()[(c * gh_ * px_ + y) * gw_ * px_ + x] = 1.0f; };
    auto fill_cell = [&](int c, int cell) {
      int cy = (cell / gw_) * px_, cx = (cell % gw_) * px_;
      for (int dy = 0; dy < px_; ++dy)
        for (int dx = 0; dx < px_; ++dx) put(c, cy + dy, cx + dx);
    };
    for (int j = 0; j < k_; ++j)
      fill_cell(painted_[j] ? 2 : 0, targets_[j]);
    for (int i = 0; i < n_; ++i) {
      int cy = ay_[i] * px_, cx = ax_[i] * px_;
      // Distinct per-agent sprite inside the 2x2 block (extended by px).
      switch (i) {
        case 0:
          for (int dy = 0; dy < px_; ++dy)
            for (int dx = 0; dx < px_; ++dx) put(1, cy + dy, cx + dx);
          break;
        case 1:
          for (int d = 0; d < px_; ++d) put(1, cy + d, cx + d);
          break;
        case 2:
          for (int dx = 0; dx < px_; ++dx) put(1, cy, cx + dx);
          break;
        case 3:
          for (int dy = 0; dy < px_; ++dy) put(1, cy + dy, cx);
          break;
      }
    }
    return std::vector<Tensor<float>>((size_t)n_, img);
  }

  EnvSpec spec_;
  int gw_ = 8, gh_ = 8, k_ = 6, n_ = 2, px_ = 2, cap_ = 64;
  std::vector<int> targets_;
  std::vector<uint8_t> painted_;
  std::vector<int> ax_, ay_;
  int t_ = 0;
  bool done_ = false;
  Rng rng_{0};
};

}  // namespace matwm
