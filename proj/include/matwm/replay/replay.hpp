#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "matwm/core/rng.hpp"
#include "matwm/core/serialize.hpp"
#include "matwm/core/tensor.hpp"
#include "matwm/model/batch.hpp"

namespace matwm {

template <typename T>
struct Transition {
  Tensor<T> obs;
  int action = 0;  // global action id
  T reward = T(0);
  uint8_t cont = 1;
  Tensor<T> mask;               // empty when the env has no masking
  std::vector<int> teammates;   // local actions of the other agents, ascending
  int64_t stamp = 0;
};

// Per-agent FIFO replay with recency-prioritised sequence sampling.
// Stamps are assigned 1, 2, ... at push time and survive eviction, so the
// weight of an entry is decay^(newest_stamp - stamp) regardless of how much
// history has been dropped.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity = 50000) : capacity_(capacity) {
    if (capacity_ < 1) throw std::invalid_argument("replay: capacity must be positive");
  }

  void push(Transition<T> tr) {
    tr.stamp = next_stamp_++;
    if (data_.size() == capacity_) data_.pop_front();
    data_.push_back(std::move(tr));
  }

  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }
  int64_t newest_stamp() const { return data_.empty() ? 0 : data_.back().stamp; }
  int64_t oldest_stamp() const { return data_.empty() ? 0 : data_.front().stamp; }
  const Transition<T>& at(size_t i) const { return data_[i]; }

  // Warmup gate: enough experience collected to start training.
  bool is_ready(size_t threshold = 1000) const { return data_.size() >= threshold; }

  // Starts of len-windows that stay inside one episode. A terminal step is
  // allowed only as the final element; `need_tail` additionally requires the
  // final element to be non-terminal (contexts must be continuable).
  std::vector<int> eligible_starts(int len, bool need_tail_nonterminal) const {
    if (len < 1) throw std::invalid_argument("replay: window length must be positive");
    std::vector<int> out;
    if ((int)data_.size() < len) return out;
    // bad[i] = 1 if a terminal occurs at i (episode boundary after i).
    for (int s = 0; s + len <= (int)data_.size(); ++s) {
      bool ok = true;
      for (int j = s; j < s + len - 1; ++j)
        if (data_[j].cont == 0) { ok = false; break; }
      if (ok && need_tail_nonterminal && data_[s + len - 1].cont == 0) ok = false;
      if (ok) out.push_back(s);
    }
    return out;
  }

  // Recency-weighted, pairwise-disjoint window starts. Draws with replacement
  // from the decayed-stamp categorical and rejects overlapping picks; if the
  // attempt budget (100 * batch) runs out, fills the remainder greedily by
  // descending weight. Throws when the buffer cannot supply `batch` disjoint
  // windows at all.
  std::vector<int> sample_sequences(int batch, int len, double decay, Rng& rng) const {
    if (batch < 1) throw std::invalid_argument("replay: batch must be positive");
    if (decay <= 0.0 || decay > 1.0) throw std::invalid_argument("replay: decay must be in (0,1]");
    std::vector<int> starts = eligible_starts(len, false);
    if (starts.empty()) throw std::runtime_error("replay: no eligible windows of requested length");

    const int64_t newest = newest_stamp();
    std::vector<double> cum(starts.size());
    double acc = 0.0;
    for (size_t i = 0; i < starts.size(); ++i) {
      acc += std::pow(decay, (double)(newest - data_[starts[i]].stamp));
      cum[i] = acc;
    }

    std::vector<int> picked;
    auto overlaps = [&](int s) {
      for (int p : picked)
        if (s < p + len && p < s + len) return true;
      return false;
    };
    const long attempts_cap = 100L * batch;
    for (long a = 0; a < attempts_cap && (int)picked.size() < batch; ++a) {
      double u = rng.uniform() * acc;
      size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
      if (k >= starts.size()) k = starts.size() - 1;
      if (!overlaps(starts[k])) picked.push_back(starts[k]);
    }
    if ((int)picked.size() < batch) {
      // Deterministic fallback: highest weight first (newest stamp first).
      std::vector<int> order = starts;
      std::sort(order.begin(), order.end(), [&](int a, int b) { return a > b; });
      for (int s : order) {
        if ((int)picked.size() == batch) break;
        if (!overlaps(s)) picked.push_back(s);
      }
      if ((int)picked.size() < batch) {
        // The random picks can paint a tight buffer into a corner. Re-pack
        // from scratch, newest start first; for equal-length windows this
        // greedy is maximal, so failing here means the buffer genuinely
        // cannot supply the batch.
        picked.clear();
        for (int s : order) {
          if ((int)picked.size() == batch) break;
          if (!overlaps(s)) picked.push_back(s);
        }
      }
    }
    if ((int)picked.size() < batch)
      throw std::runtime_error("replay: cannot place " + std::to_string(batch) +
                               " disjoint windows of length " + std::to_string(len));
    return picked;
  }

  // Uniform context starts; windows may overlap freely but must end at a
  // non-terminal step.
  std::vector<int> sample_contexts(int batch, int len, Rng& rng) const {
    std::vector<int> starts = eligible_starts(len, true);
    if (starts.empty()) throw std::runtime_error("replay: no eligible context windows");
    std::vector<int> out(batch);
    for (int i = 0; i < batch; ++i) out[i] = starts[rng.uniform_int(starts.size())];
    return out;
  }

  WmBatch<T> gather(const std::vector<int>& starts, int len) const {
    WmBatch<T> out;
    out.batch = (int)starts.size();
    out.seq = len;
    const int rows = out.rows();
    const Transition<T>& first = data_.at(starts.at(0));
    std::vector<int> obs_shape = first.obs.shape();
    obs_shape.insert(obs_shape.begin(), rows);
    out.obs = Tensor<T>(obs_shape);
    const bool with_mask = first.mask.size() > 0;
    if (with_mask) out.masks = Tensor<T>({rows, first.mask.dim(0)});
    const int tm = (int)first.teammates.size();
    out.actions.resize(rows);
    out.rewards.resize(rows);
    out.conts.resize(rows);
    out.teammate_actions.resize((size_t)rows * tm);
    int r = 0;
    for (int s : starts)
      for (int j = 0; j < len; ++j, ++r) {
        const Transition<T>& tr = data_.at(s + j);
        std::copy(tr.obs.data(), tr.obs.data() + tr.obs.size(),
                  out.obs.data() + (size_t)r * tr.obs.size());
        out.actions[r] = tr.action;
        out.rewards[r] = tr.reward;
        out.conts[r] = T(tr.cont);
        if (with_mask)
          std::copy(tr.mask.data(), tr.mask.data() + tr.mask.size(),
                    out.masks.data() + (size_t)r * tr.mask.size());
        for (int q = 0; q < tm; ++q) out.teammate_actions[(size_t)r * tm + q] = tr.teammates[q];
      }
    return out;
  }

  ContextBatch<T> gather_contexts(const std::vector<int>& starts, int len) const {
    ContextBatch<T> out;
    out.batch = (int)starts.size();
    out.len = len;
    const int rows = out.rows();
    std::vector<int> obs_shape = data_.at(starts.at(0)).obs.shape();
    obs_shape.insert(obs_shape.begin(), rows);
    out.obs = Tensor<T>(obs_shape);
    out.actions.resize(rows);
    int r = 0;
    for (int s : starts)
      for (int j = 0; j < len; ++j, ++r) {
        const Transition<T>& tr = data_.at(s + j);
        std::copy(tr.obs.data(), tr.obs.data() + tr.obs.size(),
                  out.obs.data() + (size_t)r * tr.obs.size());
        out.actions[r] = tr.action;
      }
    return out;
  }

  void dump(BinWriter& w) const {
    w.tag("rply");
    w.u64(capacity_);
    w.i64(next_stamp_);
    w.u64(data_.size());
    for (const auto& tr : data_) {
      w.tensor(tr.obs);
      w.i32(tr.action);
      w.scalar(tr.reward);
      w.u8(tr.cont);
      w.tensor(tr.mask);
      w.u32((uint32_t)tr.teammates.size());
      for (int x : tr.teammates) w.i32(x);
      w.i64(tr.stamp);
    }
  }

  void restore(BinReader& r) {
    r.expect_tag("rply");
    capacity_ = r.u64();
    next_stamp_ = r.i64();
    size_t n = r.u64();
    if (n > capacity_) throw std::runtime_error("replay: checkpoint larger than capacity");
    data_.clear();
    for (size_t i = 0; i < n; ++i) {
      Transition<T> tr;
      tr.obs = r.template tensor<T>();
      tr.action = r.i32();
      tr.reward = r.template scalar<T>();
      tr.cont = r.u8();
      tr.mask = r.template tensor<T>();
      uint32_t tm = r.u32();
      tr.teammates.resize(tm);
      for (auto& x : tr.teammates) x = r.i32();
      tr.stamp = r.i64();
      data_.push_back(std::move(tr));
    }
  }

  struct Stats {
    size_t size = 0, capacity = 0;
    int64_t oldest_stamp = 0, newest_stamp = 0;
    int episodes_closed = 0;
  };
  Stats stats() const {
    Stats s;
    s.size = data_.size();
    s.capacity = capacity_;
    s.oldest_stamp = oldest_stamp();
    s.newest_stamp = newest_stamp();
    for (const auto& tr : data_)
      if (tr.cont == 0) s.episodes_closed++;
    return s;
  }

 private:
  size_t capacity_;
  int64_t next_stamp_ = 1;
  std::deque<Transition<T>> data_;
};

}  // namespace matwm
