#pragma once

#include <vector>

#include "matwm/core/tensor.hpp"

namespace matwm {

// A [batch x seq] block of replayed transitions flattened row-major, so row
// b*seq + t is step t of sequence b. Actions are stored as global ids (already
// offset by the acting agent's index when action scaling is on). Teammate
// actions hold the local actions of the non-focal agents in ascending agent
// order, (num_agents-1) entries per row.
template <typename T>
struct WmBatch {
  int batch = 0, seq = 0;
  Tensor<T> obs;                      // [batch*seq, obs dims]
  std::vector<int> actions;           // [batch*seq]
  std::vector<T> rewards;             // [batch*seq]
  std::vector<T> conts;               // [batch*seq], values in {0,1}
  Tensor<T> masks;                    // [batch*seq, A] when masking, else empty
  std::vector<int> teammate_actions;  // [batch*seq*(num_agents-1)]

  int rows() const { return batch * seq; }
};

// Short real-trajectory prefixes used to warm the sequence model before
// imagination. Same row-major layout; every window ends at a non-terminal
// step so the rollout can legally continue.
template <typename T>
struct ContextBatch {
  int batch = 0, len = 0;
  Tensor<T> obs;             // [batch*len, obs dims]
  std::vector<int> actions;  // [batch*len], global ids

  int rows() const { return batch * len; }
};

}  // namespace matwm
