#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "matwm/core/rng.hpp"
#include "matwm/core/serialize.hpp"
#include "matwm/core/tensor.hpp"

namespace matwm {

// Static description of an environment: agent count, action space, observation
// modality, masking support and the hard episode length cap.
struct EnvSpec {
  int num_agents = 1;
  int num_actions = 2;
  bool image = false;
  int obs_dim = 0;             // vector modality
  int img_c = 0, img_h = 0, img_w = 0;  // image modality
  bool masking = false;
  int episode_cap = 1;

  std::vector<int> obs_shape() const {
    if (image) return {img_c, img_h, img_w};
    return {obs_dim};
  }
  int obs_size() const { return image ? img_c * img_h * img_w : obs_dim; }
};

// One transition as seen from outside: per-agent entries, one per agent.
// Cooperative tasks emit identical reward/cont entries for every agent.
struct StepResult {
  std::vector<Tensor<float>> obs;
  std::vector<float> rewards;
  std::vector<uint8_t> conts;  // 1 = episode continues, 0 = terminal
  std::vector<Tensor<float>> masks;  // empty when the env has no masking

  bool done() const { return !conts.empty() && conts[0] == 0; }
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;

  // Starts a fresh episode. Same seed => same initial state and all later
  // transitions (envs own their RNG and reseed it here).
  virtual std::vector<Tensor<float>> reset(uint64_t seed) = 0;

  // Joint step with one local action per agent. Throws std::invalid_argument
  // on a wrong-sized action vector, an out-of-range action, or an action that
  // is illegal under the current mask. Must not be called on a finished
  // episode (throws std::logic_error).
  virtual StepResult step(const std::vector<int>& actions) = 0;

  // Current legality masks (one [num_actions] tensor per agent, entries in
  // {0,1}); empty vector when spec().masking is false.
  virtual std::vector<Tensor<float>> masks() const = 0;

  virtual void save(BinWriter& w) const = 0;
  virtual void load(BinReader& r) = 0;

 protected:
  void check_actions(const std::vector<int>& a) const {
    const auto& s = spec();
    if ((int)a.size() != s.num_agents)
      throw std::invalid_argument("env: expected " + std::to_string(s.num_agents) +
                                  " actions, got " + std::to_string(a.size()));
    for (int x : a)
      if (x < 0 || x >= s.num_actions)
        throw std::invalid_argument("env: action id out of range");
  }
};

using EnvKnobs = std::map<std::string, double>;

inline double knob(const EnvKnobs& k, const std::string& name, double fallback) {
  auto it = k.find(name);
  return it == k.end() ? fallback : it->second;
}

std::unique_ptr<Env> make_env(const std::string& name, const EnvKnobs& knobs);

}  // namespace matwm
