#pragma once

#include "matwm/env/env.hpp"
#include "matwm/env/paint_grid.hpp"
#include "matwm/env/scripted_chain.hpp"
#include "matwm/env/switch_corridor.hpp"

namespace matwm {

inline std::unique_ptr<Env> make_env(const std::string& name, const EnvKnobs& knobs) {
  if (name == "switch_corridor") return std::make_unique<SwitchCorridorEnv>(knobs);
  if (name == "paint_grid") return std::make_unique<PaintGridEnv>(knobs);
  if (name == "scripted_chain") return std::make_unique<ScriptedChainEnv>(knobs);
  throw std::invalid_argument("unknown env: " + name);
}

}  // namespace matwm
