#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "matwm/agent/agent.hpp"
#include "matwm/env/env.hpp"
#include "matwm/model/dynamics.hpp"

namespace matwm {

// Everything a run needs, loadable from a JSON file whose keys are the
// hyperparameter names used in the reported settings table, verbatim.
// Unknown keys are rejected so typos fail loudly.
struct RunConfig {
  // run control
  std::string env_name = "switch_corridor";
  EnvKnobs env_knobs;
  int64_t total_steps = 20000;
  uint64_t seed = 0;
  int64_t eval_every = 1000;
  int eval_episodes = 50;
  int64_t warmup_steps = 1000;  // per-agent replay threshold before training
  int64_t metrics_every = 100;
  std::string metrics_path;     // empty = no metrics file
  std::string checkpoint_path;  // empty = no checkpoints
  int64_t checkpoint_every = 0;

  // architecture (settings-table rows)
  int max_seq = 64;
  int hidden = 512;
  int layers = 2;
  int heads = 8;
  int latent_vars = 32;
  int latent_classes = 32;
  int wm_batch_length = 64;
  int wm_batch_size = 16;
  double wm_lr = 3e-5;
  double ac_lr = 3e-4;
  std::string optimizer = "Adam";
  double clip_agent = 100.0;
  double clip_wm = 1000.0;
  int64_t replay_capacity = 50000;
  double replay_decay = 0.9998;
  double beta1 = 0.5;
  double beta2 = 0.1;
  std::optional<int> imagination_horizon;  // defaulted from agent count
  std::optional<int> agent_batch_size;     // defaulted from agent count
  int context_length = 8;
  int wm_every = 1;
  int agent_every = 1;
  int mlp_width = 512;
  int mlp_layers = 3;
  int cnn_kernel = 4;
  int cnn_stride = 2;
  int cnn_layers = 4;

  // extra architecture knobs (not in the settings table)
  int ff_mult = 2;
  int head_width = 512;
  int head_layers = 1;
  int cnn_base = 32;
  int teammate_layers = 1;
  bool symlog_obs = true;
  int twohot_bins = 255;
  double twohot_lo = -20.0, twohot_hi = 20.0;

  // return / training scalars
  double gamma = 0.985;
  double lambda = 0.95;
  double entropy_eta = 3e-4;
  double ema_sigma = 0.98;

  // ablation switches
  bool teammate_predictor = true;
  bool prioritized_replay = true;
  bool action_scaling = true;

  // The reported defaults scale the imagined batch with team size.
  int horizon_for(int num_agents) const {
    if (imagination_horizon) return *imagination_horizon;
    if (num_agents <= 3) return 16;
    if (num_agents <= 6) return 12;
    return 8;
  }
  int agent_batch_for(int num_agents) const {
    if (agent_batch_size) return *agent_batch_size;
    if (num_agents <= 3) return 512;
    if (num_agents <= 6) return 768;
    return 1024;
  }
  double effective_decay() const { return prioritized_replay ? replay_decay : 1.0; }

  void validate() const {
    auto positive = [](int64_t v, const char* what) {
      if (v < 1) throw std::invalid_argument(std::string("config: ") + what + " must be positive");
    };
    positive(total_steps, "total steps");
    positive(max_seq, "Max sequence length");
    positive(hidden, "Hidden dimension");
    positive(layers, "Number of layers");
    positive(heads, "Number of attention heads");
    positive(latent_vars, "Latent dimension size");
    positive(latent_classes, "Number of categories per latent");
    positive(wm_batch_length, "World model train batch length");
    positive(wm_batch_size, "World model train batch size");
    positive(replay_capacity, "Replay buffer size");
    positive(context_length, "Imagination context length");
    positive(wm_every, "Train world model every n steps");
    positive(agent_every, "Train agent every n steps");
    positive(mlp_width, "MLP Encoder Hidden dim");
    positive(mlp_layers, "MLP Encoder Hidden layers");
    positive(eval_episodes, "eval episodes");
    positive(warmup_steps, "warmup steps");
    if (imagination_horizon && *imagination_horizon < 1)
      throw std::invalid_argument("config: Imagination horizon must be positive");
    if (agent_batch_size && *agent_batch_size < 1)
      throw std::invalid_argument("config: Agent train batch size must be positive");
    if (hidden % heads != 0)
      throw std::invalid_argument("config: attention heads must divide the hidden dimension");
    if (wm_lr <= 0 || ac_lr <= 0) throw std::invalid_argument("config: learning rates must be positive");
    if (optimizer != "Adam") throw std::invalid_argument("config: only the Adam optimizer is supported");
    if (replay_decay <= 0.0 || replay_decay > 1.0)
      throw std::invalid_argument("config: Replay sampling priority decay must be in (0,1]");
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("config: gamma must be in (0,1)");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("config: lambda must be in [0,1]");
    if (ema_sigma < 0.0 || ema_sigma >= 1.0)
      throw std::invalid_argument("config: critic EMA decay must be in [0,1)");
    if (wm_batch_length < 2)
      throw std::invalid_argument("config: World model train batch length must be >= 2");
    if (twohot_bins < 2 || twohot_lo >= twohot_hi)
      throw std::invalid_argument("config: bad two-hot representation settings");
  }

  // Cross-checks that need the environment's shape.
  void validate_against(const EnvSpec& spec) const {
    validate();
    int h = horizon_for(spec.num_agents);
    if (context_length + h + 1 > max_seq)
      throw std::invalid_argument(
          "config: Imagination context length + horizon + 1 must fit in Max sequence length");
    if (spec.image) {
      int shrink = 1 << cnn_layers;
      if (spec.img_h % shrink != 0 || spec.img_w % shrink != 0)
        throw std::invalid_argument("config: image sides must be divisible by 2^CNN layers");
    }
  }

  WorldModelConfig world_model_config(const EnvSpec& spec) const {
    WorldModelConfig wc;
    wc.codec.image = spec.image;
    wc.codec.obs_dim = spec.obs_dim;
    wc.codec.img_c = spec.img_c;
    wc.codec.img_h = spec.img_h;
    wc.codec.img_w = spec.img_w;
    wc.codec.num_vars = latent_vars;
    wc.codec.num_classes = latent_classes;
    wc.codec.symlog_obs = symlog_obs;
    wc.codec.mlp_width = mlp_width;
    wc.codec.mlp_layers = mlp_layers;
    wc.codec.cnn_base = cnn_base;
    wc.codec.cnn_layers = cnn_layers;
    wc.codec.cnn_kernel = cnn_kernel;
    wc.codec.cnn_stride = cnn_stride;
    wc.hidden = hidden;
    wc.layers = layers;
    wc.heads = heads;
    wc.ff_mult = ff_mult;
    wc.max_seq = max_seq;
    wc.num_agents = spec.num_agents;
    wc.num_actions = spec.num_actions;
    wc.action_scaling = action_scaling;
    wc.use_masks = spec.masking;
    wc.teammate = teammate_predictor;
    wc.teammate_layers = teammate_layers;
    wc.head_width = head_width;
    wc.head_layers = head_layers;
    wc.twohot_bins = twohot_bins;
    wc.twohot_lo = twohot_lo;
    wc.twohot_hi = twohot_hi;
    wc.beta1 = beta1;
    wc.beta2 = beta2;
    return wc;
  }

  AgentConfig agent_config(const WorldModelConfig& wc) const {
    AgentConfig ac;
    int tm_width = (wc.teammate && wc.teammates() > 0) ? wc.teammates() * wc.num_actions : 0;
    ac.state_dim = wc.latent_dim() + wc.hidden + tm_width;
    ac.num_actions = wc.num_actions;
    ac.mlp_width = mlp_width;
    ac.mlp_layers = mlp_layers;
    ac.twohot_bins = twohot_bins;
    ac.twohot_lo = twohot_lo;
    ac.twohot_hi = twohot_hi;
    ac.lr = ac_lr;
    ac.clip = clip_agent;
    ac.gamma = gamma;
    ac.lambda = lambda;
    ac.entropy = entropy_eta;
    ac.ema_sigma = ema_sigma;
    return ac;
  }

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);

  // Everything that shapes the model or the data distribution. Run-control
  // fields (step budget, seed, logging paths, eval cadence) may differ between
  // a checkpoint and the trainer resuming from it; these may not.
  nlohmann::json signature() const {
    nlohmann::json j = to_json();
    for (const char* k : {"total steps", "seed", "eval every", "eval episodes", "metrics every",
                          "metrics path", "checkpoint path", "checkpoint every"})
      j.erase(k);
    return j;
  }
};

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["env"] = env_name;
  if (!env_knobs.empty()) {
    nlohmann::json k;
    for (const auto& [name, val] : env_knobs) k[name] = val;
    j["env knobs"] = k;
  }
  j["total steps"] = total_steps;
  j["seed"] = seed;
  j["eval every"] = eval_every;
  j["eval episodes"] = eval_episodes;
  j["warmup steps"] = warmup_steps;
  j["metrics every"] = metrics_every;
  if (!metrics_path.empty()) j["metrics path"] = metrics_path;
  if (!checkpoint_path.empty()) j["checkpoint path"] = checkpoint_path;
  if (checkpoint_every > 0) j["checkpoint every"] = checkpoint_every;

  j["Max sequence length"] = max_seq;
  j["Hidden dimension"] = hidden;
  j["Number of layers"] = layers;
  j["Number of attention heads"] = heads;
  j["Latent dimension size"] = latent_vars;
  j["Number of categories per latent"] = latent_classes;
  j["World model train batch length"] = wm_batch_length;
  j["World model train batch size"] = wm_batch_size;
  j["World Model Learning rate"] = wm_lr;
  j["Actor+Critic Learning rate"] = ac_lr;
  j["Optimizer"] = optimizer;
  j["Gradient clipping agent"] = clip_agent;
  j["Gradient clipping world model"] = clip_wm;
  j["Replay buffer size"] = replay_capacity;
  j["Replay sampling priority decay"] = replay_decay;
  j["KL loss weight (beta1)"] = beta1;
  j["Representation loss weight (beta2)"] = beta2;
  if (imagination_horizon) j["Imagination horizon"] = *imagination_horizon;
  if (agent_batch_size) j["Agent train batch size"] = *agent_batch_size;
  j["Imagination context length"] = context_length;
  j["Train world model every n steps"] = wm_every;
  j["Train agent every n steps"] = agent_every;
  j["MLP Encoder Hidden dim"] = mlp_width;
  j["MLP Encoder Hidden layers"] = mlp_layers;
  j["CNN Encoder Kernel Size"] = cnn_kernel;
  j["CNN Encoder Stride"] = cnn_stride;
  j["CNN Encoder Layers"] = cnn_layers;

  j["feed-forward multiplier"] = ff_mult;
  j["head width"] = head_width;
  j["head hidden layers"] = head_layers;
  j["CNN base channels"] = cnn_base;
  j["teammate predictor layers"] = teammate_layers;
  j["symlog observations"] = symlog_obs;
  j["two-hot bins"] = twohot_bins;
  j["two-hot low"] = twohot_lo;
  j["two-hot high"] = twohot_hi;

  j["gamma"] = gamma;
  j["lambda"] = lambda;
  j["entropy coefficient (eta)"] = entropy_eta;
  j["critic EMA decay (sigma)"] = ema_sigma;

  j["teammate predictor"] = teammate_predictor;
  j["prioritized replay"] = prioritized_replay;
  j["action scaling"] = action_scaling;
  return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "env", "env knobs", "total steps", "seed", "eval every", "eval episodes",
      "warmup steps", "metrics every", "metrics path", "checkpoint path", "checkpoint every",
      "Max sequence length", "Hidden dimension", "Number of layers", "Number of attention heads",
      "Latent dimension size", "Number of categories per latent",
      "World model train batch length", "World model train batch size",
      "World Model Learning rate", "Actor+Critic Learning rate", "Optimizer",
      "Gradient clipping agent", "Gradient clipping world model", "Replay buffer size",
      "Replay sampling priority decay", "KL loss weight (beta1)",
      "Representation loss weight (beta2)", "Imagination horizon", "Agent train batch size",
      "Imagination context length", "Train world model every n steps",
      "Train agent every n steps", "MLP Encoder Hidden dim", "MLP Encoder Hidden layers",
      "CNN Encoder Kernel Size", "CNN Encoder Stride", "CNN Encoder Layers",
      "feed-forward multiplier", "head width", "head hidden layers", "CNN base channels",
      "teammate predictor layers", "symlog observations", "two-hot bins", "two-hot low",
      "two-hot high", "gamma", "lambda", "entropy coefficient (eta)", "critic EMA decay (sigma)",
      "teammate predictor", "prioritized replay", "action scaling"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "'");

  RunConfig c;
  auto get = [&](const char* key, auto& into) {
    if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
  };
  get("env", c.env_name);
  if (j.contains("env knobs"))
    for (auto it = j.at("env knobs").begin(); it != j.at("env knobs").end(); ++it)
      c.env_knobs[it.key()] = it.value().get<double>();
  get("total steps", c.total_steps);
  get("seed", c.seed);
  get("eval every", c.eval_every);
  get("eval episodes", c.eval_episodes);
  get("warmup steps", c.warmup_steps);
  get("metrics every", c.metrics_every);
  get("metrics path", c.metrics_path);
  get("checkpoint path", c.checkpoint_path);
  get("checkpoint every", c.checkpoint_every);

  get("Max sequence length", c.max_seq);
  get("Hidden dimension", c.hidden);
  get("Number of layers", c.layers);
  get("Number of attention heads", c.heads);
  get("Latent dimension size", c.latent_vars);
  get("Number of categories per latent", c.latent_classes);
  get("World model train batch length", c.wm_batch_length);
  get("World model train batch size", c.wm_batch_size);
  get("World Model Learning rate", c.wm_lr);
  get("Actor+Critic Learning rate", c.ac_lr);
  get("Optimizer", c.optimizer);
  get("Gradient clipping agent", c.clip_agent);
  get("Gradient clipping world model", c.clip_wm);
  get("Replay buffer size", c.replay_capacity);
  get("Replay sampling priority decay", c.replay_decay);
  get("KL loss weight (beta1)", c.beta1);
  get("Representation loss weight (beta2)", c.beta2);
  if (j.contains("Imagination horizon")) c.imagination_horizon = j.at("Imagination horizon").get<int>();
  if (j.contains("Agent train batch size")) c.agent_batch_size = j.at("Agent train batch size").get<int>();
  get("Imagination context length", c.context_length);
  get("Train world model every n steps", c.wm_every);
  get("Train agent every n steps", c.agent_every);
  get("MLP Encoder Hidden dim", c.mlp_width);
  get("MLP Encoder Hidden layers", c.mlp_layers);
  get("CNN Encoder Kernel Size", c.cnn_kernel);
  get("CNN Encoder Stride", c.cnn_stride);
  get("CNN Encoder Layers", c.cnn_layers);

  get("feed-forward multiplier", c.ff_mult);
  get("head width", c.head_width);
  get("head hidden layers", c.head_layers);
  get("CNN base channels", c.cnn_base);
  get("teammate predictor layers", c.teammate_layers);
  get("symlog observations", c.symlog_obs);
  get("two-hot bins", c.twohot_bins);
  get("two-hot low", c.twohot_lo);
  get("two-hot high", c.twohot_hi);

  get("gamma", c.gamma);
  get("lambda", c.lambda);
  get("entropy coefficient (eta)", c.entropy_eta);
  get("critic EMA decay (sigma)", c.ema_sigma);

  get("teammate predictor", c.teammate_predictor);
  get("prioritized replay", c.prioritized_replay);
  get("action scaling", c.action_scaling);
  c.validate();
  return c;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace matwm
