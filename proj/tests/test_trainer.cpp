#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "matwm/train/trainer.hpp"
#include "test_util.hpp"

using namespace matwm;

namespace {

RunConfig tiny_chain() {
  RunConfig c;
  c.env_name = "scripted_chain";
  c.env_knobs = {{"states", 6.0}, {"agents", 2.0}, {"actions", 3.0}, {"cap", 16.0}};
  c.total_steps = 200;
  c.seed = 1;
  c.eval_every = 80;
  c.eval_episodes = 2;
  c.warmup_steps = 40;
  c.metrics_every = 20;
  c.max_seq = 16;
  c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.latent_vars = 3;
  c.latent_classes = 3;
  c.wm_batch_length = 8;
  c.wm_batch_size = 2;
  c.replay_capacity = 500;
  c.imagination_horizon = 3;
  c.agent_batch_size = 3;
  c.context_length = 3;
  c.mlp_width = 16;
  c.mlp_layers = 1;
  c.head_width = 16;
  c.twohot_bins = 31;
  c.twohot_lo = -10.0;
  c.twohot_hi = 10.0;
  return c;
}

RunConfig tiny_corridor() {
  RunConfig c = tiny_chain();
  c.env_name = "switch_corridor";
  c.env_knobs = {{"length", 5.0}, {"cap", 12.0}};
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string tmp_path(const std::string& name) {
  return std::string(::testing::TempDir()) + name;
}

}  // namespace

TEST(RunConfig, JsonRoundTripIsLossless) {
  RunConfig c = tiny_chain();
  c.metrics_path = "m.jsonl";
  c.checkpoint_path = "c.bin";
  c.checkpoint_every = 50;
  c.teammate_predictor = false;
  c.replay_decay = 0.995;

  nlohmann::json j = c.to_json();
  RunConfig back = RunConfig::from_json(j);
  EXPECT_EQ(back.to_json().dump(), j.dump());
  EXPECT_EQ(back.env_knobs, c.env_knobs);
  EXPECT_EQ(back.imagination_horizon, c.imagination_horizon);
  EXPECT_FALSE(back.teammate_predictor);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
  nlohmann::json j = tiny_chain().to_json();
  j["Hiden dimension"] = 64;  // typo must fail loudly
  EXPECT_THROW(RunConfig::from_json(j), std::invalid_argument);

  auto bad = [&](const char* key, nlohmann::json v) {
    nlohmann::json k = tiny_chain().to_json();
    k[key] = std::move(v);
    EXPECT_THROW(RunConfig::from_json(k), std::invalid_argument) << key;
  };
  bad("Number of attention heads", 3);              // must divide hidden (16)
  bad("Optimizer", "SGD");
  bad("Replay sampling priority decay", 0.0);
  bad("gamma", 1.0);
  bad("World model train batch length", 1);
  bad("two-hot bins", 1);
  bad("Hidden dimension", 0);
  bad("World Model Learning rate", -1.0);
}

TEST(RunConfig, FromFileParsesJson) {
  std::string path = tmp_path("cfg.json");
  {
    std::ofstream out(path);
    out << tiny_chain().to_json().dump(2);
  }
  RunConfig c = RunConfig::from_file(path);
  EXPECT_EQ(c.env_name, "scripted_chain");
  EXPECT_EQ(c.hidden, 16);
  EXPECT_THROW(RunConfig::from_file(tmp_path("missing.json")), std::runtime_error);
}

TEST(RunConfig, SignatureIgnoresRunControlOnly) {
  RunConfig a = tiny_chain();
  RunConfig b = a;
  b.seed = 999;
  b.total_steps = 123456;
  b.eval_every = 7;
  b.eval_episodes = 3;
  b.metrics_every = 1;
  b.metrics_path = "elsewhere.jsonl";
  b.checkpoint_path = "elsewhere.bin";
  b.checkpoint_every = 1;
  EXPECT_EQ(a.signature().dump(), b.signature().dump());

  RunConfig c = a;
  c.hidden = 32;
  EXPECT_NE(a.signature().dump(), c.signature().dump());
  RunConfig d = a;
  d.beta1 = 0.25;
  EXPECT_NE(a.signature().dump(), d.signature().dump());
  RunConfig e = a;
  e.env_knobs["states"] = 7.0;
  EXPECT_NE(a.signature().dump(), e.signature().dump());
  RunConfig f = a;
  f.warmup_steps = 99;  // shapes the data distribution: part of the signature
  EXPECT_NE(a.signature().dump(), f.signature().dump());
}

TEST(RunConfig, TeamSizeDefaultsFollowReportedTable) {
  RunConfig c;
  c.imagination_horizon.reset();
  c.agent_batch_size.reset();
  EXPECT_EQ(c.horizon_for(2), 16);
  EXPECT_EQ(c.horizon_for(3), 16);
  EXPECT_EQ(c.horizon_for(4), 12);
  EXPECT_EQ(c.horizon_for(6), 12);
  EXPECT_EQ(c.horizon_for(7), 8);
  EXPECT_EQ(c.agent_batch_for(2), 512);
  EXPECT_EQ(c.agent_batch_for(5), 768);
  EXPECT_EQ(c.agent_batch_for(8), 1024);
  c.imagination_horizon = 5;
  c.agent_batch_size = 32;
  EXPECT_EQ(c.horizon_for(8), 5);
  EXPECT_EQ(c.agent_batch_for(2), 32);

  c.prioritized_replay = false;
  EXPECT_EQ(c.effective_decay(), 1.0);
  c.prioritized_replay = true;
  EXPECT_EQ(c.effective_decay(), c.replay_decay);
}

TEST(Trainer, FixedSeedRunsProduceIdenticalMetricStreams) {
  RunConfig rc = tiny_chain();
  rc.total_steps = 160;

  auto run = [&]() {
    std::vector<nlohmann::json> cap;
    MetricsLogger log;
    log.capture = &cap;
    Trainer<float> tr(rc, &log);
    tr.train_for(rc.total_steps);
    return cap;
  };
  auto a = run();
  auto b = run();
  ASSERT_FALSE(a.empty());
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].dump(), b[i].dump()) << i;

  // The stream must contain training and eval entries, not just episodes.
  bool saw_wm = false, saw_agent = false, saw_eval = false;
  for (const auto& j : a) {
    saw_wm |= j["kind"] == "wm";
    saw_agent |= j["kind"] == "agent";
    saw_eval |= j["kind"] == "eval";
  }
  EXPECT_TRUE(saw_wm);
  EXPECT_TRUE(saw_agent);
  EXPECT_TRUE(saw_eval);
}

TEST(Trainer, DifferentSeedsDiverge) {
  RunConfig rc = tiny_chain();
  rc.total_steps = 90;
  auto run = [&](uint64_t seed) {
    RunConfig one = rc;
    one.seed = seed;
    std::vector<nlohmann::json> cap;
    MetricsLogger log;
    log.capture = &cap;
    Trainer<float> tr(one, &log);
    tr.train_for(one.total_steps);
    std::string all;
    for (const auto& j : cap) all += j.dump() + "\n";
    return all;
  };
  EXPECT_NE(run(1), run(2));
}

TEST(Trainer, CheckpointResumeIsBitExact) {
  RunConfig rc = tiny_chain();
  std::string ckpt = tmp_path("resume.ckpt");

  // Reference: train 120, snapshot, then 60 more while capturing metrics.
  std::vector<nlohmann::json> cap_a;
  MetricsLogger log_a;
  log_a.capture = &cap_a;
  Trainer<float> a(rc, &log_a);
  a.train_for(120);
  a.save_checkpoint(ckpt);
  a.train_for(60);
  std::string final_a = tmp_path("final_a.ckpt");
  a.save_checkpoint(final_a);

  // Resume: fresh trainer, load the snapshot, run the same 60 steps.
  std::vector<nlohmann::json> cap_b;
  MetricsLogger log_b;
  log_b.capture = &cap_b;
  Trainer<float> b(rc, &log_b);
  b.load_checkpoint(ckpt);
  EXPECT_EQ(b.step(), 120);
  b.train_for(60);
  std::string final_b = tmp_path("final_b.ckpt");
  b.save_checkpoint(final_b);

  // Metric entries after the snapshot must match the reference exactly.
  ASSERT_FALSE(cap_b.empty());
  ASSERT_GT(cap_a.size(), cap_b.size());
  std::vector<nlohmann::json> tail_a(cap_a.end() - cap_b.size(), cap_a.end());
  for (size_t i = 0; i < cap_b.size(); ++i) EXPECT_EQ(tail_a[i].dump(), cap_b[i].dump()) << i;

  // And the final checkpoints agree byte for byte.
  std::string bytes_a = slurp(final_a), bytes_b = slurp(final_b);
  ASSERT_FALSE(bytes_a.empty());
  EXPECT_TRUE(bytes_a == bytes_b);
  std::remove(ckpt.c_str());
  std::remove(final_a.c_str());
  std::remove(final_b.c_str());
}

TEST(Trainer, MaskedEnvCheckpointRoundTrips) {
  RunConfig rc = tiny_corridor();
  std::string ckpt = tmp_path("corridor.ckpt");

  std::vector<nlohmann::json> cap_a;
  MetricsLogger log_a;
  log_a.capture = &cap_a;
  Trainer<float> a(rc, &log_a);
  a.train_for(70);
  a.save_checkpoint(ckpt);
  a.train_for(30);

  std::vector<nlohmann::json> cap_b;
  MetricsLogger log_b;
  log_b.capture = &cap_b;
  Trainer<float> b(rc, &log_b);
  b.load_checkpoint(ckpt);
  b.train_for(30);

  ASSERT_FALSE(cap_b.empty());
  ASSERT_GT(cap_a.size(), cap_b.size());
  std::vector<nlohmann::json> tail_a(cap_a.end() - cap_b.size(), cap_a.end());
  for (size_t i = 0; i < cap_b.size(); ++i) EXPECT_EQ(tail_a[i].dump(), cap_b[i].dump()) << i;
  std::remove(ckpt.c_str());
}

TEST(Trainer, CheckpointRejectsArchitectureDrift) {
  RunConfig rc = tiny_chain();
  std::string ckpt = tmp_path("drift.ckpt");
  Trainer<float> a(rc);
  a.train_for(5);
  a.save_checkpoint(ckpt);

  // Run-control overrides are fine.
  RunConfig moved = rc;
  moved.seed = 42;
  moved.total_steps = 5000;
  moved.metrics_path = "x.jsonl";
  Trainer<float> ok(moved);
  EXPECT_NO_THROW(ok.load_checkpoint(ckpt));
  EXPECT_EQ(ok.step(), 5);

  // Architecture drift is not.
  RunConfig wider = rc;
  wider.hidden = 32;
  Trainer<float> bad(wider);
  EXPECT_THROW(bad.load_checkpoint(ckpt), std::runtime_error);

  // Neither is reading with the wrong scalar width.
  Trainer<double> wrong_scalar(rc);
  EXPECT_THROW(wrong_scalar.load_checkpoint(ckpt), std::runtime_error);
  std::remove(ckpt.c_str());
}

TEST(Trainer, TeammatePredictorAblationShrinksAgentState) {
  RunConfig on = tiny_chain();
  Trainer<float> t_on(on);
  const auto& wc_dim = t_on.world_model().cfg;
  EXPECT_TRUE(t_on.world_model().has_teammate());
  EXPECT_EQ(t_on.agent(0).cfg.state_dim,
            wc_dim.latent_dim() + wc_dim.hidden + wc_dim.teammates() * wc_dim.num_actions);

  RunConfig off = tiny_chain();
  off.teammate_predictor = false;
  Trainer<float> t_off(off);
  EXPECT_FALSE(t_off.world_model().has_teammate());
  EXPECT_EQ(t_off.agent(0).cfg.state_dim, wc_dim.latent_dim() + wc_dim.hidden);
  t_off.train_for(50);  // must train end to end without the branch
  EXPECT_EQ(t_off.step(), 50);
}

TEST(Trainer, ActionScalingAblationControlsStoredIds) {
  RunConfig on = tiny_chain();
  Trainer<float> t_on(on);
  t_on.train_for(30);
  bool saw_shifted = false;
  for (size_t i = 0; i < t_on.buffer(1).size(); ++i)
    saw_shifted |= t_on.buffer(1).at(i).action >= t_on.env_spec().num_actions;
  EXPECT_TRUE(saw_shifted);  // agent 1 stores ids offset by its action block

  RunConfig off = tiny_chain();
  off.action_scaling = false;
  Trainer<float> t_off(off);
  t_off.train_for(30);
  for (int agent = 0; agent < 2; ++agent)
    for (size_t i = 0; i < t_off.buffer(agent).size(); ++i) {
      EXPECT_GE(t_off.buffer(agent).at(i).action, 0);
      EXPECT_LT(t_off.buffer(agent).at(i).action, t_off.env_spec().num_actions);
    }
}

TEST(Trainer, MetricsFileMatchesCapturedStream) {
  RunConfig rc = tiny_chain();
  rc.total_steps = 60;
  std::string path = tmp_path("metrics.jsonl");
  std::vector<nlohmann::json> cap;
  MetricsLogger log(path);
  log.capture = &cap;
  Trainer<float> tr(rc, &log);
  tr.train_for(60);

  auto from_file = read_metrics(path);
  ASSERT_EQ(from_file.size(), cap.size());
  for (size_t i = 0; i < cap.size(); ++i) EXPECT_EQ(from_file[i].dump(), cap[i].dump());
  std::remove(path.c_str());
}

TEST(Trainer, PeriodicCheckpointsAreWritten) {
  RunConfig rc = tiny_chain();
  rc.checkpoint_path = tmp_path("periodic.ckpt");
  rc.checkpoint_every = 25;
  Trainer<float> tr(rc);
  tr.train_for(50);
  Trainer<float> back(rc);
  back.load_checkpoint(rc.checkpoint_path);
  EXPECT_EQ(back.step(), 50);
  std::remove(rc.checkpoint_path.c_str());
}

TEST(Experiment, DriverCollectsMediansAndCsv) {
  RunConfig rc = tiny_chain();
  rc.total_steps = 80;
  rc.eval_every = 40;
  rc.eval_episodes = 2;

  auto rep = run_experiment<float>(rc, {1, 2, 3});
  ASSERT_EQ(rep.eval_steps, (std::vector<int64_t>{40, 80}));
  ASSERT_EQ(rep.returns.size(), 2u);
  for (const auto& point : rep.returns) ASSERT_EQ(point.size(), 3u);

  // Median of three = middle order statistic, independently computed.
  std::vector<double> xs = rep.returns[0];
  std::sort(xs.begin(), xs.end());
  EXPECT_EQ(rep.median_at(0), xs[1]);
  EXPECT_LE(rep.best_median(), std::max(rep.median_at(0), rep.median_at(1)));

  std::string csv = tmp_path("exp.csv");
  rep.write_csv(csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,seed1,seed2,seed3,median,std");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows++;
  EXPECT_EQ(rows, 2);
  std::remove(csv.c_str());

  EXPECT_THROW(run_experiment<float>(rc, {}), std::invalid_argument);
  RunConfig no_eval = rc;
  no_eval.eval_every = 0;
  EXPECT_THROW(run_experiment<float>(no_eval, {1}), std::invalid_argument);
}

TEST(Trainer, RejectsMismatchedEnvConfig) {
  RunConfig rc = tiny_chain();
  rc.env_name = "no_such_env";
  EXPECT_THROW(Trainer<float>{rc}, std::invalid_argument);

  RunConfig tight = tiny_chain();
  tight.imagination_horizon = 16;  // context 3 + 16 + 1 > max_seq 16
  EXPECT_THROW(Trainer<float>{tight}, std::invalid_argument);
}
