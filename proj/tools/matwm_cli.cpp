// Command-line front end: train / eval / experiment / inspect / plot.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "matwm/train/trainer.hpp"

using namespace matwm;

namespace {

struct CheckpointHeader {
  int scalar_width = 4;
  RunConfig config;
};

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  BinReader r(is);
  r.expect_tag("mtwm");
  if (r.u32() != 1) throw std::runtime_error("unsupported checkpoint version");
  CheckpointHeader h;
  h.scalar_width = r.u8();
  h.config = RunConfig::from_json(nlohmann::json::parse(r.str()));
  return h;
}

void apply_ablations(RunConfig& rc, const std::vector<std::string>& ablate) {
  for (const std::string& a : ablate) {
    if (a == "teammate") rc.teammate_predictor = false;
    else if (a == "per") rc.prioritized_replay = false;
    else if (a == "action-scaling") rc.action_scaling = false;
    else throw CLI::ValidationError("--ablate", "unknown ablation '" + a + "'");
  }
}

template <typename T>
int run_train(RunConfig rc, bool resume, const std::string& resume_path, bool quiet) {
  MetricsLogger logger;
  if (!rc.metrics_path.empty()) logger.open(rc.metrics_path, resume);
  std::vector<nlohmann::json> captured;
  logger.capture = &captured;

  Trainer<T> tr(rc, &logger);
  if (resume) {
    tr.load_checkpoint(resume_path);
    if (!quiet) std::cout << "resumed at step " << tr.step() << "\n";
  }

  size_t printed = 0;
  const int64_t chunk = std::max<int64_t>(1, rc.eval_every > 0 ? rc.eval_every : 1000);
  while (tr.step() < rc.total_steps) {
    tr.train_for(std::min(chunk, rc.total_steps - tr.step()));
    for (; printed < captured.size(); ++printed) {
      const auto& j = captured[printed];
      if (quiet) continue;
      if (j["kind"] == "eval")
        std::cout << "step " << j["step"].get<int64_t>() << "  eval_return "
                  << j["return"].get<double>() << "\n";
    }
    if (!quiet) {
      std::cout << "step " << tr.step() << " / " << rc.total_steps << "  episodes "
                << tr.episodes() << "\r" << std::flush;
    }
  }
  if (!quiet) std::cout << "\n";
  if (!rc.checkpoint_path.empty()) {
    tr.save_checkpoint(rc.checkpoint_path);
    if (!quiet) std::cout << "checkpoint written to " << rc.checkpoint_path << "\n";
  }
  double final_ret = tr.evaluate(rc.eval_episodes);
  std::cout << "final greedy return over " << rc.eval_episodes << " episodes: " << final_ret
            << "\n";
  return 0;
}

template <typename T>
int run_eval(const RunConfig& rc, const std::string& ckpt, int episodes) {
  Trainer<T> tr(rc);
  tr.load_checkpoint(ckpt);
  double ret = tr.evaluate(episodes);
  std::cout << "greedy return over " << episodes << " episodes: " << ret << "\n";
  return 0;
}

template <typename T>
int run_inspect(const RunConfig& rc, const std::string& ckpt) {
  Trainer<T> tr(rc);
  tr.load_checkpoint(ckpt);
  std::cout << "step " << tr.step() << ", episodes " << tr.episodes() << "\n";
  std::cout << "env " << rc.env_name << ", agents " << tr.env_spec().num_agents << ", actions "
            << tr.env_spec().num_actions << "\n";
  for (int i = 0; i < tr.env_spec().num_agents; ++i) {
    auto st = tr.buffer(i).stats();
    std::cout << "replay[" << i << "]: size " << st.size << "/" << st.capacity << ", stamps "
              << st.oldest_stamp << ".." << st.newest_stamp << ", episodes closed "
              << st.episodes_closed << "\n";
  }
  return 0;
}

// Tiny standalone SVG line chart; enough to eyeball a training curve.
void write_svg(const std::string& path, const std::string& title,
               const std::vector<double>& xs, const std::vector<double>& ys) {
  const double W = 720, H = 440, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = xs.front(), xmax = xs.back();
  double ymin = *std::min_element(ys.begin(), ys.end());
  double ymax = *std::max_element(ys.begin(), ys.end());
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
      << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
      << "' stroke='black'/>\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", ymin);
  out << "<text x='" << ml - 8 << "' y='" << py(ymin) << "' text-anchor='end' font-size='12'>"
      << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", ymax);
  out << "<text x='" << ml - 8 << "' y='" << py(ymax) + 4
      << "' text-anchor='end' font-size='12'>" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", xmin);
  out << "<text x='" << px(xmin) << "' y='" << H - mb + 18
      << "' text-anchor='middle' font-size='12'>" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", xmax);
  out << "<text x='" << px(xmax) << "' y='" << H - mb + 18
      << "' text-anchor='middle' font-size='12'>" << buf << "</text>\n";
  out << "<polyline fill='none' stroke='#1f6fb2' stroke-width='1.5' points='";
  for (size_t i = 0; i < xs.size(); ++i) out << px(xs[i]) << "," << py(ys[i]) << " ";
  out << "'/>\n</svg>\n";
}

int run_plot(const std::string& metrics, const std::string& kind, const std::string& field,
             const std::string& out_path) {
  auto rows = read_metrics(metrics);
  std::vector<double> xs, ys;
  for (const auto& j : rows) {
    if (j.value("kind", "") != kind || !j.contains(field)) continue;
    xs.push_back(j["step"].get<double>());
    ys.push_back(j[field].get<double>());
  }
  if (xs.empty()) {
    std::cerr << "no '" << kind << "." << field << "' entries in " << metrics << "\n";
    return 1;
  }
  if (out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".svg") {
    write_svg(out_path, kind + "." + field, xs, ys);
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out << "step," << field << "\n";
    for (size_t i = 0; i < xs.size(); ++i) out << (int64_t)xs[i] << "," << ys[i] << "\n";
  }
  std::cout << "wrote " << out_path << " (" << xs.size() << " points)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-agent transformer world model: training and evaluation tools"};
  app.require_subcommand(1);

  // --- train ---
  auto* train = app.add_subcommand("train", "train on an environment");
  std::string cfg_path, metrics_path, ckpt_path, resume_path;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps;
  std::vector<std::string> ablate;
  bool f64 = false, quiet = false;
  train->add_option("--config", cfg_path, "run configuration JSON")->required();
  train->add_option("--seed", seed, "override the run seed");
  train->add_option("--steps", steps, "override total environment steps");
  train->add_option("--metrics", metrics_path, "override the metrics JSONL path");
  train->add_option("--checkpoint", ckpt_path, "override the checkpoint path");
  train->add_option("--resume", resume_path, "resume from this checkpoint");
  train->add_option("--ablate", ablate, "disable a component (teammate, per, action-scaling)")
      ->delimiter(',');
  train->add_flag("--f64", f64, "train in double precision");
  train->add_flag("--quiet", quiet, "suppress progress output");

  // --- eval ---
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with the greedy policy");
  std::string eval_ckpt;
  int eval_episodes = 50;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--episodes", eval_episodes, "number of evaluation episodes");

  // --- experiment ---
  auto* ex = app.add_subcommand("experiment", "multi-seed training with a CSV report");
  std::string ex_cfg, ex_out = "report.csv";
  std::vector<uint64_t> ex_seeds = {0, 1, 2, 3};
  bool ex_f64 = false, ex_quiet = false;
  ex->add_option("--config", ex_cfg, "run configuration JSON")->required();
  ex->add_option("--seeds", ex_seeds, "seeds to run")->delimiter(',');
  ex->add_option("--out", ex_out, "output CSV path");
  std::vector<std::string> ex_ablate;
  ex->add_option("--ablate", ex_ablate, "disable a component (teammate, per, action-scaling)")
      ->delimiter(',');
  ex->add_flag("--f64", ex_f64, "train in double precision");
  ex->add_flag("--quiet", ex_quiet, "suppress progress output");

  // --- inspect ---
  auto* in = app.add_subcommand("inspect", "print checkpoint and replay statistics");
  std::string in_ckpt;
  in->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();

  // --- plot ---
  auto* pl = app.add_subcommand("plot", "extract a metric curve to CSV or SVG");
  std::string pl_metrics, pl_kind = "eval", pl_field = "return", pl_out = "curve.csv";
  pl->add_option("--metrics", pl_metrics, "metrics JSONL file")->required();
  pl->add_option("--kind", pl_kind, "metric kind (eval, wm, agent, episode)");
  pl->add_option("--field", pl_field, "field within the kind");
  pl->add_option("--out", pl_out, "output path (.svg for a chart, else CSV)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      RunConfig rc = RunConfig::from_file(cfg_path);
      if (seed) rc.seed = *seed;
      if (steps) rc.total_steps = *steps;
      if (!metrics_path.empty()) rc.metrics_path = metrics_path;
      if (!ckpt_path.empty()) rc.checkpoint_path = ckpt_path;
      apply_ablations(rc, ablate);
      if (!resume_path.empty()) {
        // The checkpoint fixes the architecture and precision; run-control
        // flags (--steps, paths) still apply.
        CheckpointHeader h = peek_checkpoint(resume_path);
        return h.scalar_width == 8 ? run_train<double>(rc, true, resume_path, quiet)
                                   : run_train<float>(rc, true, resume_path, quiet);
      }
      return f64 ? run_train<double>(rc, false, "", quiet)
                 : run_train<float>(rc, false, "", quiet);
    }
    if (*ev) {
      CheckpointHeader h = peek_checkpoint(eval_ckpt);
      return h.scalar_width == 8 ? run_eval<double>(h.config, eval_ckpt, eval_episodes)
                                 : run_eval<float>(h.config, eval_ckpt, eval_episodes);
    }
    if (*ex) {
      RunConfig rc = RunConfig::from_file(ex_cfg);
      apply_ablations(rc, ex_ablate);
      std::ostream* progress = ex_quiet ? nullptr : &std::cout;
      ExperimentReport rep = ex_f64 ? run_experiment<double>(rc, ex_seeds, progress)
                                    : run_experiment<float>(rc, ex_seeds, progress);
      rep.write_csv(ex_out);
      std::cout << "best median return " << rep.best_median() << "; report in " << ex_out << "\n";
      return 0;
    }
    if (*in) {
      CheckpointHeader h = peek_checkpoint(in_ckpt);
      std::cout << "precision: " << (h.scalar_width == 8 ? "double" : "float") << "\n";
      std::cout << h.config.to_json().dump(2) << "\n";
      return h.scalar_width == 8 ? run_inspect<double>(h.config, in_ckpt)
                                 : run_inspect<float>(h.config, in_ckpt);
    }
    if (*pl) return run_plot(pl_metrics, pl_kind, pl_field, pl_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
