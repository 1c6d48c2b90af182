// ssdrl: train, evaluate, benchmark and inspect state-space fusion policies.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssdrl/bench.h"
#include "ssdrl/checkpoint.h"
#include "ssdrl/config.h"
#include "ssdrl/errors.h"
#include "ssdrl/metrics_io.h"
#include "ssdrl/trainer.h"

namespace fs = std::filesystem;
using namespace ssdrl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIntegrity = 3;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  apply_overrides(cfg, overrides);
  return cfg;
}

fs::path default_run_dir(const RunConfig& cfg) {
  const char* root = std::getenv("SSDRL_OUT_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (std::string(to_string(cfg.model.backbone)) + "-" +
                 hex64(config_digest(cfg)).substr(0, 8));
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssdrl: selective state-space fusion policies trained with PPO"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  bool resume = false;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "Train one run directory (one or more seeds)");
  train->add_option("--config", config_path, "Config file (key=value lines)");
  train->add_option("--seed", seeds, "Seed(s) to train; replaces run.seeds")->take_all();
  train->add_option("--override", overrides, "key=value override (repeatable)");
  train->add_option("--out", out_dir,
                    "Run directory (default: $SSDRL_OUT_ROOT or ./runs, plus backbone-digest)");
  train->add_flag("--resume", resume, "Continue seeds from their checkpoints");
  train->add_flag("--quiet", quiet, "Suppress per-iteration progress");

  std::string checkpoint_path;
  std::size_t episodes = 0;
  std::uint64_t eval_seed = 0;
  bool stochastic = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (optionally in another world)");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--config", config_path, "Config the checkpoint was trained with");
  eval->add_option("--override", overrides, "key=value override, e.g. world.obstacle_kind=sphere");
  eval->add_option("--episodes", episodes, "Episodes (default: run.eval_episodes)");
  eval->add_option("--seed", eval_seed, "Action-sampling seed for --stochastic");
  eval->add_flag("--stochastic", stochastic, "Sample actions instead of using the mean");

  std::vector<std::size_t> tokens{128, 512, 2048, 8192};
  ScalingOptions bench_opts;
  std::string bench_csv;
  auto* bench = app.add_subcommand("bench", "Sequence-length scaling of scan vs. attention");
  bench->add_option("--tokens", tokens, "Token counts")->delimiter(',');
  bench->add_option("--width", bench_opts.width, "Token width d");
  bench->add_option("--repeats", bench_opts.repeats, "Timed repeats per point (median)");
  bench->add_option("--chunk", bench_opts.chunk_size, "Scan chunk size");
  bench->add_option("--csv", bench_csv, "Also write the table to this CSV file");

  std::string run_dir;
  auto* inspect = app.add_subcommand("inspect", "Summarize a run directory");
  inspect->add_option("run_dir", run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (!seeds.empty()) cfg.run.seeds = seeds;
      const fs::path dir = out_dir.empty() ? default_run_dir(cfg) : fs::path(out_dir);
      std::cerr << "run directory: " << dir.string() << "\n";
      LogFn log;
      if (!quiet) log = [](const std::string& line) { std::cerr << line << "\n"; };
      train_run(cfg, dir, resume, log);
      std::cout << write_aggregate(dir);
      return 0;
    }
    if (*eval) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (episodes > 0) cfg.run.eval_episodes = episodes;
      if (stochastic) cfg.run.eval_deterministic = false;
      const Checkpoint ck = load_checkpoint(checkpoint_path);
      if (ck.config_digest != config_digest(cfg)) {
        std::cerr << "warning: checkpoint config digest " << hex64(ck.config_digest)
                  << " differs from the evaluation config " << hex64(config_digest(cfg))
                  << " (expected for zero-shot transfer)\n";
      }
      ParamStore<float> params;
      Rng init(0);
      init_policy(params, cfg.model, init);
      restore_params(ck, params);
      const EvalResult r = evaluate_run_policy(params, cfg, eval_seed);
      std::cout << "obstacle_kind,terrain,density,episodes,mean_return,distance_m,collisions\n";
      std::cout << to_string(cfg.world.obstacle_kind) << "," << to_string(cfg.world.terrain) << ","
                << format_double(cfg.curriculum.target) << "," << r.metrics.episodes << ","
                << format_double(r.metrics.mean_return) << ","
                << format_double(r.metrics.distance_m) << "," << cell(r.metrics.collisions)
                << "\n";
      for (std::size_t i = 0; i < r.episodes.size(); ++i) {
        const EpisodeRecord& e = r.episodes[i];
        std::cerr << "episode " << i << ": return " << format_double(e.episode_return)
                  << " distance " << format_double(e.distance) << " collisions "
                  << e.collisions << " steps " << e.steps << (e.fell ? " (fell)" : "") << "\n";
      }
      return 0;
    }
    if (*bench) {
      bench_opts.token_counts = tokens;
      const ScalingReport rep = bench_scaling(bench_opts);
      std::ostringstream table;
      table << "tokens,ssd_seconds,attention_seconds,ssd_peak_bytes,attention_peak_bytes\n";
      for (const ScalingPoint& p : rep.points) {
        table << p.tokens << "," << format_double(p.ssd_seconds) << ","
              << format_double(p.attention_seconds) << "," << p.ssd_peak_bytes << ","
              << p.attention_peak_bytes << "\n";
      }
      std::cout << table.str();
      std::cout << "ssd time slope " << format_double(rep.ssd_time_slope)
                << ", attention time slope " << format_double(rep.attention_time_slope) << "\n";
      std::cout << "ssd memory slope " << format_double(rep.ssd_memory_slope)
                << ", attention memory slope " << format_double(rep.attention_memory_slope)
                << "\n";
      if (!bench_csv.empty()) {
        std::ofstream f(bench_csv, std::ios::binary | std::ios::trunc);
        f << table.str();
      }
      return 0;
    }
    if (*inspect) {
      std::cout << inspect_run(run_dir);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
