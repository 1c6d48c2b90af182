#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssdrl/env.h"

// CSV emission for training runs and the run-directory summary.
//
// Run directory layout:
//   resolved.cfg            canonical configuration of the run
//   seed_<s>/metrics.csv    one row per iteration
//   seed_<s>/eval.csv       one row per evaluation
//   seed_<s>/timing.csv     per-iteration phase timings (never compared)
//   seed_<s>/checkpoint.ssdm
//   aggregate.csv           per-iteration mean and std across seeds

namespace ssdrl {

inline constexpr const char* kMetricsHeader =
    "iteration,seed,mean_return,distance_m,collisions,policy_loss,value_loss,entropy,clip_frac,"
    "wall_s";
inline constexpr const char* kEvalHeader =
    "iteration,seed,obstacle_kind,terrain,density,episodes,mean_return,distance_m,collisions";
inline constexpr const char* kTimingHeader = "iteration,collect_s,update_s,eval_s";

struct MetricsRow {
  std::size_t iteration = 0;  // 1-based count of completed iterations
  std::uint64_t seed = 0;
  double mean_return = 0;
  double distance_m = 0;
  std::optional<double> collisions;  // empty cell when absent
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_frac = 0;
  double wall_s = 0;
};

struct EvalRow {
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
  ObstacleKind obstacle_kind = ObstacleKind::kThin;
  Terrain terrain = Terrain::kFlat;
  double density = 0;
  EvalMetrics metrics;
};

std::string format_row(const MetricsRow& row);
std::string format_row(const EvalRow& row);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws ConfigError when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Creates the file with `header` (truncating any previous content).
void start_csv(const std::filesystem::path& path, const std::string& header);
void append_csv(const std::filesystem::path& path, const std::string& line);

// Drops data rows whose first column (iteration) exceeds `iteration`,
// keeping the header. Missing files are created with the header.
void keep_rows_through(const std::filesystem::path& path, const std::string& header,
                       std::size_t iteration);

std::filesystem::path seed_dir(const std::filesystem::path& run_dir, std::uint64_t seed);

// Seed directories present in a run directory, sorted by seed.
std::vector<std::uint64_t> list_seeds(const std::filesystem::path& run_dir);

// Per-iteration mean and sample standard deviation across the seeds'
// metrics.csv files, restricted to iterations every seed has reached.
// Returns the CSV text; writes it to run_dir/aggregate.csv as well.
std::string write_aggregate(const std::filesystem::path& run_dir);

// Human-readable run summary: iterations completed, last-iteration stats,
// best return, config digest, missing files.
std::string inspect_run(const std::filesystem::path& run_dir);

}  // namespace ssdrl
