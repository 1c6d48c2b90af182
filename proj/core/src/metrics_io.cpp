#include "ssdrl/metrics_io.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ssdrl/config.h"
#include "ssdrl/errors.h"

namespace ssdrl {

namespace fs = std::filesystem;

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  return std::to_string(r.iteration) + "," + std::to_string(r.seed) + "," +
         format_double(r.mean_return) + "," + format_double(r.distance_m) + "," +
         opt(r.collisions) + "," + format_double(r.policy_loss) + "," +
         format_double(r.value_loss) + "," + format_double(r.entropy) + "," +
         format_double(r.clip_frac) + "," + format_double(r.wall_s);
}

std::string format_row(const EvalRow& r) {
  return std::to_string(r.iteration) + "," + std::to_string(r.seed) + "," +
         to_string(r.obstacle_kind) + "," + to_string(r.terrain) + "," +
         format_double(r.density) + "," + std::to_string(r.metrics.episodes) + "," +
         format_double(r.metrics.mean_return) + "," + format_double(r.metrics.distance_m) + "," +
         opt(r.metrics.collisions);
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("CSV has no column '" + name + "'");
  return std::size_t(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
  std::istringstream is(read_text(path));
  CsvTable t;
  std::string line;
  if (std::getline(is, line)) t.header = split(line);
  while (std::getline(is, line)) {
    if (!line.empty()) t.rows.push_back(split(line));
  }
  return t;
}

void start_csv(const fs::path& path, const std::string& header) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write '" + path.string() + "'");
  out << header << "\n";
}

void append_csv(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw ContractError("cannot append to '" + path.string() + "'");
  out << line << "\n";
}

void keep_rows_through(const fs::path& path, const std::string& header, std::size_t iteration) {
  std::vector<std::string> kept;
  if (fs::exists(path)) {
    std::istringstream is(read_text(path));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const std::size_t it = std::stoull(line.substr(0, line.find(',')));
      if (it <= iteration) kept.push_back(line);
    }
  }
  start_csv(path, header);
  for (const std::string& l : kept) append_csv(path, l);
}

fs::path seed_dir(const fs::path& run_dir, std::uint64_t seed) {
  return run_dir / ("seed_" + std::to_string(seed));
}

std::vector<std::uint64_t> list_seeds(const fs::path& run_dir) {
  std::vector<std::uint64_t> seeds;
  if (!fs::is_directory(run_dir)) return seeds;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("seed_", 0) != 0) continue;
    const std::string num = name.substr(5);
    if (num.empty() || !std::all_of(num.begin(), num.end(), ::isdigit)) continue;
    seeds.push_back(std::stoull(num));
  }
  std::sort(seeds.begin(), seeds.end());
  return seeds;
}

std::string write_aggregate(const fs::path& run_dir) {
  const std::vector<std::string> metrics = {"mean_return", "distance_m", "policy_loss",
                                            "value_loss", "entropy", "clip_frac"};
  // iteration -> metric -> per-seed values
  std::map<std::size_t, std::vector<std::vector<double>>> by_iter;
  const std::vector<std::uint64_t> seeds = list_seeds(run_dir);
  std::size_t contributing = 0;
  for (std::uint64_t s : seeds) {
    const fs::path p = seed_dir(run_dir, s) / "metrics.csv";
    if (!fs::exists(p)) continue;
    ++contributing;
    const CsvTable t = read_csv(p);
    for (const auto& row : t.rows) {
      auto& slot = by_iter[std::stoull(row[t.column("iteration")])];
      slot.resize(metrics.size());
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        slot[m].push_back(std::stod(row[t.column(metrics[m])]));
      }
    }
  }
  std::string out = "iteration,seeds";
  for (const auto& m : metrics) out += "," + m + "_mean," + m + "_std";
  out += "\n";
  for (const auto& [it, values] : by_iter) {
    if (values[0].size() != contributing) continue;
    out += std::to_string(it) + "," + std::to_string(contributing);
    for (const auto& v : values) {
      double mean = 0;
      for (double x : v) mean += x;
      mean /= double(v.size());
      double var = 0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
      out += "," + format_double(mean) + "," + format_double(sd);
    }
    out += "\n";
  }
  std::ofstream f(run_dir / "aggregate.csv", std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot write aggregate.csv in '" + run_dir.string() + "'");
  f << out;
  return out;
}

std::string inspect_run(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) {
    throw ConfigError("run directory '" + run_dir.string() + "' does not exist");
  }
  std::ostringstream os;
  std::vector<std::string> missing;
  const fs::path cfg = run_dir / "resolved.cfg";
  if (fs::exists(cfg)) {
    const RunConfig config = load_config(cfg);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(config_digest(config)));
    os << "config digest: " << hex << "\n";
    os << "backbone: " << to_string(config.model.backbone) << "\n";
  } else {
    missing.push_back(cfg.string());
  }
  const std::vector<std::uint64_t> seeds = list_seeds(run_dir);
  std::size_t min_iters = 0;
  bool first = true;
  double best = -std::numeric_limits<double>::infinity();
  std::ostringstream per_seed;
  for (std::uint64_t s : seeds) {
    const fs::path dir = seed_dir(run_dir, s);
    const fs::path m = dir / "metrics.csv";
    if (!fs::exists(m)) {
      missing.push_back(m.string());
      continue;
    }
    if (!fs::exists(dir / "checkpoint.ssdm")) missing.push_back((dir / "checkpoint.ssdm").string());
    const CsvTable t = read_csv(m);
    const std::size_t n = t.rows.size();
    min_iters = first ? n : std::min(min_iters, n);
    first = false;
    if (n == 0) continue;
    const auto& last = t.rows.back();
    per_seed << "  seed " << s << ": iteration " << last[t.column("iteration")]
             << " mean_return " << last[t.column("mean_return")] << " distance_m "
             << last[t.column("distance_m")] << " entropy " << last[t.column("entropy")] << "\n";
    for (const auto& row : t.rows) best = std::max(best, std::stod(row[t.column("mean_return")]));
  }
  os << min_iters << " iterations completed by every seed (" << seeds.size() << " seeds)\n";
  if (std::isfinite(best)) os << "best mean_return: " << format_double(best) << "\n";
  if (!per_seed.str().empty()) os << "last iteration:\n" << per_seed.str();
  if (!seeds.empty()) {
    write_aggregate(run_dir);
    os << "learning curves: " << (run_dir / "aggregate.csv").string() << "\n";
  }
  if (!missing.empty()) {
    os << "missing files:\n";
    for (const auto& m : missing) os << "  " << m << "\n";
  }
  return os.str();
}

}  // namespace ssdrl
