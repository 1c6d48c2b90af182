#include "ssdrl/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "ssdrl/attention.h"
#include "ssdrl/errors.h"
#include "ssdrl/memory_meter.h"
#include "ssdrl/ssd.h"

namespace ssdrl {

void validate(const ScalingOptions& o) {
  if (o.token_counts.size() < 4) throw ConfigError("bench: need at least 4 token counts");
  const auto [lo, hi] = std::minmax_element(o.token_counts.begin(), o.token_counts.end());
  if (*lo == 0 || *hi < 16 * *lo) throw ConfigError("bench: token counts must span at least 16x");
  if (o.repeats < 5) throw ConfigError("bench: repeats must be at least 5");
  if (o.width == 0 || o.chunk_size == 0) throw ConfigError("bench: width and chunk size must be positive");
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DimensionError("loglog_slope: need at least two paired samples");
  }
  const double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

template <typename Forward>
std::pair<double, std::size_t> time_forward(Forward&& forward, std::size_t warmup,
                                            std::size_t repeats) {
  for (std::size_t i = 0; i < warmup; ++i) forward();
  std::vector<double> times;
  std::size_t peak = 0;
  for (std::size_t i = 0; i < repeats; ++i) {
    MemoryMeter::reset();
    const auto t0 = std::chrono::steady_clock::now();
    forward();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    peak = std::max(peak, MemoryMeter::peak());
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return {times[times.size() / 2], peak};
}

}  // namespace

ScalingReport bench_scaling(const ScalingOptions& o) {
  validate(o);
  const std::size_t d = o.width;
  Rng rng(2024);
  ParamStore<float> store;
  init_ssd_layer(store, "ssd.", d, rng);
  init_attention_layer(store, "attn.", d, rng);
  BackboneConfig bc;
  bc.width = d;
  bc.layers = 1;
  bc.scan_mode = ScanMode::kChunked;
  bc.chunk_size = o.chunk_size;

  ScalingReport report;
  for (std::size_t K : o.token_counts) {
    const Tensor<float> input = uniform_tensor<float>(Shape{1, K, d}, 1.0, rng);
    ScalingPoint p;
    p.tokens = K;
    std::tie(p.ssd_seconds, p.ssd_peak_bytes) = time_forward(
        [&] {
          Tape<float> t;
          Var h = t.leaf(input);
          ssd_layer_forward(t, store, "ssd.", h, bc);
        },
        o.warmup, o.repeats);
    std::tie(p.attention_seconds, p.attention_peak_bytes) = time_forward(
        [&] {
          Tape<float> t;
          Var h = t.leaf(input);
          attention_layer_forward(t, store, "attn.", h);
        },
        o.warmup, o.repeats);
    report.points.push_back(p);
  }
  std::vector<double> k, ts, ta, ms, ma;
  for (const ScalingPoint& p : report.points) {
    k.push_back(double(p.tokens));
    ts.push_back(p.ssd_seconds);
    ta.push_back(p.attention_seconds);
    ms.push_back(double(p.ssd_peak_bytes));
    ma.push_back(double(p.attention_peak_bytes));
  }
  report.ssd_time_slope = loglog_slope(k, ts);
  report.attention_time_slope = loglog_slope(k, ta);
  report.ssd_memory_slope = loglog_slope(k, ms);
  report.attention_memory_slope = loglog_slope(k, ma);
  return report;
}

}  // namespace ssdrl
