#pragma once

#include <cstddef>
#include <vector>

// Sequence-length scaling of one selective-scan layer versus one softmax
// attention layer.

namespace ssdrl {

struct ScalingOptions {
  std::vector<std::size_t> token_counts{128, 512, 2048, 8192};
  std::size_t width = 64;
  std::size_t repeats = 5;   // timed forwards per point (median reported)
  std::size_t warmup = 1;    // untimed forwards per point
  std::size_t chunk_size = 64;
};

struct ScalingPoint {
  std::size_t tokens = 0;
  double ssd_seconds = 0;        // median forward time
  double attention_seconds = 0;
  std::size_t ssd_peak_bytes = 0;        // MemoryMeter peak during one forward
  std::size_t attention_peak_bytes = 0;
};

struct ScalingReport {
  std::vector<ScalingPoint> points;
  double ssd_time_slope = 0;       // least-squares slope of log time vs log K
  double attention_time_slope = 0;
  double ssd_memory_slope = 0;
  double attention_memory_slope = 0;
};

// Throws ConfigError unless there are at least 4 token counts spanning at
// least 16× and repeats >= 5.
void validate(const ScalingOptions& options);

// Forwards run on a gradient-recording tape (training mode), batch 1.
ScalingReport bench_scaling(const ScalingOptions& options);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ssdrl
