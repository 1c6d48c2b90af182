#include "ssdrl/memory_meter.h"

#include <algorithm>

namespace ssdrl {

namespace {
std::size_t g_current = 0;
std::size_t g_peak = 0;
}  // namespace

void MemoryMeter::reset() {
  g_current = 0;
  g_peak = 0;
}

void MemoryMeter::allocate(std::size_t bytes) {
  g_current += bytes;
  g_peak = std::max(g_peak, g_current);
}

void MemoryMeter::release(std::size_t bytes) { g_current -= std::min(bytes, g_current); }

std::size_t MemoryMeter::peak() { return g_peak; }

std::size_t MemoryMeter::current() { return g_current; }

}  // namespace ssdrl
