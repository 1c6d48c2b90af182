#pragma once

#include <cstddef>

namespace ssdrl {

// Bytes held by sequence-mixing buffers (scan results and workspaces,
// attention score matrices) since the last reset. Accounting is explicit and
// single-threaded; it estimates transient memory, not process RSS.
class MemoryMeter {
 public:
  static void reset();
  static void allocate(std::size_t bytes);
  static void release(std::size_t bytes);
  static std::size_t peak();
  static std::size_t current();
};

}  // namespace ssdrl
