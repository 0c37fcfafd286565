#pragma once

#include <string>

#include "kip/common.hpp"
#include "kip/kip.hpp"

namespace kip {

// Distilled-dataset container, little-endian throughout:
//   magic "KIPD" | version u32 | n_s u32 | d u32 | C u32 | flags u32
//   X_s  n_s*d f64 row-major
//   y_s  n_s*C f64 row-major
//   mask ceil(n_s*d/8) bytes, row-major bits, LSB first   (flags bit 0)
//   meta_len u32 | UTF-8 JSON text
// flags: bit 0 = mask present, bit 1 = labels were learned.
struct Snapshot {
  std::uint32_t version = 1;
  SupportSet support;
  std::string metadata;  // JSON: kernel specs, config echo, step, loss
};

void save_snapshot(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot(const std::string& path);

}  // namespace kip
