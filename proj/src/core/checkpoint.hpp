#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rada {

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

// Parameter archive keyed by module path strings, plus the optimizer's two
// moment tables and the training position. `fingerprint` hashes the training
// configuration; loads refuse a mismatch unless overridden.
struct CheckpointBundle {
  std::uint32_t format_version = 1;
  std::uint64_t fingerprint = 0;
  std::uint64_t step = 0;  // optimizer updates applied so far
  std::vector<NamedArray> params, opt_m, opt_v;
};

// Binary little-endian layout: magic "RADACKPT", u32 format_version,
// u64 fingerprint, u64 step, then the three sections, each a u32 count of
// (u32 name length, name bytes, u32 ndim, i32 dims, f64 values) entries.
void write_checkpoint(const CheckpointBundle& bundle, const std::string& path);
CheckpointBundle read_checkpoint(const std::string& path);

}  // namespace rada
