#pragma once

// Flat binary tensor container shared by backbone weights and distiller
// snapshots.
//
// layout (all integers little-endian u64, all floats little-endian f64):
//   magic   = 0x31504b43504d5345  ("ESMPCKP1")
//   version = 1
//   kind            consumer-defined payload tag
//   field_count     followed by that many u64 config scalars
//   tensor_count    followed by, per tensor: rows, cols, rows*cols f64 values
//                   in row-major order
//
// Round-trips are bit-exact: doubles are moved via their IEEE-754 bit
// patterns, never through text.

#include <cstdint>
#include <string>
#include <vector>

#include "esamp/numerics.hpp"

namespace esamp {

inline constexpr uint64_t kCheckpointMagic = 0x31504b43504d5345ULL;
inline constexpr uint64_t kCheckpointVersion = 1;

struct Checkpoint {
    uint64_t kind = 0;
    std::vector<uint64_t> fields;
    std::vector<Matrix> tensors;
};

inline constexpr uint64_t kKindTinyTransformer = 1;
inline constexpr uint64_t kKindDistiller = 2;

// throws InputError on I/O failure; never writes a partial file over a good one
void save_checkpoint(const std::string& path, const Checkpoint& c);

// throws InputError on bad magic/version/truncation
Checkpoint load_checkpoint(const std::string& path);

} // namespace esamp
