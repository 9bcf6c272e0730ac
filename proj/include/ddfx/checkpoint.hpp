#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ddfx/config.hpp"
#include "ddfx/nn.hpp"

// Single-file binary checkpoint.
//
//   "DDFX" | u32 version | str config | str tables | u32 groups
//   per group:  str name | u32 params
//   per param:  str name | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//
// str is u64 length + bytes. Every integer and double is little-endian.

namespace ddfx {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Config config;
    ParamStore params;
};

std::string checkpoint_to_bytes(const Checkpoint& ck);
/// Throws ParseError on bad magic, unknown version, truncation or
/// inconsistent lengths; ValidationError if the embedded tables differ from
/// this build's.
Checkpoint checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Category tables and caption vocabulary as embedded in checkpoints.
std::string checkpoint_tables_json();

}  // namespace ddfx
