#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "fepn/losses.hpp"

namespace fepn {

/// Malformed or unreadable checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'F', 'E', 'P', 'N'};
inline constexpr std::uint8_t kCheckpointVersion = 1;
/// Header sanity bounds applied when reading.
inline constexpr std::uint32_t kMaxCheckpointBlocks = 64;
inline constexpr std::uint32_t kMaxCheckpointHidden = 4096;

/// Trained detector plus the seed of the frozen backbone it was fitted on.
struct Checkpoint {
  PosteriorModel model;
  std::uint64_t backbone_seed = 0;

  bool operator==(const Checkpoint&) const = default;
};

/// Little-endian layout:
///   "FEPN" | u8 version | u32 dim | u32 blocks | u32 hidden | f64 prior_in |
///   u64 backbone_seed | u64 n, f64[n] inlier flow | u64 n, f64[n] outlier flow |
///   u64 n, f64[n] residual head
/// Flow parameters follow FlowModel::flat() order.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fepn
