#include "fepn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace fepn {
namespace {

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw CheckpointError("checkpoint: unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

void put_vector(std::ostream& os, const std::vector<double>& v) {
  put<std::uint64_t>(os, v.size());
  for (double x : v) put<double>(os, x);
}

std::vector<double> get_vector(std::istream& is, std::size_t expected, const char* what) {
  const auto n = get<std::uint64_t>(is);
  if (n != expected) {
    throw CheckpointError(std::string("checkpoint: ") + what + " has " + std::to_string(n) +
                          " parameters, expected " + std::to_string(expected));
  }
  std::vector<double> v(n);
  for (auto& x : v) x = get<double>(is);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const auto& flows = ckpt.model.flows;
  os.write(kCheckpointMagic, 4);
  put<std::uint8_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(flows.flow_in.dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(flows.flow_in.block_count()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(flows.flow_in.hidden()));
  put<double>(os, flows.prior_in);
  put<std::uint64_t>(os, ckpt.backbone_seed);
  put_vector(os, flows.flow_in.flat());
  put_vector(os, flows.flow_out.flat());
  put_vector(os, ckpt.model.head.params());
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic (expected FEPN)");
  }
  const auto version = get<std::uint8_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto dim = get<std::uint32_t>(is);
  const auto blocks = get<std::uint32_t>(is);
  const auto hidden = get<std::uint32_t>(is);
  const auto prior = get<double>(is);
  const auto backbone_seed = get<std::uint64_t>(is);
  if (dim < 2 || dim > kMaxDim || blocks == 0 || blocks > kMaxCheckpointBlocks || hidden == 0 ||
      hidden > kMaxCheckpointHidden) {
    throw CheckpointError("checkpoint: implausible architecture in header");
  }
  try {
    FlowModel in(dim, blocks, hidden);
    FlowModel out(dim, blocks, hidden);
    in.set_flat(get_vector(is, in.param_count(), "inlier flow"));
    out.set_flat(get_vector(is, out.param_count(), "outlier flow"));
    ResidualHead head(dim);
    head.params() = get_vector(is, head.param_count(), "residual head");
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes");
    return Checkpoint{PosteriorModel{ClassConditionalFlows(std::move(in), std::move(out), prior),
                                     std::move(head)},
                      backbone_seed};
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: invalid header: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
  if (!os) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace fepn
