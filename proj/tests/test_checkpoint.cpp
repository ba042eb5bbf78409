#include <cstring>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fepn/checkpoint.hpp"
#include "fepn/trainer.hpp"

using namespace fepn;

namespace {

Checkpoint sample_checkpoint() {
  TrainConfig cfg;
  cfg.feature_dim = 4;
  cfg.hidden = 6;
  cfg.prior_in = 0.4;
  auto model = initial_model(cfg);
  model.flows.flow_in.randomize(1, 0.3);
  model.flows.flow_out.randomize(2, 0.3);
  for (std::size_t i = 0; i < model.head.param_count(); ++i) model.head.params()[i] = 0.1 * static_cast<double>(i) - 0.3;
  return {model, 1234};
}

std::string bytes_of(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, c);
  return os.str();
}

Checkpoint parse(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_checkpoint(is);
}

}  // namespace

TEST_CASE("round trip is exact") {
  const auto c = sample_checkpoint();
  const auto back = parse(bytes_of(c));
  CHECK(back == c);
  CHECK(bytes_of(back) == bytes_of(c));
}

TEST_CASE("documented byte layout") {
  const auto c = sample_checkpoint();
  const auto bytes = bytes_of(c);
  CHECK(bytes.substr(0, 4) == "FEPN");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  std::uint32_t dim = 0, blocks = 0, hidden = 0;
  double prior = 0.0;
  std::uint64_t seed = 0, n_in = 0;
  std::memcpy(&dim, bytes.data() + 5, 4);
  std::memcpy(&blocks, bytes.data() + 9, 4);
  std::memcpy(&hidden, bytes.data() + 13, 4);
  std::memcpy(&prior, bytes.data() + 17, 8);
  std::memcpy(&seed, bytes.data() + 25, 8);
  std::memcpy(&n_in, bytes.data() + 33, 8);
  CHECK(dim == 4);
  CHECK(blocks == kDefaultBlocks);
  CHECK(hidden == 6);
  CHECK(prior == 0.4);
  CHECK(seed == 1234);
  CHECK(n_in == c.model.flows.flow_in.param_count());
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 41, 8);
  CHECK(first == c.model.flows.flow_in.flat()[0]);
  const std::size_t expected = 41 + 8 * (2 + c.model.head.param_count() + 2 * n_in);
  CHECK(bytes.size() == expected);
}

TEST_CASE("corrupt files are rejected") {
  const auto bytes = bytes_of(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse(bad_magic), CheckpointError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(parse(bad_version), CheckpointError);
  CHECK_THROWS_AS(parse(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(parse(bytes.substr(0, 20)), CheckpointError);
  CHECK_THROWS_AS(parse(bytes + "x"), CheckpointError);
  auto huge = bytes;
  const std::uint32_t big = 0x7fffffff;
  std::memcpy(huge.data() + 13, &big, 4);
  CHECK_THROWS_AS(parse(huge), CheckpointError);
  CHECK_THROWS_AS(parse(""), CheckpointError);
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "fepn_checkpoint_test";
  std::filesystem::create_directories(dir);
  const auto c = sample_checkpoint();
  save_checkpoint(dir / "m.ckpt", c);
  CHECK(load_checkpoint(dir / "m.ckpt") == c);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
  CHECK_THROWS_AS(save_checkpoint(dir / "no" / "such" / "dir.ckpt", c), CheckpointError);
  std::filesystem::remove_all(dir);
}
