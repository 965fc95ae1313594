#include <cstring>
#include <filesystem>
#include <limits>
#include <string>

#include "doctest.h"
#include "glann/checkpoint.hpp"
#include "glann/errors.hpp"
#include "test_util.hpp"

using namespace glann;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.epoch = 17;
  ck.config_json = R"({"latent_dim":64})";
  ck.add("glo/latents", test::random_tensor({4, 3}, 1));
  ck.add("gen/0_dense/weight", test::random_tensor({2, 5}, 2));
  Tensor odd({3});
  odd[0] = -0.0f;
  odd[1] = std::numeric_limits<float>::denorm_min();
  odd[2] = std::numeric_limits<float>::infinity();
  ck.add("odd", odd);
  return ck;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * 4) == 0;
}

uint32_t trailing_u32(const std::vector<uint8_t>& bytes) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
  return v;
}

void refresh_crc(std::vector<uint8_t>& bytes) {
  uint32_t crc = test::crc32_oracle(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 4; ++i)
    bytes[bytes.size() - 4 + static_cast<size_t>(i)] = static_cast<uint8_t>(crc >> (8 * i));
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("byte round-trip is bit-exact") {
  Checkpoint ck = sample_checkpoint();
  Checkpoint rt = Checkpoint::deserialize(ck.serialize());
  CHECK(rt.epoch == 17);
  CHECK(rt.config_json == ck.config_json);
  REQUIRE(rt.tensors().size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(rt.tensors()[i].first == ck.tensors()[i].first);
    CHECK(bit_equal(rt.tensors()[i].second, ck.tensors()[i].second));
  }
}

TEST_CASE("file round-trip") {
  auto dir = test::temp_dir("ckpt");
  auto path = (dir / "a.ck").string();
  Checkpoint ck = sample_checkpoint();
  ck.save(path);
  Checkpoint rt = Checkpoint::load(path);
  CHECK(rt.epoch == ck.epoch);
  CHECK(bit_equal(rt.get("glo/latents"), ck.get("glo/latents")));
  CHECK(bit_equal(rt.get("odd"), ck.get("odd")));
  fs::remove_all(dir);
}

TEST_CASE("empty checkpoint round-trips") {
  Checkpoint ck;
  Checkpoint rt = Checkpoint::deserialize(ck.serialize());
  CHECK(rt.epoch == 0);
  CHECK(rt.config_json.empty());
  CHECK(rt.tensors().empty());
}

TEST_CASE("trailing checksum matches an independent crc32") {
  auto bytes = sample_checkpoint().serialize();
  CHECK(trailing_u32(bytes) == test::crc32_oracle(bytes.data(), bytes.size() - 4));
}

TEST_CASE("corrupt payload byte raises a checksum error") {
  auto bytes = sample_checkpoint().serialize();
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes), ChecksumError);
}

TEST_CASE("newer format version raises a version error naming both versions") {
  auto bytes = sample_checkpoint().serialize();
  bytes[4] = 2;       // version field, little-endian u32 at offset 4
  refresh_crc(bytes);  // a genuine v2 file carries a valid checksum
  try {
    Checkpoint::deserialize(bytes);
    FAIL("expected VersionError");
  } catch (const VersionError& e) {
    std::string msg = e.what();
    CHECK(msg.find('2') != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }
}

TEST_CASE("truncation raises a format error") {
  auto bytes = sample_checkpoint().serialize();
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  CHECK_THROWS_AS(Checkpoint::deserialize(cut), FormatError);
  cut.resize(8);
  CHECK_THROWS_AS(Checkpoint::deserialize(cut), FormatError);
}

TEST_CASE("bad magic names the offending bytes") {
  auto bytes = sample_checkpoint().serialize();
  bytes[0] = 'X';
  CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bytes),
                       doctest::Contains("bad checkpoint magic"), FormatError);
}

TEST_CASE("unsupported dtype raises a format error") {
  Checkpoint ck;
  ck.add("t", Tensor({2}, {1, 2}));
  auto bytes = ck.serialize();
  // header: magic(4) ver(4) epoch(8) cfg_len(4) cfg(0) n(4) name_len(2) name(1)
  size_t dtype_at = 4 + 4 + 8 + 4 + 0 + 4 + 2 + 1;
  bytes[dtype_at] = 9;
  refresh_crc(bytes);
  CHECK_THROWS_WITH_AS(Checkpoint::deserialize(bytes), doctest::Contains("dtype"),
                       FormatError);
}

TEST_CASE("duplicate tensor names are rejected") {
  Checkpoint ck;
  ck.add("w", Tensor({1}));
  CHECK_THROWS_AS(ck.add("w", Tensor({2})), ArgumentError);
}

TEST_CASE("missing tensor lookup") {
  Checkpoint ck = sample_checkpoint();
  CHECK(ck.has("glo/latents"));
  CHECK(!ck.has("nope"));
  CHECK_THROWS_AS(ck.get("nope"), MissingTensorError);
}

TEST_CASE("io failures raise format errors") {
  CHECK_THROWS_AS(Checkpoint::load("/nonexistent/dir/x.ck"), FormatError);
  CHECK_THROWS_AS(sample_checkpoint().save("/nonexistent/dir/x.ck"), FormatError);
}

TEST_CASE("error kinds map to the documented exit codes") {
  CHECK(exit_code_for(ArgumentError("x")) == 1);
  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(FormatError("x")) == 2);
  CHECK(exit_code_for(ChecksumError("x")) == 2);
  CHECK(exit_code_for(VersionError("x")) == 2);
  CHECK(exit_code_for(MissingTensorError("x")) == 2);
  CHECK(exit_code_for(StateError("x")) == 2);
  CHECK(exit_code_for(NumericError("x")) == 3);
}

}  // TEST_SUITE
