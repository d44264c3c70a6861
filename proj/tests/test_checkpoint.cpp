#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "spandiff/checkpoint.hpp"
#include "support.hpp"

using namespace spandiff;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.kind = "test";
  c.meta = {{"answer", 42}, {"name", "x"}};
  Eigen::MatrixXd a(2, 3);
  a << 1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, -3.25, 0.1;
  c.tensors.push_back({"a", a});
  c.tensors.push_back({"empty", Eigen::MatrixXd(0, 4)});
  c.tensors.push_back({"nan", Eigen::MatrixXd::Constant(1, 1, std::numeric_limits<double>::quiet_NaN())});
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto path = testing::scratch_dir("ckpt") / "a.ckpt";
  const auto c = sample_checkpoint();
  write_checkpoint(path, c);
  const auto back = read_checkpoint(path);
  CHECK(back.kind == "test");
  CHECK(back.meta == c.meta);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].name == c.tensors[i].name);
    const auto& x = back.tensors[i].value;
    const auto& y = c.tensors[i].value;
    REQUIRE(x.rows() == y.rows());
    REQUIRE(x.cols() == y.cols());
    CHECK(std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0);
  }
  CHECK(back.has_tensor("a"));
  CHECK_FALSE(back.has_tensor("b"));
  CHECK_THROWS_AS(back.tensor("b"), CheckpointError);
  CHECK(slurp(path).substr(0, 8) == "SPANDIFF");
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto dir = testing::scratch_dir("ckpt_bad");
  const auto good = dir / "good.ckpt";
  write_checkpoint(good, sample_checkpoint());
  const auto bytes = slurp(good);
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(write("magic", "NOTSPANDIFF" + bytes.substr(11))), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(write("short", bytes.substr(0, bytes.size() - 3))), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(write("long", bytes + "x")), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(write("stub", bytes.substr(0, 10))), CheckpointError);
  auto version = bytes;
  version[8] = 9;
  CHECK_THROWS_AS(read_checkpoint(write("version", version)), CheckpointError);
  auto header = bytes;
  header[20] = '!';
  CHECK_THROWS_AS(read_checkpoint(write("header", header)), CheckpointError);
}
