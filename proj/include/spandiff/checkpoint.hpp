#pragma once

// Versioned checkpoint container.
//
//   bytes 0..7   magic "SPANDIFF"
//   bytes 8..11  format version (uint32, little-endian)
//   bytes 12..19 header length in bytes (uint64, little-endian)
//   header       UTF-8 JSON: {"kind", "meta", "tensors": [{"name", "rows", "cols"}]}
//   payload      every tensor in header order, column-major IEEE-754 fp64
//
// Tensors are stored bit-exactly, so save/load is lossless.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace spandiff {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace spandiff
