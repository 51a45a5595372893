#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "recon/image.hpp"
#include "recon/tensor.hpp"

namespace recon {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// 8-bit PNG; channels must be 1 or 3. Values clamped to [0,1] on write and
// mapped back to [0,1] on read.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Raw little-endian float32 blob (row-major when used as an image).
void write_f32_blob(const std::string& path, const std::vector<double>& values);
std::vector<double> read_f32_blob(const std::string& path);

// Checkpoint = JSON manifest (version, step, RNG state, tensor directory with
// byte offsets) + one raw blob of little-endian doubles in manifest order.
// Doubles keep resume bitwise-exact.
struct Checkpoint {
  int version = 1;
  int step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
  const Tensor* find(const std::string& name) const;
};

// Writes <prefix>.json and <prefix>.blob.
void save_checkpoint(const std::string& prefix, const Checkpoint& ckpt);
// Throws IoError on a missing file or a manifest/blob size mismatch.
Checkpoint load_checkpoint(const std::string& prefix);

}  // namespace recon
