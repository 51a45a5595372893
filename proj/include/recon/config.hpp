#pragma once

#include <string>
#include <vector>

#include "recon/evalmesh.hpp"
#include "recon/optimize.hpp"
#include "recon/synthetic.hpp"

namespace recon {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// One JSON document drives every command; command-line overrides use dotted
// paths ("train.steps=200"). Unknown keys are rejected.
struct RunConfig {
  SyntheticSceneSpec scene;
  ModelConfig model;
  TrainConfig train;
  std::string dataset_dir = "data";
  std::string out_dir = "out";
  std::string checkpoint;  // prefix; empty means <out_dir>/ckpt_final
  std::uint64_t data_seed = 1;
  int mesh_resolution = 96;
  std::size_t mesh_frame = 0;
  std::size_t eval_points = 20000;
  std::size_t eval_frame_stride = 6;  // chamfer/normal frames: every k-th
};

// Parses the optional JSON file, then applies "a.b.c=value" overrides.
RunConfig parse_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides);

// Full config as JSON text; feeding it back through parse_run_config yields
// an equivalent config.
std::string print_config(const RunConfig& cfg);

// Subcommand bodies. They throw on failure; the binary maps exception types
// to exit codes (2 config, 3 data/checkpoint, 4 check failure).
void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_render(const RunConfig& cfg);
void cmd_segment(const RunConfig& cfg);
void cmd_extract_mesh(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
// Returns false when a gradient check fails (exit 4).
bool cmd_gradcheck(const RunConfig& cfg);

}  // namespace recon
