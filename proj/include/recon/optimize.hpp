#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "recon/io.hpp"
#include "recon/objectives.hpp"
#include "recon/synthetic.hpp"

namespace recon {

class OptimizeError : public std::runtime_error {
 public:
  explicit OptimizeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double lr_field = 5e-4;
  double lr_pose = 1e-4;
  double lr_latent = 5e-4;

  double lr_for(const std::string& name) const;
};

// Bias-corrected adaptive-moment update with per-name learning rates.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int step_count() const { return t_; }

  // Applies one update from the grad slots; throws OptimizeError naming the
  // parameter on a non-finite gradient. lr_scale multiplies every rate.
  void step(ParamStore& params, double lr_scale = 1.0);

  void save(Checkpoint& ckpt, const ParamStore& params) const;
  void load(const Checkpoint& ckpt, const ParamStore& params);

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

struct ModelConfig {
  ShapeFieldConfig shape;
  TextureFieldConfig tex;
  BackgroundFieldConfig bg;
  double init_radius = 0.3;
  int geo_init_steps = 2500;
};

struct TrainConfig {
  int steps = 5000;
  std::size_t frames_per_batch = 2;
  std::size_t rays_per_batch = 256;  // total across the batch frames
  AdamConfig adam;
  LossWeights weights;
  double eps_start = 0.2, eps_end = 0.05;
  EikonalSpec eikonal;
  RenderConfig render;
  std::uint64_t seed = 1;
  bool optimize_poses = true;
  bool use_noisy_poses = false;  // initialize poses from the noisy annotations
  bool cosine_lr = false;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;       // empty: keep everything in memory

  void validate() const;
};

struct TrainState {
  Skeleton skeleton;
  HumanShapeField shape;
  HumanTextureField tex;
  BackgroundField bg;
  ParamStore params;
  Adam adam;
  int step = 0;
  Rng rng;
  ModelConfig model;
};

// Builds fields sized to the dataset (pose dims, frame latents), runs the
// sphere fit on the shape net, and seeds per-frame poses from the dataset.
TrainState build_state(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc);

Renderer make_renderer(const TrainState& state, const RenderConfig& rc);

// One optimization step: samples frames and pixels, renders, backpropagates,
// and updates every parameter. Returns the aggregated loss report.
LossReport train_step(TrainState& state, const Dataset& ds, const TrainConfig& tc,
                      const Renderer& ren);

// Full loop; appends to <out_dir>/loss.csv and writes checkpoints when
// configured. Returns the per-step reports.
std::vector<LossReport> train(TrainState& state, const Dataset& ds, const TrainConfig& tc);

// Checkpoints carry parameters, optimizer moments, step count, and RNG state,
// so a resumed run continues bitwise-identically.
void save_train_checkpoint(const std::string& prefix, const TrainState& state);
void load_train_checkpoint(const std::string& prefix, TrainState& state);

struct PoseErrorRow {
  std::size_t frame = 0;
  double angle_before_deg = 0.0, angle_after_deg = 0.0;
  double trans_before = 0.0, trans_after = 0.0;
};

// Per-frame pose error against the dataset's ground truth: mean geodesic
// joint-rotation error (degrees) and root-translation distance, for the
// initial (noisy) and current (trained) poses.
std::vector<PoseErrorRow> refine_poses_report(const TrainState& state, const Dataset& ds);

}  // namespace recon
