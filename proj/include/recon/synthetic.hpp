#pragma once

#include <string>
#include <vector>

#include "recon/body.hpp"
#include "recon/image.hpp"
#include "recon/render.hpp"
#include "recon/tensor.hpp"

namespace recon {

class SyntheticError : public std::runtime_error {
 public:
  explicit SyntheticError(const std::string& msg) : std::runtime_error(msg) {}
};

// Analytic ground-truth scene: articulated capsule figure inside the unit
// sphere, procedural background on a far sphere plus a ground band below the
// unit sphere, camera orbiting inside the sphere.
struct SyntheticSceneSpec {
  int proxies_per_bone = 40;
  std::uint64_t skeleton_seed = 1;
  double figure_scale = 0.5;

  std::size_t frames = 24;
  std::size_t holdout = 2;  // extra held-out cameras, never trained on
  std::size_t width = 96, height = 96;

  double orbit_radius = 0.85;
  double orbit_elevation_deg = 15.0;
  double fov_deg = 70.0;

  double bg_radius = 4.0;
  double ground_y = -1.05;  // ground band sits below the unit sphere

  double illumination_jitter = 0.1;  // applied to the background only
  double pose_noise_deg = 0.0;       // per-joint noise on the published poses
  double smooth_k = 32.0;
  // Unit annotation: the ~0.8-unit figure stands for a 180 cm person.
  double cm_per_unit = 225.0;

  void validate() const;  // throws SyntheticError
};

Skeleton scene_skeleton(const SyntheticSceneSpec& spec);

// Each capsule moves rigidly with its bone.
std::vector<Capsule> posed_capsules(const Skeleton& skel, const PoseParams& pose);

// Smooth-min union of exact capsule distances, and its analytic gradient.
double analytic_sdf(const std::vector<Capsule>& caps, const Vec3& x, double k = 32.0);
Vec3 analytic_sdf_grad(const std::vector<Capsule>& caps, const Vec3& x, double k = 32.0);

// Walking-like sinusoidal limb motion; frame index may exceed spec.frames for
// held-out cameras (motion is periodic over the training frames).
PoseParams walking_pose(const SyntheticSceneSpec& spec, const Skeleton& skel,
                        std::size_t frame);

// 360-degree orbit at fixed elevation; held-out indices land between the
// training azimuths.
Camera orbit_camera(const SyntheticSceneSpec& spec, std::size_t index);

// Procedural background along a ray (far-sphere checker + gradient, ground
// band), scaled by the per-frame illumination.
Vec3 background_color(const SyntheticSceneSpec& spec, const Ray& ray, double illumination);

struct DatasetFrame {
  std::size_t index = 0;
  Camera camera;
  PoseParams pose_true, pose_noisy;
  double illumination = 1.0;
  bool holdout = false;
  Image rgb;    // [H,W,3]
  Image mask;   // [H,W,1], 1 iff the human was hit
  Image depth;  // [H,W,1], ray depth in canonical units; +inf where miss
};

struct Dataset {
  SyntheticSceneSpec spec;
  Skeleton skeleton;
  std::vector<DatasetFrame> frames;  // training frames first, then holdouts
  std::size_t train_count = 0;
};

// Sphere-traces every frame. Deterministic per (spec, seed); throws
// SyntheticError naming the frame if the posed figure leaves the unit sphere.
Dataset generate_dataset(const SyntheticSceneSpec& spec, std::uint64_t seed);

// Directory layout: manifest.json, rgb_%04d.png, mask_%04d.png, depth_%04d.f32.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct OrientedPoints {
  Tensor points;   // [N,3]
  Tensor normals;  // [N,3] unit
};

// Points with |analytic posed sdf| <= 1e-4, normals from the analytic gradient.
OrientedPoints oracle_surface_points(const std::vector<Capsule>& caps, double k,
                                     std::size_t count, std::uint64_t seed);

}  // namespace recon
