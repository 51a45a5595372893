#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "recon/geom.hpp"
#include "recon/tape.hpp"

namespace recon {

class BodyError : public std::runtime_error {
 public:
  explicit BodyError(const std::string& msg, double det = 0.0)
      : std::runtime_error(msg), determinant(det) {}
  double determinant;
};

struct Capsule {
  Vec3 a, b;       // segment endpoints in canonical space; `a` is the joint end
  double radius = 0.1;
};

// Articulated capsule skeleton. Bone 0 is the root; proxy points sampled on
// the capsule surfaces carry canonical skinning weights and stand in for the
// vertices of a parametric body model.
struct Skeleton {
  struct ProxyPoint {
    Vec3 pos;                  // canonical position
    std::vector<double> w;     // convex weights over bones
  };

  std::vector<int> parent;     // parent[0] == -1
  std::vector<Vec3> rest_joint;
  std::vector<Capsule> capsules;
  std::vector<ProxyPoint> proxies;

  std::size_t bone_count() const { return parent.size(); }
  std::size_t pose_dim() const { return 3 * bone_count() + 3; }
};

// Pose vector: axis-angle per bone (3 scalars each) followed by the root
// translation (3 scalars).
using PoseParams = std::vector<double>;

PoseParams zero_pose(const Skeleton& skel);

// Default articulated figure: torso root, two arms, two legs.
Skeleton make_humanoid_skeleton(int proxies_per_bone = 200, std::uint64_t seed = 1,
                                double scale = 1.0);

// Forward kinematics: canonical-to-deformed transform per bone.
std::vector<Mat4> bone_transforms(const Skeleton& skel, const PoseParams& pose);

std::vector<Vec3> pose_proxies(const Skeleton& skel, const std::vector<Mat4>& transforms);

enum class QuerySpace { Canonical, Deformed };

// Inverse-distance weighted average over the K nearest proxy points.
// In deformed space, `posed_proxies` must hold the proxies mapped by the
// current bone transforms.
std::vector<double> skinning_weights(const Skeleton& skel, const Vec3& x, QuerySpace space,
                                     const std::vector<Vec3>* posed_proxies = nullptr,
                                     int k = 4);

Vec3 forward_lbs(const Vec3& x_c, const std::vector<double>& w_c,
                 const std::vector<Mat4>& transforms);

struct InverseLbsResult {
  Vec3 x_c;
  std::vector<double> w_d;
  Mat4 blended_inverse;
  double determinant = 0.0;
};

InverseLbsResult inverse_lbs(const Vec3& x_d, const Skeleton& skel,
                             const std::vector<Mat4>& transforms,
                             const std::vector<Vec3>& posed_proxies, int k = 4);

struct DeformedNormal {
  Vec3 raw;   // unnormalized
  Vec3 unit;
};

// Chain rule through the blended inverse: n_d = grad_c^T * (sum w B)^-1.
DeformedNormal deformed_normal(const Vec3& sdf_gradient_canonical, const Mat4& blended_inverse);

// ---- tape-side kinematics (differentiable in the pose) ---------------------

// theta: Var holding the full pose vector. Returns [n_b, 16] bone transforms.
Var bone_transforms_tape(Tape& tape, const Skeleton& skel, Var theta);

// Blended inverse transforms for a batch of deformed points with fixed
// (stop-gradient) skinning weights. weights: [N, n_b] constants.
struct WarpVars {
  Var x_c;           // [N,3]
  Var blended_inv;   // [N,16]
};
WarpVars inverse_lbs_tape(Tape& tape, Var bone_mats, const Tensor& weights, const Tensor& x_d);

}  // namespace recon
