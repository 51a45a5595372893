#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recon/body.hpp"
#include "recon/fields.hpp"
#include "recon/image.hpp"
#include "recon/params.hpp"
#include "recon/rng.hpp"

namespace recon {

class RenderError : public std::runtime_error {
 public:
  explicit RenderError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  std::size_t width = 0, height = 0;
  Mat4 world_to_camera = Mat4::identity();

  void validate() const;  // throws RenderError
  Vec3 center() const;    // camera origin in world space
};

struct Ray {
  Vec3 o, d;  // d unit-norm
};

// Rays through pixel centers (px + 0.5, py + 0.5) in world space.
std::vector<Ray> generate_rays(const Camera& cam,
                               const std::vector<std::pair<int, int>>& pixels);
Ray pixel_ray(const Camera& cam, double u, double v);  // image-plane coords

// Entry/exit depths of the unit sphere centered at the origin, clipped to
// t >= 0. Empty when the forward ray misses the sphere.
std::optional<std::pair<double, double>> unit_sphere_interval(const Ray& ray);

struct SampleConfig {
  std::size_t n_uniform = 32;
  std::size_t n_importance = 32;
  // The outer integrand is sampled at equispaced inverse depths without
  // importance refinement, so it needs more points than the inner stages to
  // stay within the dense-reference tolerance.
  std::size_t n_outer = 64;
  // Fraction of uniform mass mixed into the stage-1 weights before the
  // inverse-CDF draw, so zero-density regions stay reachable.
  double importance_floor = 0.01;
};

// Pose parameter naming shared by render/objectives/optimize.
std::string pose_param_name(std::size_t frame);

// ---- quadrature (tape-side) -------------------------------------------------

struct Integrated {
  Var color;  // [R,3]
  Var alpha;  // [R,1] = sum of tau per ray
  Var tau;    // [R,N]
};
// densities: [R*N,1]; colors: [R*N,3]; deltas: [R,N] constants, all > 0.
Integrated integrate_samples(Tape& tape, Var densities, Var colors, const Tensor& deltas);

// C = C^H + (1 - alpha) * C^B.
Var composite(Var c_h, Var alpha, Var c_b);

Var normalize_rows(Tape& tape, Var x, double eps = 1e-12);

// ---- full pipeline ------------------------------------------------------------

struct PreparedRay {
  Ray ray;
  bool hit = false;
  double t_enter = 0.0, t_exit = 0.0;
  std::vector<double> depths;   // N inner depths, strictly increasing
  std::vector<double> deltas;   // N inner intervals
  Tensor x_d;                   // [N,3] deformed sample points
  Tensor w_d;                   // [N,n_b] frozen skinning weights
  double min_sdf = 0.0;         // min signed distance over inner samples
  std::vector<double> outer_r;  // M radii, increasing
  Tensor outer_q;               // [M,4] inverted-sphere quadruples
  std::vector<double> outer_deltas;  // M intervals in r-space (last is huge)
};

struct PreparedBatch {
  std::vector<PreparedRay> rays;       // in original order
  std::vector<std::size_t> order;      // hit rays first, then misses
  std::size_t hit_count = 0;
  std::size_t frame = 0;

  // assembled tensors, rows following `order`
  Tensor inner_x_d;     // [H*N,3]
  Tensor inner_w_d;     // [H*N,n_b]
  Tensor inner_deltas;  // [H,N]
  Tensor outer_q_hit;   // [H*M,4]
  Tensor outer_q_miss;  // [(R-H)*M,4]
  Tensor outer_deltas_hit;   // [H,M]
  Tensor outer_deltas_miss;  // [R-H,M]
  Tensor view_hit;      // [H*M,3]
  Tensor view_miss;     // [(R-H)*M,3]
  std::vector<double> min_sdf;  // per hit ray, order-aligned
};

struct RenderOut {
  Var color;   // [R,3], rows follow PreparedBatch::order
  Var alpha;   // [R,1]
  Var c_h;     // [H,3]
  Var c_b;     // [R,3]
  Var tau;     // [H,N]
  Var inner_sdf;    // [H*N,1]
  Var inner_grad;   // [H*N,3] canonical-space gradient
  Var inner_x_c;    // [H*N,3]
};

struct RenderConfig {
  SampleConfig samples;
  double mask_threshold = 0.5;
  std::size_t tile_rays = 1024;
};

class Renderer {
 public:
  Renderer(const Skeleton* skel, const HumanShapeField* shape, const HumanTextureField* tex,
           const BackgroundField* bg, RenderConfig cfg)
      : skel_(skel), shape_(shape), tex_(tex), bg_(bg), cfg_(cfg) {}

  const RenderConfig& config() const { return cfg_; }
  const Skeleton& skeleton() const { return *skel_; }
  const HumanShapeField& shape() const { return *shape_; }
  const HumanTextureField& texture() const { return *tex_; }
  const BackgroundField& background() const { return *bg_; }

  // Snapshot of the per-frame quantities sampling depends on. Uses the zero
  // pose when the frame has no pose parameter.
  struct FrameState {
    std::vector<Mat4> bones;
    std::vector<Vec3> posed_proxies;
    std::vector<double> theta;
    double alpha = 0.0, beta = 0.0;
  };
  FrameState frame_state(const ParamStore& params, std::size_t frame) const;

  // Off-tape sampling pass at the current parameter values. Sampling is
  // stop-gradient: sample positions and skinning weights enter the tape as
  // constants.
  PreparedRay prepare_ray(const Ray& ray, const ParamStore& params, const FrameState& fs,
                          Rng& rng) const;
  PreparedBatch assemble(std::vector<PreparedRay> rays, std::size_t frame) const;
  PreparedBatch prepare(const std::vector<Ray>& rays, const ParamStore& params,
                        std::size_t frame, Rng& rng) const;

  // Differentiable pass over a prepared batch.
  RenderOut run(Tape& tape, const VarMap& vars, const PreparedBatch& batch,
                bool mean_latent = false) const;

  struct ImagePair {
    Image rgb;      // [H,W,3]
    Image opacity;  // [H,W,1]
  };
  // Deterministic given (seed, pixel): each ray draws from its own stream, so
  // the tile schedule cannot change the result.
  ImagePair render_image(const ParamStore& params, const Camera& cam, std::size_t frame,
                         std::uint64_t seed, bool mean_latent = false) const;

 private:
  const Skeleton* skel_;
  const HumanShapeField* shape_;
  const HumanTextureField* tex_;
  const BackgroundField* bg_;
  RenderConfig cfg_;
};

Image render_mask(const Image& opacity, double threshold = 0.5);

}  // namespace recon
