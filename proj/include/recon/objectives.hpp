#pragma once

#include <string>
#include <vector>

#include "recon/render.hpp"

namespace recon {

class ObjectiveError : public std::runtime_error {
 public:
  explicit ObjectiveError(const std::string& msg) : std::runtime_error(msg) {}
};

struct LossWeights {
  double dec = 1.0;     // weight of the decomposition pair (bce + sparse)
  double bce = 0.01;
  double sparse = 0.1;
  double eik = 0.1;
  void validate() const;  // non-negative and finite
};

// Per-ray off-subject flags, aligned with PreparedBatch::order rows.
struct RayClassification {
  std::vector<bool> off;
  std::size_t off_count = 0;
  std::size_t total = 0;
};

// A ray is off-subject iff it has no inner samples or its minimum canonical
// signed distance exceeds epsilon. Recomputed from the current field every
// step (the min-SDF values are frozen into the batch at prepare time).
RayClassification classify_off_rays(const PreparedBatch& batch, double epsilon);

// Loose-to-tight epsilon: linear from eps_start to eps_end over the first
// half of training, then constant.
double epsilon_schedule(int step, int total_steps, double eps_start = 0.2,
                        double eps_end = 0.05);

// Mean over rays of the summed per-channel absolute error. gt rows must
// follow the same order as `color`.
Var loss_rgb(Var color, const Tensor& gt);

// Mean |alpha| over off-subject rays; zero (with a warning tick) if none.
Var loss_sparse(Var alpha, const RayClassification& cls,
                std::size_t* empty_warnings = nullptr);

// Mean binary entropy of ray opacity, clamped away from {0,1}.
Var loss_bce(Var alpha, double clamp_eps = 1e-7);

struct EikonalSpec {
  std::size_t count = 128;    // total points; half uniform, half near-surface
  double box = 1.0;           // canonical sampling half-extent
  double surface_sigma = 0.05;
  int projection_steps = 2;   // Newton steps toward the zero level set
};

// Draws canonical sample points for the eikonal term (off-tape, frozen).
Tensor sample_eikonal_points(const HumanShapeField& shape, const ParamStore& params,
                             const std::vector<double>& theta, const EikonalSpec& spec,
                             Rng& rng);

// E[(|grad f| - 1)^2] at the given canonical points, conditioned on the pose
// variable so the pose also receives a gradient.
Var loss_eikonal(Tape& tape, const VarMap& vars, const HumanShapeField& shape,
                 Var pose, const Tensor& points);

struct LossReport {
  int step = 0;
  double rgb = 0, eik = 0, sparse = 0, bce = 0, total = 0;
  std::size_t rays_total = 0, rays_off = 0;
  std::size_t off_empty_warnings = 0;
  double epsilon = 0, alpha = 0, beta = 0;
};

struct StepLoss {
  Var total;
  RenderOut render;
  RayClassification cls;
  LossReport report;
};

// Renders a prepared batch and assembles
//   total = rgb + dec*(bce*L_bce + sparse*L_sparse) + eik*L_eik.
// gt: [R,3] ground-truth colors following batch.order. When
// fixed_eik_points is given the internal sampling is skipped; finite-
// difference harnesses need this because sampling is stop-gradient.
StepLoss total_loss(Tape& tape, const VarMap& vars, const Renderer& renderer,
                    const PreparedBatch& batch, const Tensor& gt, const ParamStore& params,
                    const LossWeights& weights, double epsilon, const EikonalSpec& eik_spec,
                    Rng& rng, bool mean_latent = false,
                    const Tensor* fixed_eik_points = nullptr);

// Appends a CSV row (writing a header first when the file is new).
void append_loss_csv(const std::string& path, const LossReport& report);

}  // namespace recon
