#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "recon/geom.hpp"
#include "recon/params.hpp"
#include "recon/rng.hpp"
#include "recon/tape.hpp"

namespace recon {

class FieldError : public std::runtime_error {
 public:
  explicit FieldError(const std::string& msg) : std::runtime_error(msg) {}
};

using VarMap = std::unordered_map<std::string, Var>;

// Positional encoding: x -> (x, sin(2^k pi x), cos(2^k pi x)) for k < octaves.
struct FrequencyEncoding {
  int octaves = 6;

  std::size_t out_dim(std::size_t in_dim) const {
    return in_dim * (2 * static_cast<std::size_t>(octaves) + 1);
  }
  Tensor encode(const Tensor& x) const;
  Var encode(Tape& tape, Var x) const;
  // Directional derivative of the encoding along a constant direction field
  // `dir` ([N,D], one direction per row). Built from tape ops so the result
  // stays differentiable.
  Var encode_tangent(Tape& tape, Var x, const Tensor& dir) const;
};

struct MlpConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 128;
  int hidden_layers = 4;
  std::size_t out_dim = 1;
  double sharpness = 100.0;  // softplus sharpness of hidden activations
};

// Fully-connected net whose parameters live in a ParamStore under
// "<prefix>/W<l>" / "<prefix>/b<l>".
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {}

  const MlpConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;

  void init_params(ParamStore& store, Rng& rng) const;

  struct Trace {
    std::vector<Var> pre;   // hidden pre-activations
    Var out;
  };
  Trace forward_trace(Tape& tape, const VarMap& vars, Var x) const;
  Var forward(Tape& tape, const VarMap& vars, Var x) const;

  // Activation derivatives of a trace; reusable across tangent directions.
  std::vector<Var> activation_derivatives(Tape& tape, const Trace& trace) const;
  // Forward-mode pass: propagates an input tangent through the trace.
  Var tangent(Tape& tape, const VarMap& vars, const Trace& trace,
              const std::vector<Var>& dact, Var x_tangent) const;

 private:
  MlpConfig cfg_;
  std::string prefix_;
};

struct ShapeFieldConfig {
  std::size_t hidden = 128;
  int hidden_layers = 4;
  int encoding_octaves = 6;
  std::size_t d_z = 64;
  std::size_t pose_dim = 0;
  double sharpness = 100.0;
};

// Canonical shape field: encoded x_c and the pose vector map to a signed
// distance plus a geometry feature.
class HumanShapeField {
 public:
  HumanShapeField() = default;
  HumanShapeField(ShapeFieldConfig cfg, std::string prefix = "sdf");

  const ShapeFieldConfig& config() const { return cfg_; }
  const Mlp& mlp() const { return mlp_; }
  const FrequencyEncoding& encoding() const { return enc_; }

  void init_params(ParamStore& store, Rng& rng) const { mlp_.init_params(store, rng); }

  struct Eval {
    Var sdf;  // [N,1]
    Var z;    // [N,d_z]
  };
  Eval eval(Tape& tape, const VarMap& vars, Var x_c, Var theta_rows) const;

  struct EvalGrad {
    Var sdf;
    Var z;
    Var grad;  // [N,3] spatial gradient w.r.t. x_c
  };
  EvalGrad eval_with_grad(Tape& tape, const VarMap& vars, Var x_c, Var theta_rows) const;

 private:
  ShapeFieldConfig cfg_;
  FrequencyEncoding enc_;
  Mlp mlp_;
};

// Convenience probes for code that is not on a training tape.
Tensor eval_sdf_batch(const HumanShapeField& field, const ParamStore& store,
                      const Tensor& pts, const std::vector<double>& theta);
// (sdf [N,1], spatial gradient [N,3]) off-tape probe.
std::pair<Tensor, Tensor> eval_sdf_with_grad_batch(const HumanShapeField& field,
                                                   const ParamStore& store, const Tensor& pts,
                                                   const std::vector<double>& theta);
double eval_sdf_value(const HumanShapeField& field, const ParamStore& store, const Vec3& x,
                      const std::vector<double>& theta);
Vec3 eval_sdf_gradient_value(const HumanShapeField& field, const ParamStore& store,
                             const Vec3& x, const std::vector<double>& theta);

struct TextureFieldConfig {
  std::size_t hidden = 128;
  int hidden_layers = 3;
  std::size_t d_z = 64;
  std::size_t pose_dim = 0;
  double sharpness = 100.0;
};

// Canonical texture field: (x_c, deformed normal, pose, geometry feature) -> RGB.
class HumanTextureField {
 public:
  HumanTextureField() = default;
  HumanTextureField(TextureFieldConfig cfg, std::string prefix = "tex");

  const TextureFieldConfig& config() const { return cfg_; }
  const Mlp& mlp() const { return mlp_; }
  void init_params(ParamStore& store, Rng& rng) const { mlp_.init_params(store, rng); }

  // All inputs [N,*]; returns RGB in (0,1)^3 as [N,3].
  Var eval(Tape& tape, const VarMap& vars, Var x_c, Var n_d, Var theta_rows, Var z) const;

 private:
  TextureFieldConfig cfg_;
  Mlp mlp_;
};

struct BackgroundFieldConfig {
  std::size_t hidden = 128;
  int hidden_layers = 4;
  int pos_octaves = 10;
  int dir_octaves = 4;
  std::size_t latent_dim = 8;
  std::size_t num_frames = 0;
  double sharpness = 100.0;
};

// Outer-volume field over inverted-sphere coordinates, conditioned on a
// per-frame latent.
class BackgroundField {
 public:
  BackgroundField() = default;
  BackgroundField(BackgroundFieldConfig cfg, std::string prefix = "bg");

  const BackgroundFieldConfig& config() const { return cfg_; }
  const Mlp& mlp() const { return mlp_; }
  static std::string latent_name(const std::string& prefix, std::size_t frame);
  std::string latent_name(std::size_t frame) const { return latent_name(prefix_, frame); }

  void init_params(ParamStore& store, Rng& rng) const;

  // Latent for one frame repeated to N rows; throws FieldError for an
  // untrained frame index.
  Var latent_rows(Tape& tape, const VarMap& vars, std::size_t frame, std::size_t n) const;
  // Average of all trained latents, for held-out frames.
  Var mean_latent_rows(Tape& tape, const VarMap& vars, std::size_t n) const;

  struct Eval {
    Var sigma;  // [N,1], non-negative
    Var rgb;    // [N,3] in (0,1)
  };
  // xq: [N,4] inverted-sphere quadruples; v: [N,3] view directions.
  Eval eval(Tape& tape, const VarMap& vars, Var xq, Var v, Var latent_rows) const;

 private:
  BackgroundFieldConfig cfg_;
  std::string prefix_;
  Mlp mlp_;
};

// Learnable positive density scale/sharpness, stored as log-values under
// "density/log_alpha" and "density/log_beta".
struct DensityParams {
  static void init_params(ParamStore& store, double alpha0 = 50.0, double beta0 = 0.05);
  struct Vals {
    Var alpha;
    Var beta;
  };
  static Vals attach(const VarMap& vars);
  // sigma = alpha * LaplaceCDF(-sdf; beta), elementwise over [N,1].
  static Var density(Tape& tape, Var sdf, const Vals& vals);
};

double density_from_sdf(double alpha, double beta, double sdf);

// (unit direction, 1/r) for a point in the outer volume; r must be >= 1.
std::array<double, 4> invert_sphere(const Vec3& x_b, const Vec3& origin = Vec3{});

// Initializes the shape net and fits it to the analytic sphere ||x|| - radius
// over the canonical box. Deterministic given the seed.
void geometric_init(const HumanShapeField& field, ParamStore& store, double radius,
                    std::uint64_t seed = 1, int steps = 2500, std::size_t batch = 256);

}  // namespace recon
