#include "recon/objectives.hpp"

#include <cmath>
#include <fstream>

namespace recon {

void LossWeights::validate() const {
  for (double w : {dec, bce, sparse, eik})
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ObjectiveError("loss weights must be non-negative and finite");
}

RayClassification classify_off_rays(const PreparedBatch& batch, double epsilon) {
  if (!(epsilon > 0.0)) throw ObjectiveError("classification epsilon must be positive");
  RayClassification cls;
  cls.total = batch.rays.size();
  cls.off.resize(cls.total);
  for (std::size_t k = 0; k < cls.total; ++k) {
    const bool off = k >= batch.hit_count || batch.min_sdf[k] > epsilon;
    cls.off[k] = off;
    if (off) ++cls.off_count;
  }
  return cls;
}

double epsilon_schedule(int step, int total_steps, double eps_start, double eps_end) {
  const int half = std::max(1, total_steps / 2);
  const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(half));
  return eps_start + (eps_end - eps_start) * u;
}

Var loss_rgb(Var color, const Tensor& gt) {
  if (color.value().rows() != gt.rows() || gt.cols() != 3)
    throw ObjectiveError("loss_rgb: ray count mismatch");
  Var g = color.tape->constant(gt, "gt_rgb");
  return mean_all(row_sum(vabs(sub(color, g))));
}

Var loss_sparse(Var alpha, const RayClassification& cls, std::size_t* empty_warnings) {
  Tape& tape = *alpha.tape;
  if (cls.off_count == 0) {
    if (empty_warnings) ++*empty_warnings;
    return tape.constant(Tensor::scalar(0.0), "sparse_empty");
  }
  Tensor mask({cls.total, 1}, 0.0);
  for (std::size_t k = 0; k < cls.total; ++k)
    if (cls.off[k]) mask(k, 0) = 1.0;
  Var masked = mul(vabs(alpha), tape.constant(mask, "off_mask"));
  return scale(sum_all(masked), 1.0 / static_cast<double>(cls.off_count));
}

Var loss_bce(Var alpha, double clamp_eps) {
  Var a = clampv(alpha, clamp_eps, 1.0 - clamp_eps);
  Var one_minus = offset(neg(a), 1.0);
  Var ent = neg(add(mul(a, vlog(a)), mul(one_minus, vlog(one_minus))));
  return mean_all(ent);
}

Tensor sample_eikonal_points(const HumanShapeField& shape, const ParamStore& params,
                             const std::vector<double>& theta, const EikonalSpec& spec,
                             Rng& rng) {
  const std::size_t n_uni = spec.count / 2;
  const std::size_t n_srf = spec.count - n_uni;
  Tensor pts({spec.count, 3});
  for (std::size_t i = 0; i < n_uni; ++i)
    for (int c = 0; c < 3; ++c) pts(i, c) = rng.uniform(-spec.box, spec.box);

  // Near-surface points: Newton-project uniform candidates toward the zero
  // level set, then perturb. Unconverged candidates stay where they land;
  // the term only needs coverage around the surface, not exact membership.
  Tensor cand({n_srf, 3});
  for (double& v : cand.data) v = rng.uniform(-spec.box, spec.box);
  for (int it = 0; it < spec.projection_steps; ++it) {
    auto [sdf, grad] = eval_sdf_with_grad_batch(shape, params, cand, theta);
    for (std::size_t i = 0; i < n_srf; ++i) {
      const Vec3 g{grad(i, 0), grad(i, 1), grad(i, 2)};
      const double g2 = std::max(g.norm2(), 1e-8);
      for (int c = 0; c < 3; ++c) {
        cand(i, c) -= sdf(i, 0) * g[c] / g2;
        cand(i, c) = std::clamp(cand(i, c), -spec.box, spec.box);
      }
    }
  }
  for (std::size_t i = 0; i < n_srf; ++i)
    for (int c = 0; c < 3; ++c)
      pts(n_uni + i, c) = cand(i, c) + rng.normal(0.0, spec.surface_sigma);
  pts.quantize();
  return pts;
}

Var loss_eikonal(Tape& tape, const VarMap& vars, const HumanShapeField& shape, Var pose,
                 const Tensor& points) {
  Var x = tape.constant(points, "eik_pts");
  Var theta_rows = repeat_rows(pose, points.rows());
  auto ev = shape.eval_with_grad(tape, vars, x, theta_rows);
  Var gnorm = vsqrt(offset(row_sum(mul(ev.grad, ev.grad)), 1e-12));
  Var resid = offset(gnorm, -1.0);
  return mean_all(mul(resid, resid));
}

StepLoss total_loss(Tape& tape, const VarMap& vars, const Renderer& renderer,
                    const PreparedBatch& batch, const Tensor& gt, const ParamStore& params,
                    const LossWeights& weights, double epsilon, const EikonalSpec& eik_spec,
                    Rng& rng, bool mean_latent, const Tensor* fixed_eik_points) {
  weights.validate();
  StepLoss out;
  out.render = renderer.run(tape, vars, batch, mean_latent);
  out.cls = classify_off_rays(batch, epsilon);

  Var rgb = loss_rgb(out.render.color, gt);
  Var bce = loss_bce(out.render.alpha);
  Var sparse = loss_sparse(out.render.alpha, out.cls, &out.report.off_empty_warnings);

  const std::string pname = pose_param_name(batch.frame);
  std::vector<double> theta = params.has(pname) ? params.value(pname).data
                                                : zero_pose(renderer.skeleton());
  Tensor eik_pts = fixed_eik_points
                       ? *fixed_eik_points
                       : sample_eikonal_points(renderer.shape(), params, theta, eik_spec, rng);
  Var pose = vars.count(pname) ? vars.at(pname)
                               : tape.constant(Tensor::from_vector(theta), "pose_fixed");
  Var eik = loss_eikonal(tape, vars, renderer.shape(), pose, eik_pts);

  Var dec = add(scale(bce, weights.bce), scale(sparse, weights.sparse));
  out.total = add(rgb, add(scale(dec, weights.dec), scale(eik, weights.eik)));

  out.report.rgb = rgb.value()[0];
  out.report.bce = bce.value()[0];
  out.report.sparse = sparse.value()[0];
  out.report.eik = eik.value()[0];
  out.report.total = out.total.value()[0];
  out.report.rays_total = out.cls.total;
  out.report.rays_off = out.cls.off_count;
  out.report.epsilon = epsilon;
  out.report.alpha = std::exp(params.value("density/log_alpha")[0]);
  out.report.beta = std::exp(params.value("density/log_beta")[0]);
  return out;
}

void append_loss_csv(const std::string& path, const LossReport& r) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream f(path, std::ios::app);
  if (!f) throw ObjectiveError("cannot open loss log: " + path);
  if (fresh)
    f << "step,rgb,eik,sparse,bce,total,rays,rays_off,off_empty_warnings,epsilon,alpha,beta\n";
  f.precision(17);
  f << r.step << ',' << r.rgb << ',' << r.eik << ',' << r.sparse << ',' << r.bce << ','
    << r.total << ',' << r.rays_total << ',' << r.rays_off << ',' << r.off_empty_warnings
    << ',' << r.epsilon << ',' << r.alpha << ',' << r.beta << '\n';
}

}  // namespace recon
