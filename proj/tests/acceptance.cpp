// Acceptance gate. Each criterion prints one PASS/FAIL line; the process
// exits non-zero if any requested criterion fails.
//
//   acceptance c1       gradient correctness (finite differences, f64 + f32)
//   acceptance c2       quadrature vs 10x-dense reference
//   acceptance c3c4c5   end-to-end recovery + decomposition/pose ablations
//   acceptance c6       module invariant property suites
//   acceptance c7       bitwise-deterministic loss log
#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "recon/config.hpp"
#include "recon/evalmesh.hpp"
#include "recon/objectives.hpp"
#include "recon/optimize.hpp"
#include "recon/synthetic.hpp"

using namespace recon;

namespace {

// ---- pinned tolerances ------------------------------------------------------

constexpr double kGradTol64 = 1e-5;
constexpr double kGradTol32 = 1e-3;
constexpr double kQuadTol = 1e-2;
constexpr double kIouMin = 0.95;
constexpr double kChamferMax = 0.05;
constexpr double kNormalMin = 0.85;
constexpr double kPsnrMin = 22.0;
constexpr double kBimodalFactor = 2.0;

bool g_all_pass = true;

void report(const char* tag, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", tag, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) g_all_pass = false;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---- shared configuration ---------------------------------------------------

// Default synthetic scene: F=24 training frames, 2 holdouts, 96x96.
SyntheticSceneSpec scene_default() { return SyntheticSceneSpec{}; }

// Model sized so one optimization step stays fast on a single core while the
// fields remain expressive enough for the recovery thresholds.
ModelConfig model_main() {
  ModelConfig mc;
  mc.shape.hidden = 48;
  mc.shape.hidden_layers = 3;
  mc.shape.encoding_octaves = 6;
  mc.shape.d_z = 16;
  mc.tex.hidden = 48;
  mc.tex.hidden_layers = 2;
  mc.bg.hidden = 48;
  mc.bg.hidden_layers = 2;
  mc.bg.pos_octaves = 6;
  mc.bg.dir_octaves = 2;
  mc.bg.latent_dim = 4;
  return mc;
}

TrainConfig train_main(int steps) {
  TrainConfig tc;
  tc.steps = steps;
  tc.rays_per_batch = 128;
  tc.eikonal.count = 64;
  tc.render.samples = {12, 12, 8, 0.01};
  tc.cosine_lr = true;
  tc.seed = 1;
  return tc;
}

// Small model/scene for property suites that only need functioning fields.
ModelConfig model_tiny() {
  ModelConfig mc;
  mc.shape.hidden = 24;
  mc.shape.hidden_layers = 2;
  mc.shape.encoding_octaves = 3;
  mc.shape.d_z = 4;
  mc.tex.hidden = 16;
  mc.tex.hidden_layers = 1;
  mc.bg.hidden = 16;
  mc.bg.hidden_layers = 1;
  mc.bg.pos_octaves = 2;
  mc.bg.dir_octaves = 1;
  mc.bg.latent_dim = 2;
  mc.geo_init_steps = 300;
  return mc;
}

SyntheticSceneSpec scene_tiny() {
  SyntheticSceneSpec s;
  s.frames = 2;
  s.holdout = 1;
  s.width = 32;
  s.height = 32;
  return s;
}

std::size_t find_param(const ParamStore& ps, const std::string& name) {
  for (std::size_t i = 0; i < ps.entries().size(); ++i)
    if (ps.entries()[i].name == name) return i;
  throw std::runtime_error("missing parameter " + name);
}

using Subset = std::vector<std::pair<std::size_t, std::size_t>>;

// `count` random (parameter, offset) picks among parameters with the prefix.
void pick_from_prefix(const ParamStore& ps, const std::string& prefix, std::size_t count,
                      Rng& rng, Subset& out) {
  std::vector<std::size_t> idxs;
  for (std::size_t i = 0; i < ps.entries().size(); ++i)
    if (ps.entries()[i].name.rfind(prefix, 0) == 0) idxs.push_back(i);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t p = idxs[rng.index(idxs.size())];
    out.emplace_back(p, rng.index(ps.entries()[p].value.size()));
  }
}

// ---- criterion 1: gradient correctness ---------------------------------------

struct MicroBatch {
  PreparedBatch batch0, batch1;
  Tensor gt0, gt1;
  Tensor eik_pts;
};

Tensor gather_gt(const DatasetFrame& fr, const std::vector<std::pair<int, int>>& pixels,
                 const PreparedBatch& batch) {
  Tensor gt({pixels.size(), 3});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    for (int c = 0; c < 3; ++c)
      gt(i, c) = fr.rgb.at(pixels[batch.order[i]].second, pixels[batch.order[i]].first, c);
  return gt;
}

MicroBatch make_micro_batch(const Renderer& ren, const TrainState& st, const Dataset& ds,
                            const EikonalSpec& espec) {
  // one subject-facing pixel and one background corner per frame (4 rays over
  // 2 frames total), so the sparseness term sees both ray classes
  const std::vector<std::pair<int, int>> px = {{48, 44}, {2, 2}};
  MicroBatch mb;
  Rng r0(11), r1(12);
  mb.batch0 = ren.prepare(generate_rays(ds.frames[0].camera, px), st.params, 0, r0);
  mb.batch1 = ren.prepare(generate_rays(ds.frames[1].camera, px), st.params, 1, r1);
  mb.gt0 = gather_gt(ds.frames[0], px, mb.batch0);
  mb.gt1 = gather_gt(ds.frames[1], px, mb.batch1);
  Rng er(13);
  mb.eik_pts = sample_eikonal_points(st.shape, st.params,
                                     st.params.value(pose_param_name(0)).data, espec, er);
  return mb;
}

enum class Term { Rgb, Sparse, Bce, Eik, Full };

double eval_term(Term term, const Renderer& ren, const HumanShapeField& shape,
                 const MicroBatch& mb, const LossWeights& weights, const EikonalSpec& espec,
                 ParamStore& ps, bool want_grad) {
  Tape tape;
  auto vars = ps.attach(tape);
  Var out;
  if (term == Term::Eik) {
    out = loss_eikonal(tape, vars, shape, vars.at(pose_param_name(0)), mb.eik_pts);
  } else if (term == Term::Full) {
    Rng rng(1);
    auto s0 = total_loss(tape, vars, ren, mb.batch0, mb.gt0, ps, weights, 0.1, espec, rng,
                         false, &mb.eik_pts);
    auto s1 = total_loss(tape, vars, ren, mb.batch1, mb.gt1, ps, weights, 0.1, espec, rng,
                         false, &mb.eik_pts);
    out = scale(add(s0.total, s1.total), 0.5);
  } else {
    RenderOut ro = ren.run(tape, vars, mb.batch0, false);
    if (term == Term::Rgb) out = loss_rgb(ro.color, mb.gt0);
    if (term == Term::Bce) out = loss_bce(ro.alpha);
    if (term == Term::Sparse) {
      auto cls = classify_off_rays(mb.batch0, 0.1);
      out = loss_sparse(ro.alpha, cls);
    }
  }
  if (want_grad) {
    tape.backward(out);
    ps.pull_grads(tape, vars);
  }
  return out.value()[0];
}

bool run_c1() {
  SyntheticSceneSpec spec = scene_default();
  spec.frames = 2;
  spec.holdout = 0;
  Dataset ds = generate_dataset(spec, 21);
  TrainConfig tc = train_main(100);
  TrainState st = build_state(ds, model_main(), tc);
  Renderer ren = make_renderer(st, tc.render);
  EikonalSpec espec = tc.eikonal;
  espec.count = 32;
  MicroBatch mb = make_micro_batch(ren, st, ds, espec);
  // the corner ray must classify as off-subject so the sparseness term is live
  const auto cls0 = classify_off_rays(mb.batch0, 0.1);
  if (mb.batch0.hit_count == 0 || cls0.off_count == 0 ||
      cls0.off_count == cls0.total) {
    report("c1 gradient correctness", false, "micro-batch lacks both ray classes");
    return false;
  }

  Subset subset;
  Rng pick(31);
  for (const char* prefix : {"sdf/", "tex/", "bg/"})
    pick_from_prefix(st.params, prefix, 64, pick, subset);
  subset.emplace_back(find_param(st.params, "density/log_alpha"), 0);
  subset.emplace_back(find_param(st.params, "density/log_beta"), 0);
  subset.emplace_back(find_param(st.params, pose_param_name(0)), pick.index(6));
  subset.emplace_back(find_param(st.params, BackgroundField::latent_name("bg", 0)), 0);

  const LossWeights weights;
  const Term terms[] = {Term::Rgb, Term::Sparse, Term::Bce, Term::Eik, Term::Full};
  const char* term_names[] = {"rgb", "sparse", "bce", "eikonal", "full"};

  bool pass = true;
  double worst64 = 0.0, worst32 = 0.0;
  for (int prec = 0; prec < 2; ++prec) {
    GradCheckOptions opts;
    opts.subset = subset;
    opts.step = 5e-7;
    opts.tolerance = prec == 0 ? kGradTol64 : kGradTol32;
    for (int t = 0; t < 5; ++t) {
      // A pure-f32 difference quotient only measures roundoff (noise floor
      // ~eps32*|f|/h for any usable h against the sharpness-100 activations),
      // so the 32-bit pass computes the analytic gradients in f32 and checks
      // them against the f64 central differences. The value handed back to
      // the harness is always the f64 one so its determinism probe holds.
      auto f = [&](ParamStore& ps, bool want_grad) {
        if (want_grad && prec == 1) {
          set_default_precision(Precision::F32);
          eval_term(terms[t], ren, st.shape, mb, weights, espec, ps, true);
          set_default_precision(Precision::F64);
          return eval_term(terms[t], ren, st.shape, mb, weights, espec, ps, false);
        }
        return eval_term(terms[t], ren, st.shape, mb, weights, espec, ps, want_grad);
      };
      const GradCheckReport rep = finite_difference_check(f, st.params, opts);
      (prec == 0 ? worst64 : worst32) =
          std::max(prec == 0 ? worst64 : worst32, rep.max_rel_error);
      if (!rep.pass) {
        pass = false;
        std::printf("  term %s at %s: max rel %.3e\n", term_names[t],
                    prec == 0 ? "f64" : "f32", rep.max_rel_error);
      }
    }
  }
  set_default_precision(Precision::F64);
  report("c1 gradient correctness", pass,
         fmt("max rel error f64 %.3e (tol %.0e), f32 %.3e (tol %.0e); %zu params/term",
             worst64, kGradTol64, worst32, kGradTol32, subset.size()));
  return pass;
}

// ---- criterion 2: quadrature vs dense reference -------------------------------

bool run_c2() {
  SyntheticSceneSpec spec = scene_tiny();
  Dataset ds = generate_dataset(spec, 22);
  TrainConfig tc = train_main(100);
  tc.render = RenderConfig{};  // default sampling configuration
  TrainState st = build_state(ds, model_main(), tc);
  Renderer base = make_renderer(st, tc.render);
  RenderConfig dense_rc = tc.render;
  dense_rc.samples.n_uniform *= 10;
  dense_rc.samples.n_importance *= 10;
  dense_rc.samples.n_outer *= 10;
  Renderer dense = make_renderer(st, dense_rc);

  Rng rng(41);
  double worst_c = 0.0, worst_b = 0.0;
  const std::size_t total = 1000, chunk = 50;
  for (std::size_t start = 0; start < total; start += chunk) {
    std::vector<Ray> rays;
    for (std::size_t i = 0; i < chunk; ++i) {
      const Camera& cam = ds.frames[rng.index(2)].camera;
      rays.push_back(pixel_ray(cam, rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height)));
    }
    Rng ra(100 + start), rb(200 + start);
    PreparedBatch pa = base.prepare(rays, st.params, 0, ra);
    PreparedBatch pb = dense.prepare(rays, st.params, 0, rb);

    Tape ta, tb;
    auto va = st.params.attach(ta);
    auto vb = st.params.attach(tb);
    RenderOut oa = base.run(ta, va, pa, false);
    RenderOut ob = dense.run(tb, vb, pb, false);

    // rows follow hit-first order; geometric hit classification is identical
    std::vector<std::size_t> inv_a(chunk), inv_b(chunk);
    for (std::size_t k = 0; k < chunk; ++k) {
      inv_a[pa.order[k]] = k;
      inv_b[pb.order[k]] = k;
    }
    const Tensor& ca = oa.color.value();
    const Tensor& cb = ob.color.value();
    const Tensor& ba = oa.c_b.value();
    const Tensor& bb = ob.c_b.value();
    for (std::size_t r = 0; r < chunk; ++r)
      for (int c = 0; c < 3; ++c) {
        worst_c = std::max(worst_c, std::fabs(ca(inv_a[r], c) - cb(inv_b[r], c)));
        worst_b = std::max(worst_b, std::fabs(ba(inv_a[r], c) - bb(inv_b[r], c)));
      }
  }
  const bool pass = worst_c <= kQuadTol && worst_b <= kQuadTol;
  report("c2 quadrature oracle equivalence", pass,
         fmt("max |dC| %.2e, max |dC_b| %.2e over 1000 rays (tol %.0e)", worst_c, worst_b,
             kQuadTol));
  return pass;
}

// ---- criteria 3-5: end-to-end recovery + ablations ----------------------------

TrainState run_training(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc) {
  TrainState st = build_state(ds, mc, tc);
  train(st, ds, tc);
  return st;
}

struct MaskEval {
  double mean_iou = 0.0;
  double bimodal_frac = 0.0;  // rays with opacity in (0.1, 0.9)
};

MaskEval eval_masks(const TrainState& st, const Dataset& ds, const RenderConfig& rc,
                    std::uint64_t seed) {
  Renderer ren = make_renderer(st, rc);
  MaskEval out;
  std::size_t mid = 0, all = 0, frames = 0;
  for (const DatasetFrame& fr : ds.frames) {
    if (fr.holdout) continue;
    auto pair = ren.render_image(st.params, fr.camera, fr.index, seed);
    out.mean_iou += mask_metrics(render_mask(pair.opacity, rc.mask_threshold), fr.mask).iou;
    for (double a : pair.opacity.pixels)
      if (a > 0.1 && a < 0.9) ++mid;
    all += pair.opacity.pixels.size();
    ++frames;
  }
  out.mean_iou /= static_cast<double>(frames);
  out.bimodal_frac = static_cast<double>(mid) / static_cast<double>(all);
  return out;
}

BatchField posed_field(const TrainState& st, const Renderer::FrameState& fs) {
  return [&st, fs](const std::vector<Vec3>& pts) {
    Tensor x({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto inv = inverse_lbs(pts[i], st.skeleton, fs.bones, fs.posed_proxies);
      x(i, 0) = inv.x_c.x;
      x(i, 1) = inv.x_c.y;
      x(i, 2) = inv.x_c.z;
    }
    return eval_sdf_batch(st.shape, st.params, x, fs.theta).data;
  };
}

struct SurfaceEval {
  double chamfer = 0.0;
  double normal = 0.0;
};

SurfaceEval eval_surfaces(const TrainState& st, const Dataset& ds, const RenderConfig& rc,
                          const std::vector<std::size_t>& frames) {
  Renderer ren = make_renderer(st, rc);
  const Vec3 lo{-0.8, -0.95, -0.8}, hi{0.8, 0.95, 0.8};
  SurfaceEval out;
  for (std::size_t f : frames) {
    const auto fs = ren.frame_state(st.params, f);
    TriangleMesh mesh = extract_isosurface(posed_field(st, fs), 72, lo, hi);
    if (mesh.triangles.empty()) {
      out.chamfer = 1e9;
      return out;
    }
    OrientedPoints pred = sample_mesh_surface(mesh, 20000, 1);
    OrientedPoints oracle = oracle_surface_points(
        posed_capsules(ds.skeleton, ds.frames[f].pose_true), ds.spec.smooth_k, 20000, 2);
    out.chamfer += chamfer(pred.points, oracle.points);
    out.normal += normal_consistency(pred, oracle);
  }
  out.chamfer /= static_cast<double>(frames.size());
  out.normal /= static_cast<double>(frames.size());
  return out;
}

double eval_holdout_psnr(const TrainState& st, const Dataset& ds, const RenderConfig& rc,
                         std::uint64_t seed) {
  ParamStore params = st.params;
  for (const DatasetFrame& fr : ds.frames)
    if (fr.holdout && !params.has(pose_param_name(fr.index)))
      params.add(pose_param_name(fr.index), Tensor::from_vector(fr.pose_noisy));
  Renderer ren = make_renderer(st, rc);
  double ps = 0.0;
  std::size_t n = 0;
  for (const DatasetFrame& fr : ds.frames) {
    if (!fr.holdout) continue;
    auto pair = ren.render_image(params, fr.camera, fr.index, seed, true);
    ps += psnr(pair.rgb, fr.rgb);
    ++n;
  }
  return ps / static_cast<double>(n);
}

double mean_joint_error_after(const TrainState& st, const Dataset& ds) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const PoseErrorRow& row : refine_poses_report(st, ds)) {
    sum += row.angle_after_deg;
    ++n;
  }
  return sum / static_cast<double>(n);
}

bool run_c345() {
  const std::string work = "acceptance_work";
  std::filesystem::create_directories(work);

  const SyntheticSceneSpec spec = scene_default();
  const Dataset ds = generate_dataset(spec, 1);
  const ModelConfig mc = model_main();
  const int kSteps = 8000;

  // ---- criterion 3: full training run
  TrainConfig tc = train_main(kSteps);
  tc.out_dir = work + "/main";
  TrainState st = run_training(ds, mc, tc);

  const MaskEval masks = eval_masks(st, ds, tc.render, 77);
  const SurfaceEval surf = eval_surfaces(st, ds, tc.render, {0, 6, 12, 18});
  const double psnr_h = eval_holdout_psnr(st, ds, tc.render, 78);

  report("c3a mask IoU", masks.mean_iou >= kIouMin,
         fmt("mean IoU %.4f (min %.2f) over %zu frames", masks.mean_iou, kIouMin,
             ds.train_count));
  report("c3b chamfer", surf.chamfer <= kChamferMax,
         fmt("mean chamfer %.4f canonical units = %.2f cm (max %.2f units)", surf.chamfer,
             surf.chamfer * spec.cm_per_unit, kChamferMax));
  report("c3c normal consistency", surf.normal >= kNormalMin,
         fmt("mean normal consistency %.4f (min %.2f)", surf.normal, kNormalMin));
  report("c3d holdout PSNR", psnr_h >= kPsnrMin,
         fmt("mean PSNR %.2f dB on %zu held-out views (min %.1f)", psnr_h,
             ds.frames.size() - ds.train_count, kPsnrMin));

  // ---- criterion 4: decomposition-loss ablation (same seed, losses off)
  TrainConfig tc4 = tc;
  tc4.weights.bce = 0.0;
  tc4.weights.sparse = 0.0;
  tc4.out_dir = work + "/no_decomposition";
  TrainState st4 = run_training(ds, mc, tc4);
  const MaskEval masks4 = eval_masks(st4, ds, tc4.render, 77);

  const bool c4 = masks4.mean_iou < masks.mean_iou &&
                  masks4.bimodal_frac >= kBimodalFactor * masks.bimodal_frac;
  report("c4 decomposition ablation", c4,
         fmt("IoU %.4f < %.4f; mid-opacity frac %.4f vs %.4f (need >= %.0fx)",
             masks4.mean_iou, masks.mean_iou, masks4.bimodal_frac, masks.bimodal_frac,
             kBimodalFactor));

  // ---- criterion 5: pose-noise ablation (joint vs frozen)
  SyntheticSceneSpec spec5 = scene_default();
  spec5.pose_noise_deg = 5.0;
  const Dataset ds5 = generate_dataset(spec5, 1);
  TrainConfig tc5 = train_main(4000);
  tc5.use_noisy_poses = true;
  tc5.out_dir = work + "/pose_joint";
  TrainState st5j = run_training(ds5, mc, tc5);

  TrainConfig tc5f = tc5;
  tc5f.optimize_poses = false;
  tc5f.out_dir = work + "/pose_frozen";
  TrainState st5f = run_training(ds5, mc, tc5f);

  const double err_j = mean_joint_error_after(st5j, ds5);
  const double err_f = mean_joint_error_after(st5f, ds5);
  const double ch_j = eval_surfaces(st5j, ds5, tc5.render, {0, 12}).chamfer;
  const double ch_f = eval_surfaces(st5f, ds5, tc5f.render, {0, 12}).chamfer;

  const bool c5 = err_j < err_f && ch_j < ch_f;
  report("c5 pose optimization ablation", c5,
         fmt("joint-angle error %.3f < %.3f deg; chamfer %.4f < %.4f", err_j, err_f, ch_j,
             ch_f));

  const bool pass = masks.mean_iou >= kIouMin && surf.chamfer <= kChamferMax &&
                    surf.normal >= kNormalMin && psnr_h >= kPsnrMin && c4 && c5;
  return pass;
}

// ---- criterion 6: module invariant suites --------------------------------------

// -- autodiff primitives

struct OpCase {
  std::string name;
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::pair<double, double>> range;  // per input
  std::function<Var(Tape&, const std::vector<Var>&)> build;
  // redraw predicate: true means the drawn value must be re-drawn (kinks)
  std::function<bool(double)> reject;
};

bool check_vjp(const OpCase& op, Rng& rng, double& worst, std::string& fail_detail) {
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < op.shapes.size(); ++i) {
      Tensor t(op.shapes[i]);
      for (double& v : t.data) {
        do {
          v = rng.uniform(op.range[i].first, op.range[i].second);
        } while (op.reject && op.reject(v));
      }
      inputs.push_back(std::move(t));
    }
    Tensor weights;  // fixed random weighting makes the objective scalar
    auto eval = [&](const std::vector<Tensor>& ins, std::vector<Tensor>* grads) {
      Tape tape;
      std::vector<Var> xs;
      for (const Tensor& t : ins) xs.push_back(tape.leaf(t, "x"));
      Var out = op.build(tape, xs);
      if (weights.size() == 0) {
        weights = Tensor(out.value().shape);
        for (double& w : weights.data) w = rng.uniform(0.5, 1.5);
      }
      Var obj = sum_all(mul(out, tape.constant(weights, "w")));
      if (grads) {
        tape.backward(obj);
        grads->clear();
        for (Var x : xs) {
          const Tensor* g = tape.grad_of(x);
          grads->push_back(g ? *g : Tensor(x.value().shape));
        }
      }
      return obj.value()[0];
    };
    std::vector<Tensor> analytic;
    eval(inputs, &analytic);

    const double h = 1e-6;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t e = 0; e < inputs[i].size(); ++e) {
        std::vector<Tensor> pert = inputs;
        pert[i][e] += h;
        const double fp = eval(pert, nullptr);
        pert[i][e] -= 2 * h;
        const double fm = eval(pert, nullptr);
        const double numeric = (fp - fm) / (2 * h);
        const double a = analytic[i][e];
        const double rel =
            std::fabs(a - numeric) / std::max({1e-6, std::fabs(a), std::fabs(numeric)});
        worst = std::max(worst, rel);
        if (rel > 1e-4) {
          fail_detail = fmt("%s input %zu entry %zu: analytic %.6e numeric %.6e",
                            op.name.c_str(), i, e, a, numeric);
          return false;
        }
      }
  }
  return true;
}

bool suite_autodiff(std::string& detail) {
  using S = std::vector<std::size_t>;
  const std::pair<double, double> sym{-1.0, 1.0}, pos{0.2, 2.0};
  std::vector<OpCase> ops;
  auto bin = [&](const char* n, std::function<Var(Var, Var)> f,
                 std::pair<double, double> rb = {-1.0, 1.0}) {
    ops.push_back({n, {S{2, 3}, S{2, 3}}, {sym, rb},
                   [f](Tape&, const std::vector<Var>& xs) { return f(xs[0], xs[1]); },
                   nullptr});
  };
  auto un = [&](const char* n, std::function<Var(Var)> f,
                std::pair<double, double> r = {-1.0, 1.0},
                std::function<bool(double)> reject = nullptr) {
    ops.push_back({n, {S{2, 3}}, {r},
                   [f](Tape&, const std::vector<Var>& xs) { return f(xs[0]); }, reject});
  };
  bin("add", [](Var a, Var b) { return add(a, b); });
  bin("sub", [](Var a, Var b) { return sub(a, b); });
  bin("mul", [](Var a, Var b) { return mul(a, b); });
  bin("vdiv", [](Var a, Var b) { return vdiv(a, b); }, pos);
  un("neg", [](Var a) { return neg(a); });
  un("vexp", [](Var a) { return vexp(a); });
  un("vsin", [](Var a) { return vsin(a); });
  un("vcos", [](Var a) { return vcos(a); });
  un("vlog", [](Var a) { return vlog(a); }, pos);
  un("vsqrt", [](Var a) { return vsqrt(a); }, pos);
  un("vabs", [](Var a) { return vabs(a); }, sym,
     [](double v) { return std::fabs(v) < 1e-3; });
  un("clampv", [](Var a) { return clampv(a, -0.75, 0.75); }, sym,
     [](double v) { return std::fabs(std::fabs(v) - 0.75) < 1e-3; });
  un("scale", [](Var a) { return scale(a, 1.7); });
  un("offset", [](Var a) { return offset(a, 0.3); });
  un("softplus", [](Var a) { return softplus(a, 10.0); });
  un("sigmoid", [](Var a) { return sigmoid(a); });
  un("sum_all", [](Var a) { return sum_all(a); });
  un("mean_all", [](Var a) { return mean_all(a); });
  un("row_sum", [](Var a) { return row_sum(a); });
  un("reshape", [](Var a) { return reshape(a, {3, 2}); });
  un("cumsum_exclusive_rows", [](Var a) { return cumsum_exclusive_rows(a); });
  ops.push_back({"block_sum_rows", {S{4, 3}}, {sym},
                 [](Tape&, const std::vector<Var>& xs) { return block_sum_rows(xs[0], 2); },
                 nullptr});
  ops.push_back({"repeat_rows", {S{1, 3}}, {sym},
                 [](Tape&, const std::vector<Var>& xs) { return repeat_rows(xs[0], 4); },
                 nullptr});
  ops.push_back({"matmul", {S{2, 3}, S{3, 2}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) { return matmul(xs[0], xs[1]); },
                 nullptr});
  ops.push_back({"mul_colvec", {S{2, 3}, S{2, 1}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) { return mul_colvec(xs[0], xs[1]); },
                 nullptr});
  ops.push_back({"mul_scalarv", {S{2, 3}, S{1}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) { return mul_scalarv(xs[0], xs[1]); },
                 nullptr});
  ops.push_back({"add_rowvec", {S{2, 3}, S{1, 3}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) { return add_rowvec(xs[0], xs[1]); },
                 nullptr});
  ops.push_back({"concat_rows", {S{2, 3}, S{2, 3}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) {
                   return concat_rows({xs[0], xs[1]});
                 },
                 nullptr});
  ops.push_back({"concat_cols", {S{2, 3}, S{2, 2}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) {
                   return concat_cols({xs[0], xs[1]});
                 },
                 nullptr});
  ops.push_back({"slice_cols", {S{2, 4}}, {sym},
                 [](Tape&, const std::vector<Var>& xs) { return slice_cols(xs[0], 1, 3); },
                 nullptr});
  ops.push_back({"laplace_cdf", {S{3, 1}, S{1}}, {{-0.5, 0.5}, {0.05, 0.5}},
                 [](Tape&, const std::vector<Var>& xs) {
                   return laplace_cdf(xs[0], xs[1]);
                 },
                 nullptr});
  ops.push_back({"rotate_covector", {S{2, 16}, S{2, 3}}, {sym, sym},
                 [](Tape&, const std::vector<Var>& xs) {
                   return rotate_covector(xs[0], xs[1]);
                 },
                 nullptr});
  // near-identity perturbations keep the 4x4 inverses well-conditioned
  ops.push_back({"inverse4", {S{2, 16}}, {{-0.2, 0.2}},
                 [](Tape& t, const std::vector<Var>& xs) {
                   Tensor id({2, 16});
                   for (std::size_t r = 0; r < 2; ++r)
                     for (int d = 0; d < 4; ++d) id(r, 5 * d) = 1.0;
                   return inverse4(add(xs[0], t.constant(id, "id")));
                 },
                 nullptr});
  ops.push_back({"transform_points", {S{2, 16}}, {sym},
                 [](Tape&, const std::vector<Var>& xs) {
                   Tensor pts({2, 3});
                   pts.data = {0.3, -0.2, 0.5, -0.7, 0.1, 0.4};
                   return transform_points(xs[0], pts);
                 },
                 nullptr});

  Rng rng(61);
  double worst = 0.0;
  std::string fail;
  for (const OpCase& op : ops)
    if (!check_vjp(op, rng, worst, fail)) {
      detail = fail;
      return false;
    }

  // gradient linearity over random scalar combinations
  for (int iter = 0; iter < 100; ++iter) {
    Tensor x0({4, 4});
    for (double& v : x0.data) v = rng.uniform(-1, 1);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    auto grad_of = [&](int which) {
      Tape tape;
      Var x = tape.leaf(x0, "x");
      Var l1 = mean_all(mul(x, x));
      Var l2 = sum_all(vexp(scale(x, 0.3)));
      Var obj = which == 0 ? l1 : which == 1 ? l2 : add(scale(l1, a), scale(l2, b));
      tape.backward(obj);
      return *tape.grad_of(x);
    };
    const Tensor g1 = grad_of(0), g2 = grad_of(1), gc = grad_of(2);
    for (std::size_t e = 0; e < gc.size(); ++e) {
      const double expect = a * g1[e] + b * g2[e];
      const double rel = std::fabs(gc[e] - expect) /
                         std::max(1e-12, std::max(std::fabs(expect), std::fabs(gc[e])));
      if (rel > 1e-10) {
        detail = fmt("linearity case %d entry %zu rel %.3e", iter, e, rel);
        return false;
      }
    }
  }

  // bitwise determinism of forward values and gradients
  auto run_once = [&]() {
    Tape tape;
    Tensor x0({3, 3});
    Rng local(99);
    for (double& v : x0.data) v = local.uniform(-1, 1);
    Var x = tape.leaf(x0, "x");
    Var obj = mean_all(vexp(mul(x, vsin(x))));
    tape.backward(obj);
    std::pair<double, Tensor> out{obj.value()[0], *tape.grad_of(x)};
    return out;
  };
  const auto r1 = run_once(), r2 = run_once();
  if (std::memcmp(&r1.first, &r2.first, sizeof(double)) != 0 ||
      r1.second.data != r2.second.data) {
    detail = "repeated evaluation was not bitwise identical";
    return false;
  }
  detail = fmt("%zu primitives x 100 cases, worst rel %.2e; linearity + determinism",
               ops.size(), worst);
  return true;
}

// -- body kinematics

bool suite_body(std::string& detail) {
  Skeleton s = make_humanoid_skeleton(40, 1);
  Rng rng(62);
  auto random_pose = [&](double amp) {
    PoseParams p = zero_pose(s);
    for (std::size_t b = 0; b < s.bone_count(); ++b)
      for (int j = 0; j < 3; ++j) p[3 * b + j] = rng.uniform(-amp, amp);
    for (int j = 0; j < 3; ++j) p[3 * s.bone_count() + j] = rng.uniform(-0.05, 0.05);
    return p;
  };

  // convexity of skinning weights, 1000 random queries
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto w = skinning_weights(s, x, QuerySpace::Canonical);
    double sum = 0.0;
    for (double v : w) {
      if (v < 0.0) {
        detail = "negative skinning weight";
        return false;
      }
      sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-12) {
      detail = fmt("weights sum %.17g != 1", sum);
      return false;
    }
  }

  // rigid-subset exactness on a two-bone skeleton with one-hot proxies
  Skeleton rigid;
  rigid.parent = {-1, 0};
  rigid.rest_joint = {{0, 0, 0}, {1, 0, 0}};
  rigid.capsules = {{{0, 0, 0}, {0.4, 0, 0}, 0.1}, {{0.6, 0, 0}, {1.4, 0, 0}, 0.1}};
  for (int i = 0; i < 12; ++i) {
    rigid.proxies.push_back({{0.03 * i, 0.0, 0.0}, {1.0, 0.0}});
    rigid.proxies.push_back({{1.0 + 0.03 * i, 0.0, 0.0}, {0.0, 1.0}});
  }
  for (int iter = 0; iter < 100; ++iter) {
    PoseParams p(rigid.pose_dim(), 0.0);
    for (std::size_t j = 0; j < 6; ++j) p[j] = rng.uniform(-0.5, 0.5);
    auto B = bone_transforms(rigid, p);
    auto posed = pose_proxies(rigid, B);
    const Vec3 x{rng.uniform(0.0, 0.15), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
    const auto w = skinning_weights(rigid, x, QuerySpace::Canonical);
    const Vec3 xd = forward_lbs(x, w, B);
    const auto inv = inverse_lbs(xd, rigid, B, posed);
    if ((inv.x_c - x).norm() > 1e-9) {
      detail = fmt("rigid round trip error %.3e", (inv.x_c - x).norm());
      return false;
    }
  }

  // equivariance under a global rigid transform
  for (int iter = 0; iter < 100; ++iter) {
    PoseParams p = random_pose(0.4);
    auto B = bone_transforms(s, p);
    const Mat4 G = Mat4::translation({rng.uniform(-1, 1), rng.uniform(-1, 1),
                                      rng.uniform(-1, 1)}) *
                   Mat4::rotation_axis_angle({rng.uniform(-1, 1), rng.uniform(-1, 1),
                                              rng.uniform(-1, 1)});
    std::vector<Mat4> GB;
    for (const Mat4& b : B) GB.push_back(G * b);
    const Vec3 x{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const auto w = skinning_weights(s, x, QuerySpace::Canonical);
    const Vec3 lhs = forward_lbs(x, w, GB);
    const Vec3 rhs = G.apply_point(forward_lbs(x, w, B));
    if ((lhs - rhs).norm() > 1e-9) {
      detail = fmt("equivariance error %.3e", (lhs - rhs).norm());
      return false;
    }
  }

  // warped-normal chain rule vs finite differences, 100 point/pose pairs
  auto field = [](const Vec3& p) { return p.norm() - 0.3 + 0.1 * std::sin(3.0 * p.x); };
  auto field_grad = [](const Vec3& p) {
    const Vec3 g = p.normalized();
    return Vec3{g.x + 0.3 * std::cos(3.0 * p.x), g.y, g.z};
  };
  for (int iter = 0; iter < 100; ++iter) {
    PoseParams pose = random_pose(0.3);
    auto B = bone_transforms(s, pose);
    auto posed = pose_proxies(s, B);
    const Capsule& cap = s.capsules[rng.index(s.bone_count())];
    const Vec3 mid = cap.a + (cap.b - cap.a) * rng.uniform(0.3, 0.7);
    const Vec3 xd = forward_lbs(mid, skinning_weights(s, mid, QuerySpace::Canonical), B);
    const auto inv = inverse_lbs(xd, s, B, posed);
    const Vec3 analytic = deformed_normal(field_grad(inv.x_c), inv.blended_inverse).raw;
    const double h = 1e-6;
    Vec3 numeric;
    for (int j = 0; j < 3; ++j) {
      Vec3 dp = xd, dm = xd;
      (j == 0 ? dp.x : j == 1 ? dp.y : dp.z) += h;
      (j == 0 ? dm.x : j == 1 ? dm.y : dm.z) -= h;
      const double d = (field(inv.blended_inverse.apply_point(dp)) -
                        field(inv.blended_inverse.apply_point(dm))) /
                       (2 * h);
      (j == 0 ? numeric.x : j == 1 ? numeric.y : numeric.z) = d;
    }
    if ((analytic - numeric).norm() / std::max(numeric.norm(), 1e-9) > 1e-4) {
      detail = "normal chain rule mismatch";
      return false;
    }
  }
  detail = "convexity(1000), rigid exactness, equivariance, normal chain rule (100 each)";
  return true;
}

// -- fields

bool suite_fields(std::string& detail) {
  Rng rng(63);
  // density monotonicity on sorted random inputs
  for (int iter = 0; iter < 100; ++iter) {
    const double alpha = rng.uniform(1.0, 100.0), beta = rng.uniform(0.01, 0.5);
    std::vector<double> sdf(20);
    for (double& v : sdf) v = rng.uniform(-1, 1);
    std::sort(sdf.begin(), sdf.end());
    for (std::size_t i = 1; i < sdf.size(); ++i) {
      const double lo = density_from_sdf(alpha, beta, sdf[i - 1]);
      const double hi = density_from_sdf(alpha, beta, sdf[i]);
      if (hi > lo + 1e-15) {
        detail = "density not monotone";
        return false;
      }
    }
    // continuity at the surface: both one-sided limits equal alpha/2
    for (double eps : {1e-9, -1e-9})
      if (std::fabs(density_from_sdf(alpha, beta, eps) - alpha / 2) > alpha * 1e-6) {
        detail = "density discontinuous at 0";
        return false;
      }
  }
  // inverted-sphere coordinates keep the direction
  for (int iter = 0; iter < 1000; ++iter) {
    Vec3 x{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    if (x.norm() < 1.0) x = x.normalized() * rng.uniform(1.0, 5.0);
    const auto q = invert_sphere(x);
    const Vec3 dir = x * (1.0 / x.norm());
    if (std::fabs(q[0] - dir.x) > 1e-12 || std::fabs(q[1] - dir.y) > 1e-12 ||
        std::fabs(q[2] - dir.z) > 1e-12 || std::fabs(q[3] - 1.0 / x.norm()) > 1e-12) {
      detail = "invert_sphere direction mismatch";
      return false;
    }
  }
  detail = "density monotone + continuous at 0 (100), invert_sphere direction (1000)";
  return true;
}

// -- render quadrature

bool suite_render(std::string& detail) {
  Rng rng(64);
  // tau identity and compositing bounds on random batches
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t R = 4, N = 6;
    Tensor sig({R * N, 1}), col({R * N, 3}), deltas({R, N}), cb0({R, 3});
    for (double& v : sig.data) v = rng.uniform(0.0, 50.0);
    for (double& v : col.data) v = rng.uniform(0.0, 1.0);
    for (double& v : deltas.data) v = rng.uniform(0.01, 0.1);
    for (double& v : cb0.data) v = rng.uniform(0.0, 1.0);
    Tape tape;
    auto I = integrate_samples(tape, tape.leaf(sig, "s"), tape.leaf(col, "c"), deltas);
    const Tensor& tau = I.tau.value();
    for (double t : tau.data)
      if (t < 0.0) {
        detail = "negative quadrature weight";
        return false;
      }
    for (std::size_t r = 0; r < R; ++r) {
      double tsum = 0.0, optical = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        tsum += tau(r, j);
        optical += sig(r * N + j, 0) * deltas(r, j);
      }
      if (std::fabs(tsum - (1.0 - std::exp(-optical))) > 1e-9) {
        detail = fmt("tau sum identity off by %.2e", tsum - (1.0 - std::exp(-optical)));
        return false;
      }
    }
    Var C = composite(I.color, I.alpha, tape.constant(cb0, "cb"));
    for (double v : C.value().data)
      if (v < -1e-12 || v > 1.0 + 1e-12) {
        detail = "composited color out of [0,1]";
        return false;
      }
  }

  // empty-inner rays and refinement convergence need working fields
  Dataset ds = generate_dataset(scene_tiny(), 23);
  TrainConfig tc = train_main(10);
  tc.render.samples = {8, 8, 8, 0.01};
  TrainState st = build_state(ds, model_tiny(), tc);

  {
    Renderer ren = make_renderer(st, tc.render);
    std::vector<Ray> rays;
    for (int i = 0; i < 10; ++i) {
      Vec3 d{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      d = d.normalized();
      rays.push_back({d * 2.0, d});  // outside the unit sphere, pointing away
    }
    Rng prng(7);
    PreparedBatch batch = ren.prepare(rays, st.params, 0, prng);
    Tape tape;
    auto vars = st.params.attach(tape);
    RenderOut ro = ren.run(tape, vars, batch, false);
    if (batch.hit_count != 0) {
      detail = "outward ray classified as hit";
      return false;
    }
    const Tensor& alpha = ro.alpha.value();
    for (double a : alpha.data)
      if (a != 0.0) {
        detail = "empty-inner ray has non-zero opacity";
        return false;
      }
    if (ro.color.value().data != ro.c_b.value().data) {
      detail = "empty-inner composite differs from background";
      return false;
    }
  }

  // Richardson-style check: error against a 10x-dense reference shrinks as
  // sample counts double
  std::vector<Ray> rays;
  for (int i = 0; i < 60; ++i) {
    const Camera& cam = ds.frames[0].camera;
    rays.push_back(pixel_ray(cam, rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height)));
  }
  auto render_colors = [&](std::size_t n, std::uint64_t seed) {
    RenderConfig rc = tc.render;
    rc.samples = {n, n, n, 0.01};
    Renderer ren = make_renderer(st, rc);
    Rng prng(seed);
    PreparedBatch batch = ren.prepare(rays, st.params, 0, prng);
    Tape tape;
    auto vars = st.params.attach(tape);
    RenderOut ro = ren.run(tape, vars, batch, false);
    std::vector<double> by_ray(rays.size() * 3);
    const Tensor& c = ro.color.value();
    for (std::size_t k = 0; k < rays.size(); ++k)
      for (int ch = 0; ch < 3; ++ch) by_ray[batch.order[k] * 3 + ch] = c(k, ch);
    return by_ray;
  };
  const auto dense = render_colors(160, 900);
  double err[3];
  const std::size_t counts[3] = {8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    const auto got = render_colors(counts[i], 901 + i);
    double sum = 0.0;
    for (std::size_t e = 0; e < got.size(); ++e) sum += std::fabs(got[e] - dense[e]);
    err[i] = sum / static_cast<double>(got.size());
  }
  if (!(err[1] <= err[0] * 1.1 && err[2] <= err[1] * 1.1 && err[2] < err[0])) {
    detail = fmt("refinement errors not shrinking: %.3e %.3e %.3e", err[0], err[1], err[2]);
    return false;
  }
  detail = fmt("tau identity + bounds (100), empty-inner, refinement %.1e->%.1e->%.1e",
               err[0], err[1], err[2]);
  return true;
}

// -- objectives

PreparedBatch fake_batch(std::vector<double> min_sdf, std::size_t misses) {
  PreparedBatch b;
  b.hit_count = min_sdf.size();
  b.min_sdf = std::move(min_sdf);
  b.rays.resize(b.hit_count + misses);
  for (std::size_t i = 0; i < b.rays.size(); ++i) {
    b.rays[i].hit = i < b.hit_count;
    b.order.push_back(i);
  }
  return b;
}

bool suite_objectives(std::string& detail) {
  Rng rng(65);
  // BCE unimodality: rises until 0.5, falls after
  std::vector<double> vals;
  for (double a = 0.02; a < 0.99; a += 0.02) {
    Tape tape;
    vals.push_back(loss_bce(tape.leaf(Tensor({1, 1}, a), "a")).value()[0]);
  }
  const std::size_t peak =
      std::max_element(vals.begin(), vals.end()) - vals.begin();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const bool ok = i < peak ? vals[i] < vals[i + 1] : i > peak ? vals[i] < vals[i - 1] : true;
    if (!ok) {
      detail = "BCE not unimodal";
      return false;
    }
  }
  if (std::fabs(0.02 * (peak + 1) - 0.5) > 0.021) {
    detail = fmt("BCE peak at %.2f, expected 0.5", 0.02 * (peak + 1));
    return false;
  }

  for (int iter = 0; iter < 100; ++iter) {
    // sparseness is zero iff every off-ray opacity is zero
    const std::size_t n = 4 + rng.index(4);
    std::vector<double> min_sdf(n);
    for (double& v : min_sdf) v = rng.uniform(0.0, 0.4);
    PreparedBatch b = fake_batch(min_sdf, 1);
    auto cls = classify_off_rays(b, 0.2);
    Tensor alpha({n + 1, 1});
    bool any_off_nonzero = false;
    for (std::size_t i = 0; i < n + 1; ++i) {
      alpha[i] = rng.index(2) == 0 ? 0.0 : rng.uniform(0.01, 1.0);
      if (cls.off[i] && alpha[i] > 0.0) any_off_nonzero = true;
    }
    Tape tape;
    const double sp = loss_sparse(tape.leaf(alpha, "a"), cls).value()[0];
    if (any_off_nonzero != (sp > 1e-12)) {
      detail = "sparse zero-iff violated";
      return false;
    }

    // off-ray classification is monotone in epsilon
    const double e1 = rng.uniform(0.01, 0.2), e2 = e1 + rng.uniform(0.01, 0.2);
    auto c1 = classify_off_rays(b, e1), c2 = classify_off_rays(b, e2);
    for (std::size_t i = 0; i < c1.off.size(); ++i)
      if (c2.off[i] && !c1.off[i]) {
        detail = "off-ray set not shrinking with larger epsilon";
        return false;
      }
  }
  detail = "BCE unimodal, sparse zero-iff (100), epsilon monotone (100)";
  return true;
}

// -- optimize

bool suite_optimize(std::string& detail) {
  Dataset ds = generate_dataset(scene_tiny(), 24);
  TrainConfig tc = train_main(25);
  tc.rays_per_batch = 24;
  tc.eikonal.count = 16;
  tc.render.samples = {6, 6, 4, 0.01};
  tc.frames_per_batch = 2;

  auto run = [&]() {
    TrainState st = build_state(ds, model_tiny(), tc);
    return train(st, ds, tc);
  };
  const auto ra = run(), rb = run();
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (std::memcmp(&ra[i].total, &rb[i].total, sizeof(double)) != 0) {
      detail = fmt("loss trajectory diverges at step %zu", i);
      return false;
    }

  TrainState st = build_state(ds, model_tiny(), tc);
  for (int i = 0; i < 10; ++i) {
    Renderer ren = make_renderer(st, tc.render);
    train_step(st, ds, tc, ren);
    if (st.params.value("density/log_alpha")[0] != st.params.value("density/log_alpha")[0] ||
        std::exp(st.params.value("density/log_alpha")[0]) <= 0.0 ||
        std::exp(st.params.value("density/log_beta")[0]) <= 0.0) {
      detail = "alpha/beta not strictly positive";
      return false;
    }
  }

  // no cross-frame pose leakage: a frame-0 batch leaves frame 1's pose alone
  Renderer ren = make_renderer(st, tc.render);
  std::vector<std::pair<int, int>> px = {{8, 8}, {16, 16}, {24, 20}, {4, 28}};
  Rng prng(5);
  PreparedBatch batch = ren.prepare(generate_rays(ds.frames[0].camera, px), st.params, 0, prng);
  Tensor gt({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c)
      gt(i, c) = ds.frames[0].rgb.at(px[batch.order[i]].second, px[batch.order[i]].first, c);
  Tape tape;
  auto vars = st.params.attach(tape);
  Rng lrng(6);
  auto sl = total_loss(tape, vars, ren, batch, gt, st.params, tc.weights, 0.1, tc.eikonal,
                       lrng, false, nullptr);
  st.params.zero_grads();
  tape.backward(sl.total);
  st.params.pull_grads(tape, vars);
  for (double g : st.params.grad(pose_param_name(1)).data)
    if (g != 0.0) {
      detail = "frame-0 batch produced gradient on frame 1 pose";
      return false;
    }
  detail = "bitwise determinism (25 steps), alpha/beta > 0, no cross-frame pose leakage";
  return true;
}

// -- synthetic oracle

bool suite_synthetic(std::string& detail) {
  SyntheticSceneSpec spec = scene_tiny();
  Skeleton skel = scene_skeleton(spec);
  auto caps = posed_capsules(skel, walking_pose(spec, skel, 2));
  auto capsule_sdf = [](const Capsule& c, const Vec3& p) {
    const Vec3 ab = c.b - c.a;
    const double t =
        ab.norm2() > 0.0 ? std::clamp((p - c.a).dot(ab) / ab.norm2(), 0.0, 1.0) : 0.0;
    return (p - (c.a + ab * t)).norm() - c.radius;
  };
  Rng rng(66);
  int ok = 0, n = 0;
  for (int i = 0; i < 8000; ++i) {
    const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (std::fabs(analytic_sdf(caps, p, spec.smooth_k)) <= 0.05) continue;
    std::vector<double> ds;
    for (const Capsule& c : caps) ds.push_back(capsule_sdf(c, p));
    std::sort(ds.begin(), ds.end());
    if (ds[1] - ds[0] < 0.15) continue;  // smooth-min blend zone
    ++n;
    const double gn = analytic_sdf_grad(caps, p, spec.smooth_k).norm();
    if (gn >= 0.95 && gn <= 1.05) ++ok;
  }
  if (n < 500 || ok < 0.99 * n) {
    detail = fmt("eikonal property %d/%d", ok, n);
    return false;
  }

  // rigid-part agreement between canonical and posed oracles under LBS
  PoseParams pose = walking_pose(spec, skel, 1);
  auto bones = bone_transforms(skel, pose);
  auto caps1 = posed_capsules(skel, pose);
  auto caps0 = posed_capsules(skel, zero_pose(skel));
  int rigid_checked = 0, rigid_bad = 0;
  for (std::size_t b = 0; b < skel.bone_count(); ++b) {
    for (int i = 0; i < 25; ++i) {
      const Capsule& c = skel.capsules[b];
      const Vec3 mid = c.a + (c.b - c.a) * rng.uniform(0.3, 0.7);
      Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
      dir = dir.normalized();
      const Vec3 xc = mid + dir * (c.radius + 0.01);
      const Vec3 xd = bones[b].apply_point(xc);
      ++rigid_checked;
      // 5e-3 slack bounds the smooth-min cross-coupling from the other limbs
      if (std::fabs(analytic_sdf(caps0, xc, spec.smooth_k) -
                    analytic_sdf(caps1, xd, spec.smooth_k)) > 5e-3)
        ++rigid_bad;
    }
  }
  if (rigid_checked < 100 || rigid_bad > 0) {
    detail = fmt("rigid-part agreement: %d/%d mismatches", rigid_bad, rigid_checked);
    return false;
  }

  // class balance on the default dataset
  Dataset full = generate_dataset(scene_default(), 1);
  for (const DatasetFrame& fr : full.frames) {
    std::size_t human = 0;
    for (double m : fr.mask.pixels)
      if (m > 0.5) ++human;
    const double frac = static_cast<double>(human) / static_cast<double>(fr.mask.pixels.size());
    if (frac < 0.05 || frac > 0.60) {
      detail = fmt("frame %zu human fraction %.3f outside [0.05, 0.60]", fr.index, frac);
      return false;
    }
  }
  detail = fmt("eikonal %d/%d probes, rigid agreement (100), class balance (%zu frames)",
               ok, n, full.frames.size());
  return true;
}

// -- evalmesh metrics

bool suite_evalmesh(std::string& detail) {
  Rng rng(67);
  auto random_cloud = [&](std::size_t n, const Vec3& shift) {
    Tensor t({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
      t(i, 0) = rng.uniform(-1, 1) + shift.x;
      t(i, 1) = rng.uniform(-1, 1) + shift.y;
      t(i, 2) = rng.uniform(-1, 1) + shift.z;
    }
    return t;
  };
  for (int iter = 0; iter < 100; ++iter) {
    const Tensor a = random_cloud(40, {}), b = random_cloud(30, {0.2, 0, 0});
    if (chamfer(a, b) != chamfer(b, a)) {
      detail = "chamfer not symmetric";
      return false;
    }
    const Vec3 t{rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
    Tensor shifted = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      shifted(i, 0) += t.x;
      shifted(i, 1) += t.y;
      shifted(i, 2) += t.z;
    }
    if (!(chamfer(a, shifted) > chamfer(a, a))) {
      detail = "translation did not increase chamfer";
      return false;
    }
  }

  // watertightness of the extracted sphere
  auto sphere = batch_of([](const Vec3& p) { return p.norm() - 0.5; });
  TriangleMesh mesh = extract_isosurface(sphere, 48, {-1, -1, -1}, {1, 1, 1});
  std::map<std::pair<int, int>, int> edges;
  for (const auto& tri : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int u = tri[e], v = tri[(e + 1) % 3];
      if (u > v) std::swap(u, v);
      ++edges[{u, v}];
    }
  for (const auto& [edge, count] : edges)
    if (count != 2) {
      detail = fmt("edge shared by %d triangles", count);
      return false;
    }

  // [0,1]-range metrics stay in range on random inputs
  for (int iter = 0; iter < 1000; ++iter) {
    Image pa(8, 8, 1), pb(8, 8, 1);
    for (double& v : pa.pixels) v = rng.index(2);
    for (double& v : pb.pixels) v = rng.index(2);
    const MaskMetrics m = mask_metrics(pa, pb);
    for (double v : {m.precision, m.f1, m.iou})
      if (v < 0.0 || v > 1.0) {
        detail = "mask metric out of range";
        return false;
      }
  }
  detail = fmt("chamfer symmetry/monotonicity (100), watertight sphere (%zu tris), "
               "metric ranges (1000)",
               mesh.triangles.size());
  return true;
}

// -- cli round trips

bool suite_cli(std::string& detail) {
  RunConfig a = parse_run_config("", {"train.steps=321", "scene.fov_deg=61.5"});
  const std::string dumped = "acceptance_work/roundtrip.json";
  std::filesystem::create_directories("acceptance_work");
  {
    std::ofstream f(dumped);
    f << print_config(a);
  }
  RunConfig b = parse_run_config(dumped, {});
  if (print_config(a) != print_config(b)) {
    detail = "print-config did not round trip";
    return false;
  }

  // dataset generation is idempotent byte-for-byte
  Dataset d1 = generate_dataset(scene_tiny(), 3);
  Dataset d2 = generate_dataset(scene_tiny(), 3);
  save_dataset(d1, "acceptance_work/idem1");
  save_dataset(d2, "acceptance_work/idem2");
  for (const auto& e : std::filesystem::directory_iterator("acceptance_work/idem1")) {
    const std::string name = e.path().filename();
    std::ifstream f1("acceptance_work/idem1/" + name, std::ios::binary);
    std::ifstream f2("acceptance_work/idem2/" + name, std::ios::binary);
    const std::string s1{std::istreambuf_iterator<char>(f1), {}};
    const std::string s2{std::istreambuf_iterator<char>(f2), {}};
    if (s1 != s2) {
      detail = "dataset files differ between identical runs: " + name;
      return false;
    }
  }
  detail = "config round trip, byte-identical dataset generation";
  return true;
}

bool run_c6() {
  struct Suite {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Suite suites[] = {
      {"autodiff", suite_autodiff},   {"body", suite_body},
      {"fields", suite_fields},       {"render", suite_render},
      {"objectives", suite_objectives}, {"optimize", suite_optimize},
      {"synthetic", suite_synthetic}, {"evalmesh", suite_evalmesh},
      {"cli", suite_cli},
  };
  bool pass = true;
  std::string summary;
  for (const Suite& s : suites) {
    std::string detail;
    const bool ok = s.fn(detail);
    std::printf("  %-10s %s  %s\n", s.name, ok ? "ok" : "FAILED", detail.c_str());
    std::fflush(stdout);
    if (!ok) {
      pass = false;
      summary += std::string(summary.empty() ? "" : ", ") + s.name;
    }
  }
  report("c6 invariant suites", pass,
         pass ? "9 module suites passed" : "failing suites: " + summary);
  return pass;
}

// ---- criterion 7: determinism ---------------------------------------------------

bool run_c7() {
  const Dataset ds = generate_dataset(scene_default(), 1);
  const ModelConfig mc = model_main();
  auto run = [&](const std::string& out) {
    TrainConfig tc = train_main(8000);  // criterion 3 configuration...
    tc.steps = 200;                     // ...cut to its first 200 steps
    tc.out_dir = out;
    TrainState st = build_state(ds, mc, tc);
    return train(st, ds, tc);
  };
  std::filesystem::remove_all("acceptance_work/det1");
  std::filesystem::remove_all("acceptance_work/det2");
  const auto ra = run("acceptance_work/det1");
  const auto rb = run("acceptance_work/det2");

  bool pass = ra.size() == rb.size();
  for (std::size_t i = 0; pass && i < ra.size(); ++i) {
    const double* pa[] = {&ra[i].total, &ra[i].rgb, &ra[i].eik, &ra[i].sparse, &ra[i].bce};
    const double* pb[] = {&rb[i].total, &rb[i].rgb, &rb[i].eik, &rb[i].sparse, &rb[i].bce};
    for (int k = 0; k < 5; ++k)
      if (std::memcmp(pa[k], pb[k], sizeof(double)) != 0) pass = false;
  }
  // the written loss logs must also match byte-for-byte
  std::ifstream f1("acceptance_work/det1/loss.csv", std::ios::binary);
  std::ifstream f2("acceptance_work/det2/loss.csv", std::ios::binary);
  const std::string s1{std::istreambuf_iterator<char>(f1), {}};
  const std::string s2{std::istreambuf_iterator<char>(f2), {}};
  if (s1.empty() || s1 != s2) pass = false;

  report("c7 determinism", pass,
         fmt("200-step loss logs %s (%zu rows)", pass ? "bitwise identical" : "DIFFER",
             ra.size()));
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  bool ok = true;
  if (which == "c1" || which == "all") ok &= run_c1();
  if (which == "c2" || which == "all") ok &= run_c2();
  if (which == "c3c4c5" || which == "all") ok &= run_c345();
  if (which == "c6" || which == "all") ok &= run_c6();
  if (which == "c7" || which == "all") ok &= run_c7();
  return ok ? 0 : 1;
}
