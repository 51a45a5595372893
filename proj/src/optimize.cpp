#include "recon/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace recon {

namespace {

std::string checkpoint_prefix(const std::string& dir, int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06d", step);
  return dir + "/" + buf;
}

double rotation_angle_deg(const Vec3& w_a, const Vec3& w_b) {
  const Mat4 rel = Mat4::rotation_axis_angle(w_a) *
                   Mat4::rotation_axis_angle(-w_b);  // R_a * R_b^T
  const double tr = rel.m[0] + rel.m[5] + rel.m[10];
  return std::acos(std::clamp((tr - 1.0) * 0.5, -1.0, 1.0)) * 180.0 / M_PI;
}

struct PoseError {
  double angle_deg = 0.0, trans = 0.0;
};

PoseError pose_error(const Skeleton& skel, const PoseParams& est, const PoseParams& gt) {
  PoseError e;
  const std::size_t nb = skel.bone_count();
  for (std::size_t b = 0; b < nb; ++b) {
    const Vec3 wa{est[3 * b], est[3 * b + 1], est[3 * b + 2]};
    const Vec3 wb{gt[3 * b], gt[3 * b + 1], gt[3 * b + 2]};
    e.angle_deg += rotation_angle_deg(wa, wb);
  }
  e.angle_deg /= static_cast<double>(nb);
  const Vec3 ta{est[3 * nb], est[3 * nb + 1], est[3 * nb + 2]};
  const Vec3 tb{gt[3 * nb], gt[3 * nb + 1], gt[3 * nb + 2]};
  e.trans = (ta - tb).norm();
  return e;
}

}  // namespace

double AdamConfig::lr_for(const std::string& name) const {
  if (name.rfind("pose/", 0) == 0) return lr_pose;
  if (name.rfind("bg/latent/", 0) == 0) return lr_latent;
  return lr_field;
}

void Adam::step(ParamStore& params, double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& e : params.entries()) {
    Tensor& m = m_.try_emplace(e.name, Tensor(e.value.shape, 0.0)).first->second;
    Tensor& v = v_.try_emplace(e.name, Tensor(e.value.shape, 0.0)).first->second;
    const double lr = lr_scale * cfg_.lr_for(e.name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      if (!std::isfinite(g))
        throw OptimizeError("non-finite gradient in '" + e.name + "' at flat index " +
                            std::to_string(i));
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      e.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

void Adam::save(Checkpoint& ckpt, const ParamStore& params) const {
  ckpt.add("adam/t", Tensor::scalar(static_cast<double>(t_)));
  for (const auto& e : params.entries()) {
    const auto mi = m_.find(e.name), vi = v_.find(e.name);
    ckpt.add("adam/m/" + e.name,
             mi != m_.end() ? mi->second : Tensor(e.value.shape, 0.0));
    ckpt.add("adam/v/" + e.name,
             vi != v_.end() ? vi->second : Tensor(e.value.shape, 0.0));
  }
}

void Adam::load(const Checkpoint& ckpt, const ParamStore& params) {
  const Tensor* t = ckpt.find("adam/t");
  if (!t) throw OptimizeError("checkpoint is missing the optimizer step count");
  t_ = static_cast<int>((*t)[0]);
  m_.clear();
  v_.clear();
  for (const auto& e : params.entries()) {
    const Tensor* m = ckpt.find("adam/m/" + e.name);
    const Tensor* v = ckpt.find("adam/v/" + e.name);
    if (!m || !v)
      throw OptimizeError("checkpoint is missing optimizer moments for '" + e.name + "'");
    m_.emplace(e.name, *m);
    v_.emplace(e.name, *v);
  }
}

void TrainConfig::validate() const {
  if (steps < 1) throw OptimizeError("train config: steps must be >= 1");
  if (frames_per_batch < 1 || rays_per_batch < 1)
    throw OptimizeError("train config: batch sizes must be >= 1");
  weights.validate();
  if (!(eps_start >= eps_end && eps_end > 0.0))
    throw OptimizeError("train config: epsilon schedule must be loose-to-tight");
}

TrainState build_state(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc) {
  tc.validate();
  if (ds.train_count < 1) throw OptimizeError("dataset has no training frames");

  TrainState st;
  st.model = mc;
  st.skeleton = ds.skeleton;

  ShapeFieldConfig sc = mc.shape;
  sc.pose_dim = st.skeleton.pose_dim();
  st.shape = HumanShapeField(sc);

  TextureFieldConfig xc = mc.tex;
  xc.pose_dim = st.skeleton.pose_dim();
  xc.d_z = sc.d_z;
  st.tex = HumanTextureField(xc);

  BackgroundFieldConfig bc = mc.bg;
  bc.num_frames = ds.train_count;
  st.bg = BackgroundField(bc);

  geometric_init(st.shape, st.params, mc.init_radius, tc.seed, mc.geo_init_steps);
  Rng init_rng(tc.seed + 1);
  st.tex.init_params(st.params, init_rng);
  st.bg.init_params(st.params, init_rng);
  DensityParams::init_params(st.params);
  for (std::size_t i = 0; i < ds.train_count; ++i) {
    const DatasetFrame& fr = ds.frames[i];
    st.params.add(pose_param_name(i),
                  Tensor::from_vector(tc.use_noisy_poses ? fr.pose_noisy : fr.pose_true));
  }

  st.adam = Adam(tc.adam);
  st.rng = Rng(tc.seed + 2);
  return st;
}

Renderer make_renderer(const TrainState& state, const RenderConfig& rc) {
  return Renderer(&state.skeleton, &state.shape, &state.tex, &state.bg, rc);
}

LossReport train_step(TrainState& state, const Dataset& ds, const TrainConfig& tc,
                      const Renderer& ren) {
  const std::size_t nf = std::min<std::size_t>(tc.frames_per_batch, ds.train_count);
  const std::size_t rays_per_frame = std::max<std::size_t>(1, tc.rays_per_batch / nf);
  const double epsilon = epsilon_schedule(state.step, tc.steps, tc.eps_start, tc.eps_end);

  // distinct frames per batch
  std::vector<std::size_t> chosen;
  while (chosen.size() < nf) {
    const std::size_t f = state.rng.index(ds.train_count);
    if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) chosen.push_back(f);
  }

  Tape tape;
  auto vars = state.params.attach(tape);
  LossReport agg;
  Var total;
  bool first = true;
  for (std::size_t f : chosen) {
    const DatasetFrame& fr = ds.frames[f];
    std::vector<std::pair<int, int>> pixels(rays_per_frame);
    for (auto& [px, py] : pixels) {
      px = static_cast<int>(state.rng.index(fr.rgb.width));
      py = static_cast<int>(state.rng.index(fr.rgb.height));
    }
    const std::vector<Ray> rays = generate_rays(fr.camera, pixels);
    PreparedBatch batch = ren.prepare(rays, state.params, f, state.rng);

    Tensor gt({rays_per_frame, 3});
    for (std::size_t i = 0; i < rays_per_frame; ++i) {
      const std::size_t src = batch.order[i];  // gt rows follow the batch order
      for (int c = 0; c < 3; ++c)
        gt(i, c) = fr.rgb.at(pixels[src].second, pixels[src].first, c);
    }

    StepLoss sl = total_loss(tape, vars, ren, batch, gt, state.params, tc.weights, epsilon,
                             tc.eikonal, state.rng);
    total = first ? sl.total : add(total, sl.total);
    first = false;
    agg.rgb += sl.report.rgb;
    agg.eik += sl.report.eik;
    agg.sparse += sl.report.sparse;
    agg.bce += sl.report.bce;
    agg.total += sl.report.total;
    agg.rays_total += sl.report.rays_total;
    agg.rays_off += sl.report.rays_off;
    agg.off_empty_warnings += sl.report.off_empty_warnings;
    agg.alpha = sl.report.alpha;
    agg.beta = sl.report.beta;
  }
  const double inv = 1.0 / static_cast<double>(nf);
  total = scale(total, inv);
  agg.rgb *= inv;
  agg.eik *= inv;
  agg.sparse *= inv;
  agg.bce *= inv;
  agg.total *= inv;
  agg.epsilon = epsilon;
  agg.step = state.step;

  tape.backward(total);
  state.params.zero_grads();
  state.params.pull_grads(tape, vars);
  if (!tc.optimize_poses)
    for (auto& e : state.params.entries())
      if (e.name.rfind("pose/", 0) == 0)
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);

  const double lr_scale =
      tc.cosine_lr
          ? 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(state.step) /
                                  static_cast<double>(std::max(1, tc.steps))))
          : 1.0;
  state.adam.step(state.params, lr_scale);
  ++state.step;
  return agg;
}

std::vector<LossReport> train(TrainState& state, const Dataset& ds, const TrainConfig& tc) {
  tc.validate();
  if (!tc.out_dir.empty()) std::filesystem::create_directories(tc.out_dir);
  Renderer ren = make_renderer(state, tc.render);
  std::vector<LossReport> reports;
  while (state.step < tc.steps) {
    LossReport r = train_step(state, ds, tc, ren);
    if (!tc.out_dir.empty()) append_loss_csv(tc.out_dir + "/loss.csv", r);
    if (!tc.out_dir.empty() && tc.checkpoint_every > 0 &&
        state.step % tc.checkpoint_every == 0)
      save_train_checkpoint(checkpoint_prefix(tc.out_dir, state.step), state);
    reports.push_back(r);
  }
  if (!tc.out_dir.empty()) save_train_checkpoint(tc.out_dir + "/ckpt_final", state);
  return reports;
}

void save_train_checkpoint(const std::string& prefix, const TrainState& state) {
  for (const char* name : {"density/log_alpha", "density/log_beta"})
    if (!std::isfinite(state.params.value(name)[0]))
      throw OptimizeError(std::string("refusing to checkpoint non-finite '") + name + "'");
  Checkpoint ckpt;
  ckpt.step = state.step;
  ckpt.rng_state = state.rng.serialize();
  for (const auto& e : state.params.entries()) ckpt.add(e.name, e.value);
  state.adam.save(ckpt, state.params);
  save_checkpoint(prefix, ckpt);
}

void load_train_checkpoint(const std::string& prefix, TrainState& state) {
  const Checkpoint ckpt = load_checkpoint(prefix);
  for (auto& e : state.params.entries()) {
    const Tensor* t = ckpt.find(e.name);
    if (!t) throw OptimizeError("checkpoint is missing parameter '" + e.name + "'");
    if (t->shape != e.value.shape)
      throw OptimizeError("checkpoint shape mismatch for '" + e.name + "'");
    e.value = *t;
  }
  state.adam.load(ckpt, state.params);
  state.step = ckpt.step;
  state.rng.deserialize(ckpt.rng_state);
}

std::vector<PoseErrorRow> refine_poses_report(const TrainState& state, const Dataset& ds) {
  if (ds.frames.empty() || ds.train_count == 0)
    throw OptimizeError("pose report needs a dataset with training frames");
  std::vector<PoseErrorRow> rows;
  for (std::size_t i = 0; i < ds.train_count; ++i) {
    const DatasetFrame& fr = ds.frames[i];
    const std::string pname = pose_param_name(i);
    if (!state.params.has(pname))
      throw OptimizeError("state has no pose for frame " + std::to_string(i));
    const PoseParams current = state.params.value(pname).data;
    const PoseError before = pose_error(state.skeleton, fr.pose_noisy, fr.pose_true);
    const PoseError after = pose_error(state.skeleton, current, fr.pose_true);
    rows.push_back({i, before.angle_deg, after.angle_deg, before.trans, after.trans});
  }
  return rows;
}

}  // namespace recon
