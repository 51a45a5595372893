#include "recon/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace recon {

namespace {

using nlohmann::json;

json tree(const RunConfig& c) {
  const SyntheticSceneSpec& s = c.scene;
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  return {
      {"scene",
       {{"proxies_per_bone", s.proxies_per_bone},
        {"skeleton_seed", s.skeleton_seed},
        {"figure_scale", s.figure_scale},
        {"frames", s.frames},
        {"holdout", s.holdout},
        {"width", s.width},
        {"height", s.height},
        {"orbit_radius", s.orbit_radius},
        {"orbit_elevation_deg", s.orbit_elevation_deg},
        {"fov_deg", s.fov_deg},
        {"bg_radius", s.bg_radius},
        {"ground_y", s.ground_y},
        {"illumination_jitter", s.illumination_jitter},
        {"pose_noise_deg", s.pose_noise_deg},
        {"smooth_k", s.smooth_k},
        {"cm_per_unit", s.cm_per_unit}}},
      {"model",
       {{"shape",
         {{"hidden", m.shape.hidden},
          {"hidden_layers", m.shape.hidden_layers},
          {"encoding_octaves", m.shape.encoding_octaves},
          {"d_z", m.shape.d_z},
          {"sharpness", m.shape.sharpness}}},
        {"tex", {{"hidden", m.tex.hidden}, {"hidden_layers", m.tex.hidden_layers}}},
        {"bg",
         {{"hidden", m.bg.hidden},
          {"hidden_layers", m.bg.hidden_layers},
          {"pos_octaves", m.bg.pos_octaves},
          {"dir_octaves", m.bg.dir_octaves},
          {"latent_dim", m.bg.latent_dim}}},
        {"init_radius", m.init_radius},
        {"geo_init_steps", m.geo_init_steps}}},
      {"train",
       {{"steps", t.steps},
        {"frames_per_batch", t.frames_per_batch},
        {"rays_per_batch", t.rays_per_batch},
        {"adam",
         {{"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"lr_field", t.adam.lr_field},
          {"lr_pose", t.adam.lr_pose},
          {"lr_latent", t.adam.lr_latent}}},
        {"weights",
         {{"dec", t.weights.dec},
          {"bce", t.weights.bce},
          {"sparse", t.weights.sparse},
          {"eik", t.weights.eik}}},
        {"eps_start", t.eps_start},
        {"eps_end", t.eps_end},
        {"eikonal",
         {{"count", t.eikonal.count},
          {"box", t.eikonal.box},
          {"surface_sigma", t.eikonal.surface_sigma},
          {"projection_steps", t.eikonal.projection_steps}}},
        {"render",
         {{"n_uniform", t.render.samples.n_uniform},
          {"n_importance", t.render.samples.n_importance},
          {"n_outer", t.render.samples.n_outer},
          {"importance_floor", t.render.samples.importance_floor},
          {"mask_threshold", t.render.mask_threshold},
          {"tile_rays", t.render.tile_rays}}},
        {"seed", t.seed},
        {"optimize_poses", t.optimize_poses},
        {"use_noisy_poses", t.use_noisy_poses},
        {"cosine_lr", t.cosine_lr},
        {"checkpoint_every", t.checkpoint_every}}},
      {"dataset_dir", c.dataset_dir},
      {"out_dir", c.out_dir},
      {"checkpoint", c.checkpoint},
      {"data_seed", c.data_seed},
      {"mesh_resolution", c.mesh_resolution},
      {"mesh_frame", c.mesh_frame},
      {"eval_points", c.eval_points},
      {"eval_frame_stride", c.eval_frame_stride},
  };
}

void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object())
    throw ConfigError("config node '" + (path.empty() ? "<root>" : path) +
                      "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    if (base[key].is_object())
      merge(base[key], value, full);
    else
      base[key] = value;
  }
}

void apply_override(json& base, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  const std::string path = spec.substr(0, eq), raw = spec.substr(eq + 1);

  json* node = &base;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (!node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object()) throw ConfigError("cannot assign to config section '" + path + "'");
  json parsed = json::parse(raw, nullptr, false);
  if (parsed.is_discarded() || node->is_string())
    *node = raw;  // bare strings stay strings
  else
    *node = parsed;
}

RunConfig decode(const json& j) {
  RunConfig c;
  try {
    const json& s = j.at("scene");
    c.scene.proxies_per_bone = s.at("proxies_per_bone");
    c.scene.skeleton_seed = s.at("skeleton_seed");
    c.scene.figure_scale = s.at("figure_scale");
    c.scene.frames = s.at("frames");
    c.scene.holdout = s.at("holdout");
    c.scene.width = s.at("width");
    c.scene.height = s.at("height");
    c.scene.orbit_radius = s.at("orbit_radius");
    c.scene.orbit_elevation_deg = s.at("orbit_elevation_deg");
    c.scene.fov_deg = s.at("fov_deg");
    c.scene.bg_radius = s.at("bg_radius");
    c.scene.ground_y = s.at("ground_y");
    c.scene.illumination_jitter = s.at("illumination_jitter");
    c.scene.pose_noise_deg = s.at("pose_noise_deg");
    c.scene.smooth_k = s.at("smooth_k");
    c.scene.cm_per_unit = s.at("cm_per_unit");

    const json& m = j.at("model");
    c.model.shape.hidden = m.at("shape").at("hidden");
    c.model.shape.hidden_layers = m.at("shape").at("hidden_layers");
    c.model.shape.encoding_octaves = m.at("shape").at("encoding_octaves");
    c.model.shape.d_z = m.at("shape").at("d_z");
    c.model.shape.sharpness = m.at("shape").at("sharpness");
    c.model.tex.hidden = m.at("tex").at("hidden");
    c.model.tex.hidden_layers = m.at("tex").at("hidden_layers");
    c.model.bg.hidden = m.at("bg").at("hidden");
    c.model.bg.hidden_layers = m.at("bg").at("hidden_layers");
    c.model.bg.pos_octaves = m.at("bg").at("pos_octaves");
    c.model.bg.dir_octaves = m.at("bg").at("dir_octaves");
    c.model.bg.latent_dim = m.at("bg").at("latent_dim");
    c.model.init_radius = m.at("init_radius");
    c.model.geo_init_steps = m.at("geo_init_steps");

    const json& t = j.at("train");
    c.train.steps = t.at("steps");
    c.train.frames_per_batch = t.at("frames_per_batch");
    c.train.rays_per_batch = t.at("rays_per_batch");
    c.train.adam.beta1 = t.at("adam").at("beta1");
    c.train.adam.beta2 = t.at("adam").at("beta2");
    c.train.adam.eps = t.at("adam").at("eps");
    c.train.adam.lr_field = t.at("adam").at("lr_field");
    c.train.adam.lr_pose = t.at("adam").at("lr_pose");
    c.train.adam.lr_latent = t.at("adam").at("lr_latent");
    c.train.weights.dec = t.at("weights").at("dec");
    c.train.weights.bce = t.at("weights").at("bce");
    c.train.weights.sparse = t.at("weights").at("sparse");
    c.train.weights.eik = t.at("weights").at("eik");
    c.train.eps_start = t.at("eps_start");
    c.train.eps_end = t.at("eps_end");
    c.train.eikonal.count = t.at("eikonal").at("count");
    c.train.eikonal.box = t.at("eikonal").at("box");
    c.train.eikonal.surface_sigma = t.at("eikonal").at("surface_sigma");
    c.train.eikonal.projection_steps = t.at("eikonal").at("projection_steps");
    c.train.render.samples.n_uniform = t.at("render").at("n_uniform");
    c.train.render.samples.n_importance = t.at("render").at("n_importance");
    c.train.render.samples.n_outer = t.at("render").at("n_outer");
    c.train.render.samples.importance_floor = t.at("render").at("importance_floor");
    c.train.render.mask_threshold = t.at("render").at("mask_threshold");
    c.train.render.tile_rays = t.at("render").at("tile_rays");
    c.train.seed = t.at("seed");
    c.train.optimize_poses = t.at("optimize_poses");
    c.train.use_noisy_poses = t.at("use_noisy_poses");
    c.train.cosine_lr = t.at("cosine_lr");
    c.train.checkpoint_every = t.at("checkpoint_every");

    c.dataset_dir = j.at("dataset_dir");
    c.out_dir = j.at("out_dir");
    c.checkpoint = j.at("checkpoint");
    c.data_seed = j.at("data_seed");
    c.mesh_resolution = j.at("mesh_resolution");
    c.mesh_frame = j.at("mesh_frame");
    c.eval_points = j.at("eval_points");
    c.eval_frame_stride = j.at("eval_frame_stride");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

std::string checkpoint_prefix(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out_dir + "/ckpt_final" : cfg.checkpoint;
}

// Rebuilds the model around a dataset and loads the checkpoint into it.
TrainState restore_state(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mc = cfg.model;
  mc.geo_init_steps = 0;  // parameters are about to be overwritten
  TrainState st = build_state(ds, mc, cfg.train);
  st.model = cfg.model;
  load_train_checkpoint(checkpoint_prefix(cfg), st);
  return st;
}

// Holdout frames have no trained pose parameter; evaluation poses them with
// the dataset annotation (holdout annotations carry no noise).
ParamStore with_holdout_poses(const ParamStore& params, const Dataset& ds) {
  ParamStore out = params;
  for (const DatasetFrame& fr : ds.frames)
    if (fr.holdout && !out.has(pose_param_name(fr.index)))
      out.add(pose_param_name(fr.index), Tensor::from_vector(fr.pose_noisy));
  return out;
}

struct FrameImages {
  Image composite, foreground, background, opacity;
};

// Full-frame render split into layers. Per-pixel RNG streams keyed by the
// pixel index keep the result independent of the tiling.
FrameImages render_frame(const Renderer& ren, const ParamStore& params, const Camera& cam,
                         std::size_t frame, std::uint64_t seed, bool mean_latent) {
  FrameImages out;
  out.composite = Image(cam.width, cam.height, 3);
  out.foreground = Image(cam.width, cam.height, 3);
  out.background = Image(cam.width, cam.height, 3);
  out.opacity = Image(cam.width, cam.height, 1);

  const auto fs = ren.frame_state(params, frame);
  const std::size_t total = cam.width * cam.height;
  const std::size_t tile = std::max<std::size_t>(1, ren.config().tile_rays);
  for (std::size_t start = 0; start < total; start += tile) {
    const std::size_t count = std::min(tile, total - start);
    std::vector<PreparedRay> prep(count);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(count); ++i) {
      const std::size_t idx = start + i;
      const Ray ray = pixel_ray(cam, static_cast<double>(idx % cam.width) + 0.5,
                                static_cast<double>(idx / cam.width) + 0.5);
      Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (idx + 1)));
      prep[i] = ren.prepare_ray(ray, params, fs, rng);
    }
    PreparedBatch batch = ren.assemble(std::move(prep), frame);
    Tape tape;
    auto vars = params.attach(tape);
    RenderOut ro = ren.run(tape, vars, batch, mean_latent);
    const Tensor& color = ro.color.value();
    const Tensor& alpha = ro.alpha.value();
    const Tensor& c_h = ro.c_h.value();
    const Tensor& c_b = ro.c_b.value();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = start + batch.order[k];
      const std::size_t y = idx / cam.width, x = idx % cam.width;
      for (int ch = 0; ch < 3; ++ch) {
        out.composite.at(y, x, ch) = color(k, ch);
        out.background.at(y, x, ch) = c_b(k, ch);
        out.foreground.at(y, x, ch) = k < batch.hit_count ? c_h(k, ch) : 0.0;
      }
      out.opacity.at(y, x) = alpha(k, 0);
    }
  }
  return out;
}

std::string numbered(const std::string& dir, const char* stem, std::size_t idx,
                     const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", stem, idx, ext);
  return dir + "/" + buf;
}

// Deformed-space signed distance of the reconstructed body for one frame.
BatchField posed_sdf_field(const TrainState& st, const Renderer& ren,
                           const ParamStore& params, std::size_t frame) {
  const auto fs = ren.frame_state(params, frame);
  return [&st, fs](const std::vector<Vec3>& pts) {
    Tensor x_c({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto inv = inverse_lbs(pts[i], st.skeleton, fs.bones, fs.posed_proxies);
      x_c(i, 0) = inv.x_c.x;
      x_c(i, 1) = inv.x_c.y;
      x_c(i, 2) = inv.x_c.z;
    }
    return eval_sdf_batch(st.shape, st.params, x_c, fs.theta).data;
  };
}

}  // namespace

RunConfig parse_run_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  json base = tree(RunConfig{});
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config file " + config_path);
    json patch = json::parse(f, nullptr, false);
    if (patch.is_discarded())
      throw ConfigError("config file " + config_path + " is not valid JSON");
    merge(base, patch, "");
  }
  for (const std::string& o : overrides) apply_override(base, o);
  return decode(base);
}

std::string print_config(const RunConfig& cfg) { return tree(cfg).dump(2) + "\n"; }

void cmd_synth(const RunConfig& cfg) {
  const Dataset ds = generate_dataset(cfg.scene, cfg.data_seed);
  save_dataset(ds, cfg.dataset_dir);
  std::printf("wrote %zu frames (%zu held out) to %s\n", ds.frames.size(),
              ds.frames.size() - ds.train_count, cfg.dataset_dir.c_str());
}

void cmd_train(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  TrainConfig tc = cfg.train;
  tc.out_dir = cfg.out_dir;
  TrainState st = build_state(ds, cfg.model, tc);
  if (!cfg.checkpoint.empty()) load_train_checkpoint(cfg.checkpoint, st);
  const auto reports = train(st, ds, tc);
  if (!reports.empty())
    std::printf("step %d total %.6f rgb %.6f\n", reports.back().step,
                reports.back().total, reports.back().rgb);
}

void cmd_render(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const TrainState st = restore_state(cfg, ds);
  const Renderer ren = make_renderer(st, cfg.train.render);
  const ParamStore params = with_holdout_poses(st.params, ds);
  std::filesystem::create_directories(cfg.out_dir);
  for (const DatasetFrame& fr : ds.frames) {
    const FrameImages fi = render_frame(ren, params, fr.camera, fr.index,
                                        cfg.train.seed, fr.holdout);
    write_png(numbered(cfg.out_dir, "composite", fr.index, "png"), fi.composite);
    write_png(numbered(cfg.out_dir, "foreground", fr.index, "png"), fi.foreground);
    write_png(numbered(cfg.out_dir, "background", fr.index, "png"), fi.background);
    write_png(numbered(cfg.out_dir, "opacity", fr.index, "png"), fi.opacity);
  }
  std::printf("rendered %zu frames to %s\n", ds.frames.size(), cfg.out_dir.c_str());
}

void cmd_segment(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const TrainState st = restore_state(cfg, ds);
  const Renderer ren = make_renderer(st, cfg.train.render);
  std::filesystem::create_directories(cfg.out_dir);

  nlohmann::json report;
  double iou_sum = 0.0;
  std::size_t counted = 0;
  for (const DatasetFrame& fr : ds.frames) {
    if (fr.holdout) continue;
    const FrameImages fi = render_frame(ren, st.params, fr.camera, fr.index,
                                        cfg.train.seed, false);
    const Image mask = render_mask(fi.opacity, cfg.train.render.mask_threshold);
    write_png(numbered(cfg.out_dir, "segmask", fr.index, "png"), mask);
    const MaskMetrics m = mask_metrics(mask, fr.mask);
    report["frames"].push_back({{"frame", fr.index},
                                {"precision", m.precision},
                                {"f1", m.f1},
                                {"iou", m.iou}});
    iou_sum += m.iou;
    ++counted;
  }
  report["mean_iou"] = iou_sum / static_cast<double>(counted);
  std::ofstream f(cfg.out_dir + "/mask_metrics.json");
  f << report.dump(2) << '\n';
  std::printf("mean mask IoU %.4f over %zu frames\n", iou_sum / counted, counted);
}

void cmd_extract_mesh(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const TrainState st = restore_state(cfg, ds);
  const Renderer ren = make_renderer(st, cfg.train.render);
  std::filesystem::create_directories(cfg.out_dir);

  const std::vector<double> rest = zero_pose(st.skeleton);
  const BatchField canonical = [&](const std::vector<Vec3>& pts) {
    Tensor x({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i) {
      x(i, 0) = pts[i].x;
      x(i, 1) = pts[i].y;
      x(i, 2) = pts[i].z;
    }
    return eval_sdf_batch(st.shape, st.params, x, rest).data;
  };
  const Vec3 lo{-0.8, -0.8, -0.8}, hi{0.8, 0.8, 0.8};
  write_obj(cfg.out_dir + "/canonical.obj",
            extract_isosurface(canonical, cfg.mesh_resolution, lo, hi));

  const BatchField posed = posed_sdf_field(st, ren, st.params, cfg.mesh_frame);
  write_obj(numbered(cfg.out_dir, "posed", cfg.mesh_frame, "obj"),
            extract_isosurface(posed, cfg.mesh_resolution, lo, hi));
  std::printf("wrote canonical and frame-%zu meshes to %s\n", cfg.mesh_frame,
              cfg.out_dir.c_str());
}

void cmd_eval(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const TrainState st = restore_state(cfg, ds);
  const Renderer ren = make_renderer(st, cfg.train.render);
  std::filesystem::create_directories(cfg.out_dir);
  nlohmann::json report;

  // mask metrics across training frames
  double iou = 0.0, precision = 0.0, f1 = 0.0;
  std::size_t counted = 0;
  for (const DatasetFrame& fr : ds.frames) {
    if (fr.holdout) continue;
    const FrameImages fi = render_frame(ren, st.params, fr.camera, fr.index,
                                        cfg.train.seed, false);
    const MaskMetrics m =
        mask_metrics(render_mask(fi.opacity, cfg.train.render.mask_threshold), fr.mask);
    iou += m.iou;
    precision += m.precision;
    f1 += m.f1;
    ++counted;
  }
  report["mask"] = {{"iou", iou / counted},
                    {"precision", precision / counted},
                    {"f1", f1 / counted},
                    {"frames", counted}};

  // surface metrics on a frame subset
  const Vec3 lo{-0.8, -0.8, -0.8}, hi{0.8, 0.8, 0.8};
  double ch = 0.0, nc = 0.0;
  std::size_t meshed = 0;
  for (std::size_t i = 0; i < ds.train_count; i += std::max<std::size_t>(1, cfg.eval_frame_stride)) {
    const TriangleMesh mesh = extract_isosurface(posed_sdf_field(st, ren, st.params, i),
                                                 cfg.mesh_resolution, lo, hi);
    if (mesh.triangles.empty()) throw EvalError("empty reconstruction at frame " + std::to_string(i));
    const OrientedPoints pred = sample_mesh_surface(mesh, cfg.eval_points, 1);
    const OrientedPoints oracle = oracle_surface_points(
        posed_capsules(ds.skeleton, ds.frames[i].pose_true), ds.spec.smooth_k,
        cfg.eval_points, 2);
    ch += chamfer(pred.points, oracle.points);
    nc += normal_consistency(pred, oracle);
    ++meshed;
  }
  report["surface"] = {{"chamfer", ch / meshed},
                       {"chamfer_cm", ch / meshed * ds.spec.cm_per_unit},
                       {"normal_consistency", nc / meshed},
                       {"frames", meshed}};

  // held-out view synthesis with the mean background latent
  const ParamStore holdout_params = with_holdout_poses(st.params, ds);
  double ps = 0.0;
  std::size_t held = 0;
  for (const DatasetFrame& fr : ds.frames) {
    if (!fr.holdout) continue;
    const FrameImages fi = render_frame(ren, holdout_params, fr.camera, fr.index,
                                        cfg.train.seed, true);
    ps += psnr(fi.composite, fr.rgb);
    ++held;
  }
  if (held > 0) report["psnr_holdout"] = ps / static_cast<double>(held);

  std::ofstream f(cfg.out_dir + "/metrics.json");
  f << report.dump(2) << '\n';
  std::printf("%s\n", report.dump(2).c_str());
}

bool cmd_gradcheck(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir);
  TrainState st = restore_state(cfg, ds);
  const Renderer ren = make_renderer(st, cfg.train.render);

  // 4-ray micro-batch through the full objective
  const DatasetFrame& fr = ds.frames[0];
  std::vector<std::pair<int, int>> pixels;
  Rng prng(3);
  for (int i = 0; i < 4; ++i)
    pixels.emplace_back(static_cast<int>(prng.index(fr.rgb.width)),
                        static_cast<int>(prng.index(fr.rgb.height)));
  Rng rng(4);
  const PreparedBatch batch = ren.prepare(generate_rays(fr.camera, pixels), st.params, 0, rng);
  Tensor gt({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c)
      gt(i, c) = fr.rgb.at(pixels[batch.order[i]].second, pixels[batch.order[i]].first, c);

  EikonalSpec espec = cfg.train.eikonal;
  espec.count = 16;
  Rng srng(5);
  const Tensor eik_pts = sample_eikonal_points(
      st.shape, st.params, st.params.value(pose_param_name(0)).data, espec, srng);

  auto f = [&](ParamStore& ps, bool want_grad) {
    Tape tape;
    auto vars = ps.attach(tape);
    Rng lrng(6);
    auto sl = total_loss(tape, vars, ren, batch, gt, ps, cfg.train.weights, 0.1, espec,
                         lrng, false, &eik_pts);
    if (want_grad) {
      tape.backward(sl.total);
      ps.pull_grads(tape, vars);
    }
    return sl.total.value()[0];
  };
  GradCheckOptions opts;
  opts.step = 5e-7;
  opts.tolerance = 1e-5;
  Rng pick(7);
  for (int k = 0; k < 32; ++k) {
    const std::size_t p = pick.index(st.params.entries().size());
    opts.subset.emplace_back(p, pick.index(st.params.entries()[p].value.size()));
  }
  const GradCheckReport rep = finite_difference_check(f, st.params, opts);
  for (const auto& e : rep.entries)
    std::printf("%-24s[%4zu] analytic % .6e numeric % .6e rel %.3e\n", e.param.c_str(),
                e.flat_index, e.analytic, e.numeric, e.rel_error);
  std::printf("gradcheck %s (max rel error %.3e)\n", rep.pass ? "PASS" : "FAIL",
              rep.max_rel_error);
  return rep.pass;
}

}  // namespace recon
