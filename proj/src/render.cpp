#include "recon/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace recon {

// ---- Camera / rays ----------------------------------------------------------

void Camera::validate() const {
  if (fx <= 0.0 || fy <= 0.0) throw RenderError("camera focal lengths must be positive");
  // rotation block orthonormality
  const auto& m = world_to_camera.m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[r * 4 + k] * m[c * 4 + k];
      const double want = r == c ? 1.0 : 0.0;
      if (std::fabs(dot - want) > 1e-6)
        throw RenderError("camera extrinsics rotation is not orthonormal");
    }
}

Vec3 Camera::center() const {
  // x_cam = R x + t  =>  center = -R^T t
  const auto& m = world_to_camera.m;
  const Vec3 t{m[3], m[7], m[11]};
  return -Vec3{m[0] * t.x + m[4] * t.y + m[8] * t.z,
               m[1] * t.x + m[5] * t.y + m[9] * t.z,
               m[2] * t.x + m[6] * t.y + m[10] * t.z};
}

Ray pixel_ray(const Camera& cam, double u, double v) {
  const Vec3 d_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  const auto& m = cam.world_to_camera.m;
  // world direction = R^T d_cam
  const Vec3 d{m[0] * d_cam.x + m[4] * d_cam.y + m[8] * d_cam.z,
               m[1] * d_cam.x + m[5] * d_cam.y + m[9] * d_cam.z,
               m[2] * d_cam.x + m[6] * d_cam.y + m[10] * d_cam.z};
  return {cam.center(), d.normalized()};
}

std::vector<Ray> generate_rays(const Camera& cam,
                               const std::vector<std::pair<int, int>>& pixels) {
  cam.validate();
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [px, py] : pixels) {
    if (px < 0 || py < 0 || static_cast<std::size_t>(px) >= cam.width ||
        static_cast<std::size_t>(py) >= cam.height)
      throw RenderError("pixel (" + std::to_string(px) + "," + std::to_string(py) +
                        ") outside image bounds");
    rays.push_back(pixel_ray(cam, px + 0.5, py + 0.5));
  }
  return rays;
}

std::optional<std::pair<double, double>> unit_sphere_interval(const Ray& ray) {
  const double b = ray.o.dot(ray.d);
  const double c = ray.o.norm2() - 1.0;
  const double disc = b * b - c;
  if (disc <= 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t0 = -b - s, t1 = -b + s;
  if (t1 <= 0.0) return std::nullopt;  // sphere entirely behind
  t0 = std::max(t0, 0.0);
  return std::make_pair(t0, t1);
}

std::string pose_param_name(std::size_t frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", frame);
  return std::string("pose/") + buf;
}

// ---- quadrature ---------------------------------------------------------------

Integrated integrate_samples(Tape& tape, Var densities, Var colors, const Tensor& deltas) {
  const std::size_t r = deltas.rows(), n = deltas.cols();
  if (densities.value().rows() != r * n)
    throw RenderError("integrate_samples: density rows do not match deltas");
  for (double d : deltas.data)
    if (!(d > 0.0)) throw RenderError("integrate_samples: non-positive sample interval");

  Var dl = densities.tape->constant(deltas, "deltas");
  Var sd = mul(reshape(densities, {r, n}), dl);
  Var acc = cumsum_exclusive_rows(sd);
  Var trans = vexp(neg(acc));
  Var absorb = offset(neg(vexp(neg(sd))), 1.0);  // 1 - exp(-sigma*delta)
  Integrated out;
  out.tau = mul(trans, absorb);
  out.alpha = row_sum(out.tau);
  Var wcol = reshape(out.tau, {r * n, 1});
  out.color = block_sum_rows(mul_colvec(colors, wcol), n);
  return out;
}

Var composite(Var c_h, Var alpha, Var c_b) {
  return add(c_h, mul_colvec(c_b, offset(neg(alpha), 1.0)));
}

Var normalize_rows(Tape& tape, Var x, double eps) {
  const std::size_t n = x.value().rows();
  Var norm = vsqrt(offset(row_sum(mul(x, x)), eps));
  Var ones = tape.constant(Tensor({n, 1}, 1.0), "ones");
  return mul_colvec(x, vdiv(ones, norm));
}

// ---- pipeline -------------------------------------------------------------------

Renderer::FrameState Renderer::frame_state(const ParamStore& params, std::size_t frame) const {
  FrameState fs;
  const std::string pname = pose_param_name(frame);
  fs.theta = params.has(pname) ? params.value(pname).data : zero_pose(*skel_);
  fs.bones = bone_transforms(*skel_, fs.theta);
  fs.posed_proxies = pose_proxies(*skel_, fs.bones);
  fs.alpha = std::exp(params.value("density/log_alpha")[0]);
  fs.beta = std::exp(params.value("density/log_beta")[0]);
  return fs;
}

namespace {

// Piecewise-linear inverse-CDF draw over bins [edges[i], edges[i+1]) with
// the given nonnegative masses.
double inverse_cdf(const std::vector<double>& edges, const std::vector<double>& cum,
                   double u) {
  const double total = cum.back();
  const double target = u * total;
  std::size_t lo = 0, hi = cum.size() - 1;
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (cum[mid] <= target)
      lo = mid;
    else
      hi = mid;
  }
  const double m0 = cum[lo], m1 = cum[lo + 1];
  const double frac = m1 > m0 ? (target - m0) / (m1 - m0) : 0.5;
  return edges[lo] + frac * (edges[lo + 1] - edges[lo]);
}

}  // namespace

PreparedRay Renderer::prepare_ray(const Ray& ray, const ParamStore& params,
                                  const FrameState& fs, Rng& rng) const {
  PreparedRay pr;
  pr.ray = ray;
  const std::size_t nb = skel_->bone_count();
  const auto iv = unit_sphere_interval(ray);
  const SampleConfig& sc = cfg_.samples;

  if (iv && iv->second - iv->first > 1e-6) {
    pr.hit = true;
    pr.t_enter = iv->first;
    pr.t_exit = iv->second;
    const double span = pr.t_exit - pr.t_enter;

    // stage 1: stratified uniform depths
    std::vector<double> t1(sc.n_uniform);
    for (std::size_t i = 0; i < sc.n_uniform; ++i)
      t1[i] = pr.t_enter + span * (static_cast<double>(i) + rng.uniform()) /
                               static_cast<double>(sc.n_uniform);

    auto canonical_points = [&](const std::vector<double>& ts, Tensor* w_out) {
      Tensor xc({ts.size(), 3});
      if (w_out) *w_out = Tensor({ts.size(), nb});
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const Vec3 xd = ray.o + ray.d * ts[i];
        auto inv = inverse_lbs(xd, *skel_, fs.bones, fs.posed_proxies);
        xc(i, 0) = inv.x_c.x;
        xc(i, 1) = inv.x_c.y;
        xc(i, 2) = inv.x_c.z;
        if (w_out)
          for (std::size_t b = 0; b < nb; ++b) (*w_out)(i, b) = inv.w_d[b];
      }
      return xc;
    };

    Tensor xc1 = canonical_points(t1, nullptr);
    Tensor sdf1 = eval_sdf_batch(*shape_, params, xc1, fs.theta);

    // Stage-1 quadrature over the stratification bins themselves (equal
    // width span/N_u, density probed at the sample inside each bin). With
    // vanishing density the floor term then makes the stage-2 distribution
    // exactly uniform over [t_enter, t_exit].
    const double bin = span / static_cast<double>(sc.n_uniform);
    std::vector<double> edges(sc.n_uniform + 1), cum(sc.n_uniform + 1, 0.0);
    for (std::size_t i = 0; i <= sc.n_uniform; ++i)
      edges[i] = pr.t_enter + bin * static_cast<double>(i);
    double acc = 0.0;
    for (std::size_t i = 0; i < sc.n_uniform; ++i) {
      const double sd = density_from_sdf(fs.alpha, fs.beta, sdf1[i]) * bin;
      const double tau = std::exp(-acc) * (1.0 - std::exp(-sd));
      acc += sd;
      cum[i + 1] = cum[i] + tau + sc.importance_floor / static_cast<double>(sc.n_uniform);
    }

    // stage 2: stratified inverse-CDF draws
    std::vector<double> ts = t1;
    for (std::size_t j = 0; j < sc.n_importance; ++j) {
      const double u = (static_cast<double>(j) + rng.uniform()) /
                       static_cast<double>(sc.n_importance);
      ts.push_back(inverse_cdf(edges, cum, u));
    }
    std::sort(ts.begin(), ts.end());
    for (std::size_t i = 1; i < ts.size(); ++i)
      if (ts[i] <= ts[i - 1]) ts[i] = ts[i - 1] + 1e-9;

    pr.depths = ts;
    pr.deltas.resize(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i)
      pr.deltas[i] = i + 1 < ts.size() ? ts[i + 1] - ts[i]
                                       : std::max(pr.t_exit - ts[i], 1e-6);

    pr.x_d = Tensor({ts.size(), 3});
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const Vec3 xd = ray.o + ray.d * ts[i];
      pr.x_d(i, 0) = xd.x;
      pr.x_d(i, 1) = xd.y;
      pr.x_d(i, 2) = xd.z;
    }
    Tensor xc = canonical_points(ts, &pr.w_d);
    Tensor sdf = eval_sdf_batch(*shape_, params, xc, fs.theta);
    pr.min_sdf = sdf[0];
    for (std::size_t i = 1; i < sdf.size(); ++i) pr.min_sdf = std::min(pr.min_sdf, sdf[i]);
  }

  // outer samples: 1/r equispaced in (0, 1/r_start]
  const double b = ray.o.dot(ray.d);
  const double o2 = ray.o.norm2();
  double r_start = 1.0;
  if (!pr.hit) {
    const double t_star = std::max(0.0, -b);
    r_start = std::max(1.0, (ray.o + ray.d * t_star).norm());
  }
  const std::size_t m = sc.n_outer;
  pr.outer_r.resize(m);
  pr.outer_q = Tensor({m, 4});
  pr.outer_deltas.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double inv = (1.0 / r_start) * static_cast<double>(m - j) / static_cast<double>(m);
    const double r = 1.0 / inv;
    pr.outer_r[j] = r;
    const double t = -b + std::sqrt(std::max(0.0, b * b + r * r - o2));
    const Vec3 x = ray.o + ray.d * t;
    // guard against fp landing a hair inside the unit sphere
    const Vec3 xs = x.norm() < 1.0 ? x.normalized() : x;
    auto q = invert_sphere(xs);
    for (int c = 0; c < 4; ++c) pr.outer_q(j, c) = q[static_cast<std::size_t>(c)];
  }
  for (std::size_t j = 0; j + 1 < m; ++j)
    pr.outer_deltas[j] = std::max(pr.outer_r[j + 1] - pr.outer_r[j], 1e-9);
  pr.outer_deltas[m - 1] = 1e10;
  return pr;
}

PreparedBatch Renderer::assemble(std::vector<PreparedRay> rays, std::size_t frame) const {
  PreparedBatch b;
  b.frame = frame;
  b.rays = std::move(rays);
  for (std::size_t i = 0; i < b.rays.size(); ++i)
    if (b.rays[i].hit) b.order.push_back(i);
  b.hit_count = b.order.size();
  for (std::size_t i = 0; i < b.rays.size(); ++i)
    if (!b.rays[i].hit) b.order.push_back(i);

  const std::size_t h = b.hit_count, miss = b.rays.size() - h;
  const std::size_t m = cfg_.samples.n_outer;
  const std::size_t nb = skel_->bone_count();
  const std::size_t n = h > 0 ? b.rays[b.order[0]].depths.size() : 0;

  b.inner_x_d = Tensor({h * n, 3});
  b.inner_w_d = Tensor({h * n, nb});
  b.inner_deltas = Tensor({h, n});
  b.outer_q_hit = Tensor({h * m, 4});
  b.outer_deltas_hit = Tensor({h, m});
  b.view_hit = Tensor({h * m, 3});
  b.outer_q_miss = Tensor({miss * m, 4});
  b.outer_deltas_miss = Tensor({miss, m});
  b.view_miss = Tensor({miss * m, 3});
  b.min_sdf.resize(h);

  for (std::size_t k = 0; k < b.rays.size(); ++k) {
    const PreparedRay& pr = b.rays[b.order[k]];
    if (k < h) {
      b.min_sdf[k] = pr.min_sdf;
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) b.inner_x_d(k * n + i, c) = pr.x_d(i, c);
        for (std::size_t c = 0; c < nb; ++c) b.inner_w_d(k * n + i, c) = pr.w_d(i, c);
        b.inner_deltas(k, i) = pr.deltas[i];
      }
    }
    const std::size_t row0 = (k < h ? k : k - h) * m;
    Tensor& q = k < h ? b.outer_q_hit : b.outer_q_miss;
    Tensor& dl = k < h ? b.outer_deltas_hit : b.outer_deltas_miss;
    Tensor& vw = k < h ? b.view_hit : b.view_miss;
    for (std::size_t j = 0; j < m; ++j) {
      for (int c = 0; c < 4; ++c) q(row0 + j, c) = pr.outer_q(j, c);
      dl(k < h ? k : k - h, j) = pr.outer_deltas[j];
      vw(row0 + j, 0) = pr.ray.d.x;
      vw(row0 + j, 1) = pr.ray.d.y;
      vw(row0 + j, 2) = pr.ray.d.z;
    }
  }
  return b;
}

PreparedBatch Renderer::prepare(const std::vector<Ray>& rays, const ParamStore& params,
                                std::size_t frame, Rng& rng) const {
  FrameState fs = frame_state(params, frame);
  std::vector<PreparedRay> prs;
  prs.reserve(rays.size());
  for (const Ray& r : rays) prs.push_back(prepare_ray(r, params, fs, rng));
  return assemble(std::move(prs), frame);
}

RenderOut Renderer::run(Tape& tape, const VarMap& vars, const PreparedBatch& batch,
                        bool mean_latent) const {
  const std::size_t h = batch.hit_count;
  const std::size_t miss = batch.rays.size() - h;
  const std::size_t m = cfg_.samples.n_outer;
  RenderOut out;

  auto bg_latent = [&](std::size_t rows) {
    return mean_latent ? bg_->mean_latent_rows(tape, vars, rows)
                       : bg_->latent_rows(tape, vars, batch.frame, rows);
  };

  Var cb_hit, cb_miss, color_hit;
  if (h > 0) {
    Var pose = vars.at(pose_param_name(batch.frame));
    Var mats = bone_transforms_tape(tape, *skel_, pose);
    WarpVars warp = inverse_lbs_tape(tape, mats, batch.inner_w_d, batch.inner_x_d);
    const std::size_t hn = batch.inner_x_d.rows();
    Var theta_rows = repeat_rows(pose, hn);
    auto ev = shape_->eval_with_grad(tape, vars, warp.x_c, theta_rows);
    auto vals = DensityParams::attach(vars);
    Var sigma = DensityParams::density(tape, ev.sdf, vals);
    Var n_unit = normalize_rows(tape, rotate_covector(warp.blended_inv, ev.grad));
    Var rgb_h = tex_->eval(tape, vars, warp.x_c, n_unit, theta_rows, ev.z);
    Integrated human = integrate_samples(tape, sigma, rgb_h, batch.inner_deltas);

    Var xq = tape.constant(batch.outer_q_hit, "outer_q");
    Var vw = tape.constant(batch.view_hit, "view");
    auto bge = bg_->eval(tape, vars, xq, vw, bg_latent(h * m));
    cb_hit = integrate_samples(tape, bge.sigma, bge.rgb, batch.outer_deltas_hit).color;
    color_hit = composite(human.color, human.alpha, cb_hit);

    out.c_h = human.color;
    out.alpha = human.alpha;
    out.tau = human.tau;
    out.inner_sdf = ev.sdf;
    out.inner_grad = ev.grad;
    out.inner_x_c = warp.x_c;
  }
  if (miss > 0) {
    Var xq = tape.constant(batch.outer_q_miss, "outer_q_miss");
    Var vw = tape.constant(batch.view_miss, "view_miss");
    auto bge = bg_->eval(tape, vars, xq, vw, bg_latent(miss * m));
    cb_miss = integrate_samples(tape, bge.sigma, bge.rgb, batch.outer_deltas_miss).color;
  }

  if (h > 0 && miss > 0) {
    out.color = concat_rows({color_hit, cb_miss});
    out.c_b = concat_rows({cb_hit, cb_miss});
    out.alpha = concat_rows({out.alpha, tape.constant(Tensor({miss, 1}, 0.0), "alpha0")});
  } else if (h > 0) {
    out.color = color_hit;
    out.c_b = cb_hit;
  } else {
    out.color = cb_miss;
    out.c_b = cb_miss;
    out.alpha = tape.constant(Tensor({miss, 1}, 0.0), "alpha0");
  }
  return out;
}

Renderer::ImagePair Renderer::render_image(const ParamStore& params, const Camera& cam,
                                           std::size_t frame, std::uint64_t seed,
                                           bool mean_latent) const {
  cam.validate();
  ImagePair out;
  out.rgb = Image(cam.width, cam.height, 3);
  out.opacity = Image(cam.width, cam.height, 1);
  FrameState fs = frame_state(params, frame);

  const std::size_t total = cam.width * cam.height;
  const std::size_t tile = std::max<std::size_t>(1, cfg_.tile_rays);
  for (std::size_t start = 0; start < total; start += tile) {
    const std::size_t count = std::min(tile, total - start);
    std::vector<PreparedRay> prs;
    prs.reserve(count);
    std::vector<std::size_t> pix(count);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = start + k;
      pix[k] = idx;
      const std::size_t x = idx % cam.width, y = idx / cam.width;
      // per-pixel stream: result independent of the tile schedule
      Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (idx + 1)));
      prs.push_back(prepare_ray(pixel_ray(cam, x + 0.5, y + 0.5), params, fs, rng));
    }
    PreparedBatch batch = assemble(std::move(prs), frame);
    Tape tape;
    auto vars = params.attach(tape);
    RenderOut r = run(tape, vars, batch, mean_latent);
    const Tensor& color = r.color.value();
    const Tensor& alpha = r.alpha.value();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = pix[batch.order[k]];
      const std::size_t x = idx % cam.width, y = idx / cam.width;
      for (std::size_t c = 0; c < 3; ++c) out.rgb.at(y, x, c) = color(k, c);
      out.opacity.at(y, x) = alpha(k, 0);
    }
  }
  return out;
}

Image render_mask(const Image& opacity, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw RenderError("mask threshold must lie in (0,1)");
  Image mask(opacity.width, opacity.height, 1);
  for (std::size_t i = 0; i < opacity.pixels.size(); ++i)
    mask.pixels[i] = opacity.pixels[i] >= threshold ? 1.0 : 0.0;
  return mask;
}

}  // namespace recon
