#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "recon/render.hpp"

using namespace recon;

namespace {

Camera test_camera() {
  Camera cam;
  cam.fx = 80.0;
  cam.fy = 80.0;
  cam.cx = 32.0;
  cam.cy = 32.0;
  cam.width = 64;
  cam.height = 64;
  cam.world_to_camera = Mat4::rotation_axis_angle({0.2, -0.4, 0.1}) *
                        Mat4::translation({0.1, -0.3, 0.5});
  return cam;
}

// Two-sided KS test p-value against U(lo, hi).
double ks_pvalue(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = (xs[i] - lo) / (hi - lo);
    d = std::max(d, std::fabs((i + 1.0) / n - f));
    d = std::max(d, std::fabs(f - i / n));
  }
  const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

// Shared tiny model used by the pipeline tests. Geometric init runs once.
struct TestScene {
  Skeleton skel = make_humanoid_skeleton(40, 1, 0.5);
  ShapeFieldConfig scfg;
  TextureFieldConfig tcfg;
  BackgroundFieldConfig bcfg;
  HumanShapeField shape;
  HumanTextureField tex;
  BackgroundField bg;
  ParamStore params;

  TestScene() {
    scfg.hidden = 32;
    scfg.hidden_layers = 2;
    scfg.encoding_octaves = 4;
    scfg.d_z = 8;
    scfg.pose_dim = skel.pose_dim();
    shape = HumanShapeField(scfg);
    tcfg.hidden = 24;
    tcfg.hidden_layers = 2;
    tcfg.d_z = 8;
    tcfg.pose_dim = skel.pose_dim();
    tex = HumanTextureField(tcfg);
    bcfg.hidden = 24;
    bcfg.hidden_layers = 2;
    bcfg.pos_octaves = 4;
    bcfg.dir_octaves = 2;
    bcfg.latent_dim = 4;
    bcfg.num_frames = 2;
    bg = BackgroundField(bcfg);

    geometric_init(shape, params, 0.5, 1, 700);
    Rng rng(2);
    tex.init_params(params, rng);
    bg.init_params(params, rng);
    DensityParams::init_params(params);
    params.add(pose_param_name(0), Tensor::from_vector(zero_pose(skel)));
  }
};

TestScene& scene() {
  static TestScene s;
  return s;
}

RenderConfig small_render_cfg() {
  RenderConfig rc;
  rc.samples.n_uniform = 12;
  rc.samples.n_importance = 12;
  rc.samples.n_outer = 8;
  return rc;
}

}  // namespace

TEST_CASE("generate_rays basics and project-back oracle") {
  Camera cam = test_camera();

  // pixel whose center hits the principal point -> optical axis
  // cx = 32.0 lies on the boundary between pixels 31 and 32; use explicit
  // image-plane coordinates for the axis check instead.
  Ray axis = pixel_ray(cam, cam.cx, cam.cy);
  const auto& m = cam.world_to_camera.m;
  const Vec3 zaxis{m[8], m[9], m[10]};  // third row of R = R^T e_z
  CHECK((axis.d - zaxis.normalized()).norm() <= 1e-12);

  std::vector<std::pair<int, int>> pix;
  for (int y = 0; y < 64; y += 9)
    for (int x = 0; x < 64; x += 9) pix.emplace_back(x, y);
  auto rays = generate_rays(cam, pix);
  for (const Ray& r : rays) CHECK(std::fabs(r.d.norm() - 1.0) <= 1e-9);

  // corner pixel reprojects through the intrinsics
  Ray corner = generate_rays(cam, {{0, 0}})[0];
  const Vec3 p_world = corner.o + corner.d * 2.7;
  const Vec3 p_cam = cam.world_to_camera.apply_point(p_world);
  const double u = cam.cx + cam.fx * p_cam.x / p_cam.z;
  const double v = cam.cy + cam.fy * p_cam.y / p_cam.z;
  CHECK(std::fabs(u - 0.5) <= 1e-6);
  CHECK(std::fabs(v - 0.5) <= 1e-6);

  CHECK_THROWS_AS(generate_rays(cam, {{64, 0}}), RenderError);
  CHECK_THROWS_AS(generate_rays(cam, {{0, -1}}), RenderError);

  Camera bad = cam;
  bad.fx = -1.0;
  CHECK_THROWS_AS(generate_rays(bad, {{0, 0}}), RenderError);
}

TEST_CASE("unit sphere intervals") {
  auto c = unit_sphere_interval({{0, 0, -2}, {0, 0, 1}});
  REQUIRE(c.has_value());
  CHECK(c->first == doctest::Approx(1.0));
  CHECK(c->second == doctest::Approx(3.0));
  CHECK(c->second - c->first == doctest::Approx(2.0));

  auto inside = unit_sphere_interval({{0, 0, 0}, {1, 0, 0}});
  REQUIRE(inside.has_value());
  CHECK(inside->first == doctest::Approx(0.0));
  CHECK(inside->second == doctest::Approx(1.0));

  CHECK_FALSE(unit_sphere_interval({{0, 2, -5}, {0, 0, 1}}).has_value());
  // sphere behind the origin
  CHECK_FALSE(unit_sphere_interval({{0, 0, 2}, {0, 0, 1}}).has_value());
}

TEST_CASE("quadrature examples and identity") {
  Tape tape;
  const std::size_t n = 2;

  // all-zero densities
  {
    Var sig = tape.constant(Tensor({n, 1}, 0.0), "sig");
    Var col = tape.constant(Tensor({n, 3}, 0.7), "col");
    Tensor dl({1, n}, 0.5);
    auto r = integrate_samples(tape, sig, col, dl);
    CHECK(r.alpha.value()[0] == doctest::Approx(0.0));
    for (double v : r.color.value().data) CHECK(v == doctest::Approx(0.0));
  }
  // opaque single sample
  {
    Tensor s({1, 1});
    s[0] = 20.0;
    Tensor c({1, 3});
    c[0] = 0.2;
    c[1] = 0.9;
    c[2] = 0.4;
    auto r = integrate_samples(tape, tape.constant(s, "s"), tape.constant(c, "c"),
                               Tensor({1, 1}, 1.0));
    CHECK(r.alpha.value()[0] == doctest::Approx(1.0 - std::exp(-20.0)));
    CHECK(r.color.value()[1] == doctest::Approx(0.9 * (1.0 - std::exp(-20.0))));
  }
  // two samples with optical depth ln2 each: tau = (1/2, 1/4)
  {
    Tensor s({2, 1}, std::log(2.0));
    Tensor c({2, 3});
    for (int j = 0; j < 3; ++j) {
      c(0, j) = 1.0;
      c(1, j) = 0.0;
    }
    auto r = integrate_samples(tape, tape.constant(s, "s"), tape.constant(c, "c"),
                               Tensor({1, 2}, 1.0));
    CHECK(r.tau.value()[0] == doctest::Approx(0.5));
    CHECK(r.tau.value()[1] == doctest::Approx(0.25));
    CHECK(r.alpha.value()[0] == doctest::Approx(0.75));
    CHECK(r.color.value()[0] == doctest::Approx(0.5));
  }
  // negative interval rejected
  {
    Tensor dl({1, 2}, 0.5);
    dl[1] = -0.1;
    Var sig = tape.constant(Tensor({2, 1}, 1.0), "sig");
    Var col = tape.constant(Tensor({2, 3}, 0.5), "col");
    CHECK_THROWS_AS(integrate_samples(tape, sig, col, dl), RenderError);
  }
  // algebraic identity: sum tau = 1 - exp(-sum sigma delta)
  {
    Rng rng(3);
    const std::size_t rr = 5, nn = 17;
    Tensor s({rr * nn, 1}), dl({rr, nn});
    for (double& v : s.data) v = rng.uniform(0.0, 8.0);
    for (double& v : dl.data) v = rng.uniform(1e-3, 0.3);
    Var col = tape.constant(Tensor({rr * nn, 3}, 0.5), "col");
    auto r = integrate_samples(tape, tape.constant(s, "s"), col, dl);
    for (std::size_t i = 0; i < rr; ++i) {
      double depth = 0.0, tsum = 0.0;
      for (std::size_t j = 0; j < nn; ++j) {
        depth += s(i * nn + j, 0) * dl(i, j);
        tsum += r.tau.value()(i, j);
        CHECK(r.tau.value()(i, j) >= 0.0);
      }
      CHECK(std::fabs(tsum - (1.0 - std::exp(-depth))) <= 1e-9);
      CHECK(tsum <= 1.0 + 1e-6);
    }
  }
}

TEST_CASE("composite examples and bounds") {
  Tape tape;
  auto mk = [&](std::vector<double> v, std::size_t c) {
    Tensor t({1, c});
    t.data = v;
    return tape.constant(t, "t");
  };
  // alpha = 0 -> C = C^B ; alpha = 1 -> C = C^H
  CHECK(composite(mk({0, 0, 0}, 3), mk({0}, 1), mk({0.3, 0.6, 0.9}, 3)).value()[1] ==
        doctest::Approx(0.6));
  CHECK(composite(mk({0.2, 0.5, 0.8}, 3), mk({1}, 1), mk({0.9, 0.9, 0.9}, 3)).value()[2] ==
        doctest::Approx(0.8));
  // hand-computed blend
  auto c = composite(mk({0.3, 0.3, 0.3}, 3), mk({0.75}, 1), mk({0.4, 0.8, 0.0}, 3)).value();
  CHECK(c[0] == doctest::Approx(0.4));
  CHECK(c[1] == doctest::Approx(0.5));
  CHECK(c[2] == doctest::Approx(0.3));

  // bounds property: colors in [0,1] => C in [0,1]
  Rng rng(4);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t nn = 6;
    Tensor s({nn, 1}), col({nn, 3}), dl({1, nn});
    for (double& v : s.data) v = rng.uniform(0.0, 30.0);
    for (double& v : col.data) v = rng.uniform(0.0, 1.0);
    for (double& v : dl.data) v = rng.uniform(1e-3, 0.5);
    auto h = integrate_samples(tape, tape.constant(s, "s"), tape.constant(col, "c"), dl);
    Tensor cb({1, 3});
    for (double& v : cb.data) v = rng.uniform(0.0, 1.0);
    auto out = composite(h.color, h.alpha, tape.constant(cb, "cb")).value();
    for (double v : out.data) {
      CHECK(v >= -1e-12);
      CHECK(v <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("quadrature converges to a dense reference on a smooth field") {
  // analytic density/color along a fixed ray
  auto sigma_f = [](double t) { return 6.0 * std::exp(-8.0 * (t - 1.3) * (t - 1.3)); };
  auto color_f = [](double t, int ch) {
    return 0.5 + 0.4 * std::sin(1.7 * t + ch);
  };
  const double t0 = 0.4, t1 = 2.6;

  auto render_n = [&](std::size_t n) {
    Tape tape;
    Tensor s({n, 1}), c({n, 3}), dl({1, n});
    const double step = (t1 - t0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = t0 + (i + 0.5) * step;
      s(i, 0) = sigma_f(t);
      for (int ch = 0; ch < 3; ++ch) c(i, ch) = color_f(t, ch);
      dl(0, i) = step;
    }
    auto r = integrate_samples(tape, tape.constant(s, "s"), tape.constant(c, "c"), dl);
    return r.color.value();
  };

  Tensor ref = render_n(640);
  double prev_err = 1e9;
  for (std::size_t n : {16, 32, 64}) {
    Tensor got = render_n(n);
    double err = 0.0;
    for (int ch = 0; ch < 3; ++ch) err = std::max(err, std::fabs(got[ch] - ref[ch]));
    CHECK(err < prev_err);  // refinement shrinks the error
    if (n >= 32) CHECK(err <= 1e-2);
    prev_err = err;
  }
}

TEST_CASE("inner sampling: structure, miss handling, outer radii") {
  TestScene& sc = scene();
  RenderConfig rc = small_render_cfg();
  rc.samples.n_outer = 2;
  Renderer ren(&sc.skel, &sc.shape, &sc.tex, &sc.bg, rc);

  Rng rng(5);
  auto fs = ren.frame_state(sc.params, 0);

  Ray through{{0, 0, -0.9}, {0, 0, 1}};
  auto pr = ren.prepare_ray(through, sc.params, fs, rng);
  REQUIRE(pr.hit);
  CHECK(pr.depths.size() == rc.samples.n_uniform + rc.samples.n_importance);
  for (std::size_t i = 1; i < pr.depths.size(); ++i) CHECK(pr.depths[i] > pr.depths[i - 1]);
  CHECK(pr.depths.front() >= pr.t_enter);
  CHECK(pr.depths.back() <= pr.t_exit);
  CHECK(pr.min_sdf < 0.0);  // passes through the initialized sphere

  // spec example: M=2 from the sphere exit -> r in {1, 2}
  CHECK(pr.outer_r[0] == doctest::Approx(1.0));
  CHECK(pr.outer_r[1] == doctest::Approx(2.0));
  for (double r : pr.outer_r) CHECK(r >= 1.0);
  CHECK(pr.outer_deltas.back() == doctest::Approx(1e10));

  // ray that misses the unit sphere entirely
  Ray miss{{0, 3, -4}, Vec3{0, 0.5, 1}.normalized()};
  auto pm = ren.prepare_ray(miss, sc.params, fs, rng);
  CHECK_FALSE(pm.hit);
  CHECK(pm.depths.empty());
  for (std::size_t j = 0; j < pm.outer_q.rows(); ++j) {
    CHECK(pm.outer_q(j, 3) <= 1.0 + 1e-12);
    const Vec3 dir{pm.outer_q(j, 0), pm.outer_q(j, 1), pm.outer_q(j, 2)};
    CHECK(std::fabs(dir.norm() - 1.0) <= 1e-9);
  }
}

TEST_CASE("stage-2 draws are uniform under constant (vanishing) density") {
  TestScene& sc = scene();
  RenderConfig rc;
  rc.samples.n_uniform = 32;
  rc.samples.n_importance = 10000;
  rc.samples.n_outer = 2;
  Renderer ren(&sc.skel, &sc.shape, &sc.tex, &sc.bg, rc);

  // push alpha to ~0 so stage-1 weights degenerate to the uniform floor
  ParamStore params = sc.params;
  params.value("density/log_alpha")[0] = std::log(1e-12);

  Rng rng(6);
  auto fs = ren.frame_state(params, 0);
  Ray through{{0, 0, -0.9}, {0, 0, 1}};
  auto pr = ren.prepare_ray(through, params, fs, rng);
  REQUIRE(pr.hit);
  const double p = ks_pvalue(pr.depths, pr.t_enter, pr.t_exit);
  MESSAGE("KS p-value: ", p);
  CHECK(p > 0.01);
}

TEST_CASE("pipeline: hit/miss composition and gradients flow") {
  TestScene& sc = scene();
  RenderConfig rc = small_render_cfg();
  Renderer ren(&sc.skel, &sc.shape, &sc.tex, &sc.bg, rc);

  std::vector<Ray> rays;
  rays.push_back({{0, 0, -0.9}, {0, 0, 1}});                       // hits
  rays.push_back({{0, 3, -4}, Vec3{0, 0.5, 1}.normalized()});      // misses
  rays.push_back({{0.05, 0, -0.9}, Vec3{0.02, 0.01, 1}.normalized()});  // hits

  Rng rng(7);
  auto batch = ren.prepare(rays, sc.params, 0, rng);
  CHECK(batch.hit_count == 2);

  Tape tape;
  auto vars = sc.params.attach(tape);
  auto out = ren.run(tape, vars, batch);
  REQUIRE(out.color.value().rows() == 3);

  // miss ray: alpha exactly 0 and C = C^B
  const std::size_t miss_row = 2;  // hits first in `order`
  CHECK(batch.order[miss_row] == 1);
  CHECK(out.alpha.value()(miss_row, 0) == 0.0);
  for (int c = 0; c < 3; ++c)
    CHECK(out.color.value()(miss_row, c) ==
          doctest::Approx(out.c_b.value()(miss_row, c)));

  // center ray is opaque after geometric init
  CHECK(out.alpha.value()(0, 0) > 0.5);
  for (double a : out.alpha.value().data) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0 + 1e-6);
  }

  // gradients reach pose, fields, density, and latents
  Var loss = mean_all(out.color);
  tape.backward(loss);
  ParamStore grads = sc.params;
  grads.zero_grads();
  grads.pull_grads(tape, vars);
  double pose_g = 0.0, sdf_g = 0.0, lat_g = 0.0, den_g = 0.0;
  for (double v : grads.grad(pose_param_name(0)).data) pose_g += std::fabs(v);
  for (double v : grads.grad("sdf/W0").data) sdf_g += std::fabs(v);
  for (double v : grads.grad(sc.bg.latent_name(0)).data) lat_g += std::fabs(v);
  den_g = std::fabs(grads.grad("density/log_beta")[0]);
  CHECK(pose_g > 0.0);
  CHECK(sdf_g > 0.0);
  CHECK(lat_g > 0.0);
  CHECK(den_g > 0.0);
}

TEST_CASE("render_image: determinism, tiling independence, dimensions") {
  TestScene& sc = scene();
  RenderConfig rc = small_render_cfg();
  rc.samples.n_uniform = 6;
  rc.samples.n_importance = 6;
  rc.samples.n_outer = 4;
  rc.tile_rays = 64;
  Renderer ren(&sc.skel, &sc.shape, &sc.tex, &sc.bg, rc);

  Camera cam;
  cam.fx = cam.fy = 12.0;
  cam.cx = cam.cy = 8.0;
  cam.width = cam.height = 16;
  cam.world_to_camera = Mat4::translation({0, 0, 0.9});  // camera at z=-0.9

  auto a = ren.render_image(sc.params, cam, 0, 42);
  CHECK(a.rgb.width == 16);
  CHECK(a.rgb.height == 16);
  CHECK(a.opacity.channels == 1);

  // sphere visible at the image center
  CHECK(a.opacity.at(8, 8) > 0.5);

  auto b = ren.render_image(sc.params, cam, 0, 42);
  for (std::size_t i = 0; i < a.rgb.pixels.size(); ++i)
    CHECK(a.rgb.pixels[i] == b.rgb.pixels[i]);

  RenderConfig rc2 = rc;
  rc2.tile_rays = 7;  // awkward tile size must not change anything
  Renderer ren2(&sc.skel, &sc.shape, &sc.tex, &sc.bg, rc2);
  auto c = ren2.render_image(sc.params, cam, 0, 42);
  for (std::size_t i = 0; i < a.rgb.pixels.size(); ++i)
    CHECK(a.rgb.pixels[i] == c.rgb.pixels[i]);
  for (std::size_t i = 0; i < a.opacity.pixels.size(); ++i)
    CHECK(a.opacity.pixels[i] == c.opacity.pixels[i]);
}

TEST_CASE("render_mask") {
  Image op(4, 4, 1, 0.0);
  Image empty = render_mask(op);
  for (double v : empty.pixels) CHECK(v == 0.0);

  Image op1(4, 4, 1, 1.0);
  Image full = render_mask(op1);
  for (double v : full.pixels) CHECK(v == 1.0);

  op.at(1, 2) = 0.7;
  Image m = render_mask(op, 0.5);
  CHECK(m.at(1, 2) == 1.0);
  CHECK(m.at(0, 0) == 0.0);

  CHECK_THROWS_AS(render_mask(op, 0.0), RenderError);
  CHECK_THROWS_AS(render_mask(op, 1.0), RenderError);
}
