#include "recon/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "recon/io.hpp"
#include "recon/rng.hpp"

namespace recon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string frame_file(const char* stem, std::size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", stem, index, ext);
  return buf;
}

Vec3 closest_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.norm2();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return a + ab * t;
}

double capsule_sdf(const Capsule& c, const Vec3& p) {
  return (p - closest_on_segment(p, c.a, c.b)).norm() - c.radius;
}

Vec3 capsule_grad(const Capsule& c, const Vec3& p) {
  const Vec3 d = p - closest_on_segment(p, c.a, c.b);
  const double n = d.norm();
  return n > 1e-12 ? d / n : Vec3{1, 0, 0};
}

// Lambert-style banded shading of the figure; view-independent so the learned
// texture field (which sees position, normal, pose) can represent it.
Vec3 human_color(const std::vector<Capsule>& caps, const Vec3& p, const Vec3& n) {
  static const Vec3 palette[] = {
      {0.82, 0.35, 0.30}, {0.30, 0.62, 0.82}, {0.35, 0.78, 0.40},
      {0.85, 0.72, 0.30}, {0.62, 0.40, 0.80},
  };
  std::size_t nearest = 0;
  double best = kInf;
  double axis_t = 0.0;
  for (std::size_t b = 0; b < caps.size(); ++b) {
    const double d = capsule_sdf(caps[b], p);
    if (d < best) {
      best = d;
      nearest = b;
      const Vec3 ab = caps[b].b - caps[b].a;
      axis_t = ab.norm2() > 0.0 ? (p - caps[b].a).dot(ab) / ab.norm2() : 0.0;
    }
  }
  const Vec3 albedo = palette[nearest % 5];
  const double stripe =
      static_cast<long>(std::floor(axis_t * 6.0)) % 2 == 0 ? 1.0 : 0.72;
  const Vec3 light = Vec3{0.4, 0.8, 0.45}.normalized();
  const double shade = 0.35 + 0.65 * std::max(0.0, n.dot(light));
  return albedo * (stripe * shade);
}

struct TraceHit {
  bool hit = false;
  double t = 0.0;
  Vec3 point, normal;
};

TraceHit sphere_trace(const std::vector<Capsule>& caps, double k, const Ray& ray) {
  TraceHit out;
  const auto span = unit_sphere_interval(ray);
  if (!span) return out;
  double t = span->first;
  double prev = t;
  for (int it = 0; it < 256 && t <= span->second + 1e-3; ++it) {
    const double d = analytic_sdf(caps, ray.o + ray.d * t, k);
    if (d < 1e-6) {
      // bisect the bracketing interval for a clean depth
      double lo = prev, hi = t;
      for (int b = 0; b < 30; ++b) {
        const double mid = 0.5 * (lo + hi);
        (analytic_sdf(caps, ray.o + ray.d * mid, k) > 0.0 ? lo : hi) = mid;
      }
      out.hit = true;
      out.t = 0.5 * (lo + hi);
      out.point = ray.o + ray.d * out.t;
      out.normal = analytic_sdf_grad(caps, out.point, k).normalized();
      return out;
    }
    prev = t;
    t += std::max(d, 5e-5);
  }
  return out;
}

void trace_frame(const SyntheticSceneSpec& spec, const std::vector<Capsule>& caps,
                 DatasetFrame& fr) {
  fr.rgb = Image(spec.width, spec.height, 3);
  fr.mask = Image(spec.width, spec.height, 1);
  fr.depth = Image(spec.width, spec.height, 1, kInf);
#pragma omp parallel for schedule(static)
  for (long y = 0; y < static_cast<long>(spec.height); ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      const Ray ray = pixel_ray(fr.camera, x + 0.5, y + 0.5);
      const TraceHit hit = sphere_trace(caps, spec.smooth_k, ray);
      Vec3 c;
      if (hit.hit) {
        c = human_color(caps, hit.point, hit.normal);
        fr.mask.at(y, x) = 1.0;
        fr.depth.at(y, x) = hit.t;
      } else {
        c = background_color(spec, ray, fr.illumination);
      }
      for (int ch = 0; ch < 3; ++ch) fr.rgb.at(y, x, ch) = std::clamp(c[ch], 0.0, 1.0);
    }
  }
}

nlohmann::json camera_json(const Camera& cam) {
  return {{"fx", cam.fx},       {"fy", cam.fy},
          {"cx", cam.cx},       {"cy", cam.cy},
          {"width", cam.width}, {"height", cam.height},
          {"world_to_camera", cam.world_to_camera.m}};
}

Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.fx = j.at("fx");
  cam.fy = j.at("fy");
  cam.cx = j.at("cx");
  cam.cy = j.at("cy");
  cam.width = j.at("width");
  cam.height = j.at("height");
  cam.world_to_camera.m = j.at("world_to_camera").get<std::array<double, 16>>();
  return cam;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (frames < 1) throw SyntheticError("scene spec: frames must be >= 1");
  if (width < 8 || height < 8) throw SyntheticError("scene spec: image too small");
  if (bg_radius < 4.0) throw SyntheticError("scene spec: background radius must be >= 4");
  if (!(orbit_radius > 0.0 && orbit_radius < 1.0))
    throw SyntheticError("scene spec: camera orbit must stay inside the unit sphere");
  if (!(fov_deg > 10.0 && fov_deg < 170.0)) throw SyntheticError("scene spec: bad fov");
  if (!(figure_scale > 0.0)) throw SyntheticError("scene spec: bad figure scale");
  if (ground_y > -1.0)
    throw SyntheticError("scene spec: ground band must sit below the unit sphere");
  if (illumination_jitter < 0.0 || illumination_jitter >= 1.0)
    throw SyntheticError("scene spec: bad illumination jitter");
  if (smooth_k < 1.0) throw SyntheticError("scene spec: smooth-min k must be >= 1");
}

Skeleton scene_skeleton(const SyntheticSceneSpec& spec) {
  return make_humanoid_skeleton(spec.proxies_per_bone, spec.skeleton_seed,
                                spec.figure_scale);
}

std::vector<Capsule> posed_capsules(const Skeleton& skel, const PoseParams& pose) {
  const std::vector<Mat4> bones = bone_transforms(skel, pose);
  std::vector<Capsule> out(skel.capsules.size());
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].a = bones[b].apply_point(skel.capsules[b].a);
    out[b].b = bones[b].apply_point(skel.capsules[b].b);
    out[b].radius = skel.capsules[b].radius;
  }
  return out;
}

double analytic_sdf(const std::vector<Capsule>& caps, const Vec3& x, double k) {
  double dmin = kInf;
  for (const Capsule& c : caps) dmin = std::min(dmin, capsule_sdf(c, x));
  double acc = 0.0;
  for (const Capsule& c : caps) acc += std::exp(-k * (capsule_sdf(c, x) - dmin));
  return dmin - std::log(acc) / k;
}

Vec3 analytic_sdf_grad(const std::vector<Capsule>& caps, const Vec3& x, double k) {
  double dmin = kInf;
  for (const Capsule& c : caps) dmin = std::min(dmin, capsule_sdf(c, x));
  Vec3 g;
  double acc = 0.0;
  for (const Capsule& c : caps) {
    const double w = std::exp(-k * (capsule_sdf(c, x) - dmin));
    acc += w;
    g += capsule_grad(c, x) * w;
  }
  return g / acc;
}

PoseParams walking_pose(const SyntheticSceneSpec& spec, const Skeleton& skel,
                        std::size_t frame) {
  PoseParams pose = zero_pose(skel);
  const double u = 2.0 * M_PI * static_cast<double>(frame) /
                   static_cast<double>(spec.frames);
  const double swing = 0.5 * std::sin(u);
  // bone order: torso, right arm, left arm, right leg, left leg
  pose[0 * 3 + 1] = 0.1 * std::sin(u);   // torso twist about y
  pose[1 * 3 + 1] = swing;               // arms swing fore/aft about y
  pose[2 * 3 + 1] = -swing;
  pose[3 * 3 + 0] = -swing;              // legs counter-swing about x
  pose[4 * 3 + 0] = swing;
  pose[3 * skel.bone_count() + 1] = 0.02 * std::sin(2.0 * u);  // vertical bob
  return pose;
}

Camera orbit_camera(const SyntheticSceneSpec& spec, std::size_t index) {
  double az;
  if (index < spec.frames) {
    az = 2.0 * M_PI * static_cast<double>(index) / static_cast<double>(spec.frames);
  } else {
    // held-out cameras sit between training azimuths
    const std::size_t j = index - spec.frames;
    const double stride = static_cast<double>(spec.frames) /
                          static_cast<double>(std::max<std::size_t>(1, spec.holdout));
    az = 2.0 * M_PI * (static_cast<double>(j) * stride + 0.5) /
         static_cast<double>(spec.frames);
  }
  const double el = spec.orbit_elevation_deg * M_PI / 180.0;
  const Vec3 c = Vec3{std::cos(el) * std::cos(az), std::sin(el),
                      std::cos(el) * std::sin(az)} *
                 spec.orbit_radius;

  const Vec3 z = (-c).normalized();             // optical axis toward the origin
  const Vec3 x = z.cross(Vec3{0, 1, 0}).normalized();
  const Vec3 y = z.cross(x);                    // points down in world space

  Camera cam;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.fx = cam.fy = 0.5 * static_cast<double>(spec.width) /
                    std::tan(0.5 * spec.fov_deg * M_PI / 180.0);
  cam.cx = 0.5 * static_cast<double>(spec.width);
  cam.cy = 0.5 * static_cast<double>(spec.height);
  auto& m = cam.world_to_camera.m;
  const Vec3 rows[3] = {x, y, z};
  for (int r = 0; r < 3; ++r) {
    m[r * 4 + 0] = rows[r].x;
    m[r * 4 + 1] = rows[r].y;
    m[r * 4 + 2] = rows[r].z;
    m[r * 4 + 3] = -rows[r].dot(c);
  }
  return cam;
}

Vec3 background_color(const SyntheticSceneSpec& spec, const Ray& ray, double illumination) {
  Vec3 c;
  bool ground = false;
  if (ray.d.y < -1e-9) {
    const double tg = (spec.ground_y - ray.o.y) / ray.d.y;
    const Vec3 p = ray.o + ray.d * tg;
    if (tg > 0.0 && p.norm() < spec.bg_radius) {
      const bool parity = (static_cast<long>(std::floor(p.x / 0.4)) +
                           static_cast<long>(std::floor(p.z / 0.4))) % 2 == 0;
      c = parity ? Vec3{0.55, 0.50, 0.45} : Vec3{0.30, 0.28, 0.25};
      ground = true;
    }
  }
  if (!ground) {
    // far-sphere hit: |o + t d| = R, take the forward root
    const double b = ray.o.dot(ray.d);
    const double t = -b + std::sqrt(b * b - (ray.o.norm2() - spec.bg_radius * spec.bg_radius));
    const Vec3 p = ray.o + ray.d * t;
    const double u = std::atan2(p.z, p.x);
    const double v = std::asin(std::clamp(p.y / spec.bg_radius, -1.0, 1.0));
    const double cell = M_PI / 8.0;
    const bool parity = (static_cast<long>(std::floor(u / cell)) +
                         static_cast<long>(std::floor(v / cell))) % 2 == 0;
    const double s = 0.5 * (p.y / spec.bg_radius + 1.0);
    const Vec3 lo{0.15, 0.20, 0.40}, hi{0.70, 0.75, 0.90};
    c = lo + (hi - lo) * s + Vec3{1, 1, 1} * (parity ? 0.08 : -0.08);
  }
  return c * illumination;
}

Dataset generate_dataset(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.skeleton = scene_skeleton(spec);
  ds.train_count = spec.frames;
  const std::size_t total = spec.frames + spec.holdout;
  ds.frames.resize(total);

  // Draw all per-frame randomness up front so frame tracing stays order-free.
  Rng rng(seed);
  const double noise_rad = spec.pose_noise_deg * M_PI / 180.0;
  for (std::size_t i = 0; i < total; ++i) {
    DatasetFrame& fr = ds.frames[i];
    fr.index = i;
    fr.holdout = i >= spec.frames;
    fr.camera = orbit_camera(spec, i);
    fr.pose_true = walking_pose(spec, ds.skeleton, i);
    fr.illumination =
        fr.holdout ? 1.0 : 1.0 + spec.illumination_jitter * (2.0 * rng.uniform() - 1.0);
    fr.pose_noisy = fr.pose_true;
    if (!fr.holdout && noise_rad > 0.0)
      for (std::size_t j = 0; j < 3 * ds.skeleton.bone_count(); ++j)
        fr.pose_noisy[j] += rng.normal(0.0, noise_rad);
  }

  for (std::size_t i = 0; i < total; ++i) {
    DatasetFrame& fr = ds.frames[i];
    const std::vector<Capsule> caps = posed_capsules(ds.skeleton, fr.pose_true);
    for (const Capsule& c : caps)
      if (std::max(c.a.norm(), c.b.norm()) + c.radius > 0.995)
        throw SyntheticError("posed figure leaves the unit sphere at frame " +
                             std::to_string(i));
    trace_frame(spec, caps, fr);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["train_count"] = ds.train_count;
  const SyntheticSceneSpec& s = ds.spec;
  manifest["spec"] = {{"proxies_per_bone", s.proxies_per_bone},
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
                      {"cm_per_unit", s.cm_per_unit}};
  manifest["frames"] = nlohmann::json::array();
  for (const DatasetFrame& fr : ds.frames) {
    const std::string rgb = frame_file("rgb", fr.index, "png");
    const std::string mask = frame_file("mask", fr.index, "png");
    const std::string depth = frame_file("depth", fr.index, "f32");
    manifest["frames"].push_back({{"index", fr.index},
                                  {"holdout", fr.holdout},
                                  {"illumination", fr.illumination},
                                  {"camera", camera_json(fr.camera)},
                                  {"pose_true", fr.pose_true},
                                  {"pose_noisy", fr.pose_noisy},
                                  {"rgb", rgb},
                                  {"mask", mask},
                                  {"depth", depth}});
    write_png(dir + "/" + rgb, fr.rgb);
    write_png(dir + "/" + mask, fr.mask);
    write_f32_blob(dir + "/" + depth, fr.depth.pixels);
  }
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw SyntheticError("cannot write manifest in " + dir);
  f << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw SyntheticError("cannot open manifest in " + dir);
  nlohmann::json manifest;
  try {
    f >> manifest;
    Dataset ds;
    const nlohmann::json& js = manifest.at("spec");
    SyntheticSceneSpec& s = ds.spec;
    s.proxies_per_bone = js.at("proxies_per_bone");
    s.skeleton_seed = js.at("skeleton_seed");
    s.figure_scale = js.at("figure_scale");
    s.frames = js.at("frames");
    s.holdout = js.at("holdout");
    s.width = js.at("width");
    s.height = js.at("height");
    s.orbit_radius = js.at("orbit_radius");
    s.orbit_elevation_deg = js.at("orbit_elevation_deg");
    s.fov_deg = js.at("fov_deg");
    s.bg_radius = js.at("bg_radius");
    s.ground_y = js.at("ground_y");
    s.illumination_jitter = js.at("illumination_jitter");
    s.pose_noise_deg = js.at("pose_noise_deg");
    s.smooth_k = js.at("smooth_k");
    s.cm_per_unit = js.at("cm_per_unit");
    ds.train_count = manifest.at("train_count");
    ds.skeleton = scene_skeleton(s);
    for (const auto& jf : manifest.at("frames")) {
      DatasetFrame fr;
      fr.index = jf.at("index");
      fr.holdout = jf.at("holdout");
      fr.illumination = jf.at("illumination");
      fr.camera = camera_from_json(jf.at("camera"));
      fr.pose_true = jf.at("pose_true").get<PoseParams>();
      fr.pose_noisy = jf.at("pose_noisy").get<PoseParams>();
      fr.rgb = read_png(dir + "/" + jf.at("rgb").get<std::string>());
      fr.mask = read_png(dir + "/" + jf.at("mask").get<std::string>());
      fr.depth = Image(s.width, s.height, 1);
      fr.depth.pixels = read_f32_blob(dir + "/" + jf.at("depth").get<std::string>());
      if (fr.depth.pixels.size() != s.width * s.height)
        throw SyntheticError("depth blob size mismatch in " + dir);
      ds.frames.push_back(std::move(fr));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw SyntheticError("bad manifest in " + dir + ": " + e.what());
  }
}

OrientedPoints oracle_surface_points(const std::vector<Capsule>& caps, double k,
                                     std::size_t count, std::uint64_t seed) {
  if (count < 1) throw SyntheticError("oracle_surface_points: count must be >= 1");
  // area-weighted capsule choice (cylinder side + spherical caps)
  std::vector<double> cdf(caps.size());
  double total = 0.0;
  for (std::size_t b = 0; b < caps.size(); ++b) {
    const double len = (caps[b].b - caps[b].a).norm();
    total += 2.0 * M_PI * caps[b].radius * len + 4.0 * M_PI * caps[b].radius * caps[b].radius;
    cdf[b] = total;
  }

  Rng rng(seed);
  OrientedPoints out;
  out.points = Tensor({count, 3});
  out.normals = Tensor({count, 3});
  std::size_t got = 0;
  while (got < count) {
    const double pick = rng.uniform(0.0, total);
    const std::size_t b =
        std::lower_bound(cdf.begin(), cdf.end(), pick) - cdf.begin();
    const Capsule& c = caps[b];
    // point on the single-capsule surface, then Newton-project onto the
    // smooth-min surface
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    dir = dir.normalized();
    const double t = rng.uniform(-0.2, 1.2);
    const Vec3 base = c.a + (c.b - c.a) * std::clamp(t, 0.0, 1.0);
    Vec3 x = base + dir * c.radius;

    bool ok = false;
    for (int it = 0; it < 20; ++it) {
      const double d = analytic_sdf(caps, x, k);
      if (std::fabs(d) <= 1e-4) {
        ok = true;
        break;
      }
      const Vec3 g = analytic_sdf_grad(caps, x, k);
      x = x - g * (d / std::max(g.norm2(), 1e-8));
    }
    if (!ok) continue;
    const Vec3 n = analytic_sdf_grad(caps, x, k).normalized();
    out.points(got, 0) = x.x;
    out.points(got, 1) = x.y;
    out.points(got, 2) = x.z;
    out.normals(got, 0) = n.x;
    out.normals(got, 1) = n.y;
    out.normals(got, 2) = n.z;
    ++got;
  }
  return out;
}

}  // namespace recon
