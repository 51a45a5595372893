#include "recon/body.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recon/rng.hpp"

namespace recon {

PoseParams zero_pose(const Skeleton& skel) { return PoseParams(skel.pose_dim(), 0.0); }

namespace {

Vec3 any_perpendicular(const Vec3& v) {
  const Vec3 axis = std::fabs(v.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  return v.cross(axis).normalized();
}

double capsule_surface_distance(const Vec3& p, const Capsule& c) {
  return std::max(0.0, point_segment_distance(p, c.a, c.b) - c.radius);
}

std::vector<double> canonical_falloff_weights(const Skeleton& skel, const Vec3& p, double sigma) {
  std::vector<double> w(skel.bone_count());
  double total = 0.0;
  for (std::size_t b = 0; b < skel.bone_count(); ++b) {
    const double d = capsule_surface_distance(p, skel.capsules[b]);
    w[b] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += w[b];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

Skeleton make_humanoid_skeleton(int proxies_per_bone, std::uint64_t seed, double scale) {
  Skeleton s;
  auto add_bone = [&](int parent, Vec3 joint, Vec3 tip, double radius) {
    s.parent.push_back(parent);
    s.rest_joint.push_back(joint * scale);
    s.capsules.push_back({joint * scale, tip * scale, radius * scale});
  };
  // torso (root), arms, legs
  add_bone(-1, {0.0, -0.25, 0.0}, {0.0, 0.55, 0.0}, 0.16);
  add_bone(0, {0.14, 0.44, 0.0}, {0.62, 0.44, 0.0}, 0.06);
  add_bone(0, {-0.14, 0.44, 0.0}, {-0.62, 0.44, 0.0}, 0.06);
  add_bone(0, {0.10, -0.25, 0.0}, {0.10, -0.82, 0.0}, 0.07);
  add_bone(0, {-0.10, -0.25, 0.0}, {-0.10, -0.82, 0.0}, 0.07);

  const double sigma = 0.06 * scale;
  Rng rng(seed);
  for (std::size_t b = 0; b < s.bone_count(); ++b) {
    const Capsule& cap = s.capsules[b];
    const Vec3 axis = cap.b - cap.a;
    const Vec3 u = any_perpendicular(axis);
    const Vec3 v = axis.normalized().cross(u);
    for (int i = 0; i < proxies_per_bone; ++i) {
      const double t = rng.uniform(-0.08, 1.08);
      Vec3 p;
      if (t >= 0.0 && t <= 1.0) {
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        p = cap.a + axis * t + (u * std::cos(phi) + v * std::sin(phi)) * cap.radius;
      } else {
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        dir = dir.normalized();
        const Vec3 end = t < 0.0 ? cap.a : cap.b;
        const Vec3 out = t < 0.0 ? -axis.normalized() : axis.normalized();
        if (dir.dot(out) < 0.0) dir = -dir;
        p = end + dir * cap.radius;
      }
      s.proxies.push_back({p, canonical_falloff_weights(s, p, sigma)});
    }
  }
  return s;
}

std::vector<Mat4> bone_transforms(const Skeleton& skel, const PoseParams& pose) {
  const std::size_t nb = skel.bone_count();
  if (pose.size() != skel.pose_dim()) {
    throw BodyError("bone_transforms: pose dim " + std::to_string(pose.size()) +
                    " does not match skeleton (" + std::to_string(skel.pose_dim()) + ")");
  }
  std::vector<Mat4> global(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const Vec3 w{pose[3 * b], pose[3 * b + 1], pose[3 * b + 2]};
    const Vec3& j = skel.rest_joint[b];
    const Mat4 local = Mat4::translation(j) * Mat4::rotation_axis_angle(w) *
                       Mat4::translation(-j);
    global[b] = skel.parent[b] < 0 ? local : global[skel.parent[b]] * local;
  }
  const Mat4 root = Mat4::translation({pose[3 * nb], pose[3 * nb + 1], pose[3 * nb + 2]});
  for (Mat4& g : global) g = root * g;
  return global;
}

std::vector<Vec3> pose_proxies(const Skeleton& skel, const std::vector<Mat4>& transforms) {
  std::vector<Vec3> out;
  out.reserve(skel.proxies.size());
  for (const auto& p : skel.proxies) out.push_back(forward_lbs(p.pos, p.w, transforms));
  return out;
}

std::vector<double> skinning_weights(const Skeleton& skel, const Vec3& x, QuerySpace space,
                                     const std::vector<Vec3>* posed_proxies, int k) {
  if (space == QuerySpace::Deformed && posed_proxies == nullptr) {
    throw BodyError("skinning_weights: deformed-space query requires posed proxies");
  }
  const std::size_t np = skel.proxies.size();
  auto pos_of = [&](std::size_t i) -> const Vec3& {
    return space == QuerySpace::Canonical ? skel.proxies[i].pos : (*posed_proxies)[i];
  };

  // K nearest by linear scan.
  const int kk = std::min<int>(k, static_cast<int>(np));
  std::vector<std::pair<double, std::size_t>> best;  // (distance^2, index)
  best.reserve(kk + 1);
  for (std::size_t i = 0; i < np; ++i) {
    const double d2 = (x - pos_of(i)).norm2();
    if (static_cast<int>(best.size()) < kk) {
      best.emplace_back(d2, i);
      std::push_heap(best.begin(), best.end());
    } else if (d2 < best.front().first) {
      std::pop_heap(best.begin(), best.end());
      best.back() = {d2, i};
      std::push_heap(best.begin(), best.end());
    }
  }
  std::sort(best.begin(), best.end());

  const std::size_t nb = skel.bone_count();
  std::vector<double> w(nb, 0.0);
  if (!best.empty() && best[0].first < 1e-24) {
    return skel.proxies[best[0].second].w;  // exact coincidence
  }
  double total = 0.0;
  for (const auto& [d2, i] : best) {
    const double inv = 1.0 / std::max(std::sqrt(d2), 1e-6);
    for (std::size_t b = 0; b < nb; ++b) w[b] += inv * skel.proxies[i].w[b];
    total += inv;
  }
  for (double& v : w) v /= total;
  return w;
}

Vec3 forward_lbs(const Vec3& x_c, const std::vector<double>& w_c,
                 const std::vector<Mat4>& transforms) {
  Mat4 blend{};
  for (std::size_t b = 0; b < transforms.size(); ++b) blend = blend + transforms[b].scaled(w_c[b]);
  return blend.apply_point(x_c);
}

InverseLbsResult inverse_lbs(const Vec3& x_d, const Skeleton& skel,
                             const std::vector<Mat4>& transforms,
                             const std::vector<Vec3>& posed_proxies, int k) {
  InverseLbsResult r;
  r.w_d = skinning_weights(skel, x_d, QuerySpace::Deformed, &posed_proxies, k);
  Mat4 blend{};
  for (std::size_t b = 0; b < transforms.size(); ++b) blend = blend + transforms[b].scaled(r.w_d[b]);
  r.determinant = blend.det3();
  if (std::fabs(r.determinant) <= 1e-10) {
    throw BodyError("inverse_lbs: near-singular blended transform, det = " +
                        std::to_string(r.determinant),
                    r.determinant);
  }
  r.blended_inverse = blend.affine_inverse();
  r.x_c = r.blended_inverse.apply_point(x_d);
  return r;
}

DeformedNormal deformed_normal(const Vec3& sdf_gradient_canonical, const Mat4& blended_inverse) {
  if (sdf_gradient_canonical.norm2() == 0.0) {
    throw BodyError("deformed_normal: zero canonical SDF gradient");
  }
  DeformedNormal n;
  n.raw = blended_inverse.apply_covector(sdf_gradient_canonical);
  n.unit = n.raw.normalized();
  return n;
}

// ---- tape-side kinematics ---------------------------------------------------

namespace {

// 4x4 product of two [1,16] rows.
Var mat16_mul(Tape& tape, Var a, Var b) {
  Var a4 = reshape(a, {4, 4});
  Var b4 = reshape(b, {4, 4});
  return reshape(matmul(a4, b4), {1, 16});
}

Var scalar_const(Tape& tape, double v) {
  return tape.constant(Tensor::full({1, 1}, v), "c");
}

// Rodrigues rotation combined with conjugation by the rest joint, producing
// the bone-local transform T(j) R T(-j) as a [1,16] row.
Var local_transform_tape(Tape& tape, Var w /*[1,3]*/, const Vec3& j) {
  Var x = slice_cols(w, 0, 1);
  Var y = slice_cols(w, 1, 2);
  Var z = slice_cols(w, 2, 3);
  Var theta2 = row_sum(mul(w, w));
  Var theta2s = offset(theta2, 1e-18);  // keeps sqrt/div smooth at zero pose
  Var s = vsqrt(theta2s);
  Var sinc = vdiv(vsin(s), s);
  Var oc = vdiv(offset(neg(vcos(s)), 1.0), theta2s);

  auto prod = [&](Var a, Var b) { return mul(a, b); };
  Var xx = prod(x, x), yy = prod(y, y), zz = prod(z, z);
  Var xy = prod(x, y), xz = prod(x, z), yz = prod(y, z);

  // R = I + sinc*K + oc*K^2
  Var r00 = offset(mul(oc, neg(add(yy, zz))), 1.0);
  Var r01 = add(mul(sinc, neg(z)), mul(oc, xy));
  Var r02 = add(mul(sinc, y), mul(oc, xz));
  Var r10 = add(mul(sinc, z), mul(oc, xy));
  Var r11 = offset(mul(oc, neg(add(xx, zz))), 1.0);
  Var r12 = add(mul(sinc, neg(x)), mul(oc, yz));
  Var r20 = add(mul(sinc, neg(y)), mul(oc, xz));
  Var r21 = add(mul(sinc, x), mul(oc, yz));
  Var r22 = offset(mul(oc, neg(add(xx, yy))), 1.0);

  // translation column: j - R j
  auto trans = [&](Var ra, Var rb, Var rc, double jr) {
    Var rj = add(add(scale(ra, j.x), scale(rb, j.y)), scale(rc, j.z));
    return offset(neg(rj), jr);
  };
  Var t0 = trans(r00, r01, r02, j.x);
  Var t1 = trans(r10, r11, r12, j.y);
  Var t2 = trans(r20, r21, r22, j.z);

  Var zero = scalar_const(tape, 0.0);
  Var one = scalar_const(tape, 1.0);
  return concat_cols({r00, r01, r02, t0, r10, r11, r12, t1, r20, r21, r22, t2,
                      zero, zero, zero, one});
}

}  // namespace

Var bone_transforms_tape(Tape& tape, const Skeleton& skel, Var theta) {
  const std::size_t nb = skel.bone_count();
  if (theta.value().size() != skel.pose_dim()) {
    throw BodyError("bone_transforms_tape: pose dim mismatch");
  }
  Var th = reshape(theta, {1, skel.pose_dim()});

  std::vector<Var> global(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    Var w = slice_cols(th, 3 * b, 3 * b + 3);
    Var local = local_transform_tape(tape, w, skel.rest_joint[b]);
    global[b] = skel.parent[b] < 0 ? local : mat16_mul(tape, global[skel.parent[b]], local);
  }

  // root translation applied to every bone
  Var tx = slice_cols(th, 3 * nb, 3 * nb + 1);
  Var ty = slice_cols(th, 3 * nb + 1, 3 * nb + 2);
  Var tz = slice_cols(th, 3 * nb + 2, 3 * nb + 3);
  Var zero = scalar_const(tape, 0.0);
  Var one = scalar_const(tape, 1.0);
  Var root = concat_cols({one, zero, zero, tx, zero, one, zero, ty, zero, zero, one, tz,
                          zero, zero, zero, one});
  std::vector<Var> rows;
  rows.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) rows.push_back(mat16_mul(tape, root, global[b]));
  return concat_rows(rows);
}

WarpVars inverse_lbs_tape(Tape& tape, Var bone_mats, const Tensor& weights, const Tensor& x_d) {
  Var w = tape.constant(weights, "skin_weights");
  Var blended = matmul(w, bone_mats);  // [N,16]
  Var inv = inverse4(blended);
  WarpVars out;
  out.blended_inv = inv;
  out.x_c = transform_points(inv, x_d);
  return out;
}

}  // namespace recon
