#include "recon/evalmesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "recon/rng.hpp"

namespace recon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform-grid nearest neighbor over a fixed point set.
class NearestGrid {
 public:
  explicit NearestGrid(const Tensor& pts) : pts_(&pts) {
    const std::size_t n = pts.rows();
    Vec3 lo{kInf, kInf, kInf}, hi{-kInf, -kInf, -kInf};
    for (std::size_t i = 0; i < n; ++i) {
      lo = {std::min(lo.x, pts(i, 0)), std::min(lo.y, pts(i, 1)), std::min(lo.z, pts(i, 2))};
      hi = {std::max(hi.x, pts(i, 0)), std::max(hi.y, pts(i, 1)), std::max(hi.z, pts(i, 2))};
    }
    origin_ = lo;
    const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    const double divisions = std::ceil(std::cbrt(static_cast<double>(n)));
    cell_ = std::max(1e-9, extent / std::max(1.0, divisions));
    for (std::size_t i = 0; i < n; ++i) {
      const std::array<long, 3> c = coord(point(i));
      for (int a = 0; a < 3; ++a) {
        cmin_[a] = std::min(cmin_[a], c[a]);
        cmax_[a] = std::max(cmax_[a], c[a]);
      }
      cells_[key(c)].push_back(static_cast<int>(i));
    }
  }

  std::pair<int, double> nearest(const Vec3& q) const {
    const std::array<long, 3> c = coord(q);
    // occupied cells all live in [cmin, cmax]; scan Chebyshev rings that can
    // intersect that box, starting at the nearest one
    long start = 0, last = 0;
    for (int a = 0; a < 3; ++a) {
      if (c[a] < cmin_[a]) start = std::max(start, cmin_[a] - c[a]);
      if (c[a] > cmax_[a]) start = std::max(start, c[a] - cmax_[a]);
      last = std::max({last, cmax_[a] - c[a], c[a] - cmin_[a]});
    }
    int best = -1;
    double best_d = kInf;
    for (long ring = start; ring <= last; ++ring) {
      for (long dx = std::max(-ring, cmin_[0] - c[0]); dx <= std::min(ring, cmax_[0] - c[0]);
           ++dx)
        for (long dy = std::max(-ring, cmin_[1] - c[1]);
             dy <= std::min(ring, cmax_[1] - c[1]); ++dy)
          for (long dz = std::max(-ring, cmin_[2] - c[2]);
               dz <= std::min(ring, cmax_[2] - c[2]); ++dz) {
            if (std::max({std::labs(dx), std::labs(dy), std::labs(dz)}) != ring) continue;
            const auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
            if (it == cells_.end()) continue;
            for (int idx : it->second) {
              const double d = (point(idx) - q).norm();
              if (d < best_d) {
                best_d = d;
                best = idx;
              }
            }
          }
      // any point in a farther ring is at least ring*cell away
      if (best >= 0 && best_d <= static_cast<double>(ring) * cell_) break;
    }
    return {best, best_d};
  }

 private:
  Vec3 point(int i) const { return {(*pts_)(i, 0), (*pts_)(i, 1), (*pts_)(i, 2)}; }
  std::array<long, 3> coord(const Vec3& p) const {
    return {static_cast<long>(std::floor((p.x - origin_.x) / cell_)),
            static_cast<long>(std::floor((p.y - origin_.y) / cell_)),
            static_cast<long>(std::floor((p.z - origin_.z) / cell_))};
  }
  static std::uint64_t key(const std::array<long, 3>& c) {
    const auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)); };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }
  const Tensor* pts_;
  Vec3 origin_;
  double cell_ = 1.0;
  std::array<long, 3> cmin_{1L << 20, 1L << 20, 1L << 20};
  std::array<long, 3> cmax_{-(1L << 20), -(1L << 20), -(1L << 20)};
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

void check_points(const Tensor& t, const char* who) {
  if (t.shape.size() != 2 || t.cols() != 3 || t.rows() == 0)
    throw EvalError(std::string(who) + ": need a non-empty [N,3] point set");
}

double one_sided_mean(const Tensor& from, const NearestGrid& to) {
  double acc = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : acc)
  for (long i = 0; i < static_cast<long>(from.rows()); ++i)
    acc += to.nearest({from(i, 0), from(i, 1), from(i, 2)}).second;
  return acc / static_cast<double>(from.rows());
}

}  // namespace

BatchField batch_of(ScalarField f) {
  return [f = std::move(f)](const std::vector<Vec3>& pts) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = f(pts[i]);
    return out;
  };
}

TriangleMesh extract_isosurface(const BatchField& field, int resolution, const Vec3& lo,
                                const Vec3& hi) {
  if (resolution < 8) throw EvalError("isosurface: resolution must be >= 8");
  const long n = resolution, nv = n + 1;
  const Vec3 step{(hi.x - lo.x) / n, (hi.y - lo.y) / n, (hi.z - lo.z) / n};

  auto corner = [&](long i, long j, long k) {
    return Vec3{lo.x + step.x * i, lo.y + step.y * j, lo.z + step.z * k};
  };
  auto gid = [&](long i, long j, long k) { return (i * nv + j) * nv + k; };

  // grid corner values, batched
  std::vector<double> val(nv * nv * nv);
  {
    std::vector<Vec3> pts;
    pts.reserve(65536);
    std::size_t base = 0;
    auto flush = [&]() {
      const std::vector<double> out = field(pts);
      if (out.size() != pts.size()) throw EvalError("isosurface: field batch size mismatch");
      std::copy(out.begin(), out.end(), val.begin() + base);
      base += pts.size();
      pts.clear();
    };
    for (long i = 0; i < nv; ++i)
      for (long j = 0; j < nv; ++j)
        for (long k = 0; k < nv; ++k) {
          pts.push_back(corner(i, j, k));
          if (pts.size() == 65536) flush();
        }
    if (!pts.empty()) flush();
  }

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  std::unordered_map<long, int> corner_vertex;
  // Corner-valued zeros collapse the crossing onto the grid corner; welding
  // those onto one shared vertex keeps the surface watertight (the collapsed
  // triangles then drop out with matching ids on both sides).
  auto vertex_at_corner = [&](long a) {
    const auto it = corner_vertex.find(a);
    if (it != corner_vertex.end()) return it->second;
    const int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back({lo.x + step.x * (a / (nv * nv)), lo.y + step.y * ((a / nv) % nv),
                             lo.z + step.z * (a % nv)});
    corner_vertex.emplace(a, idx);
    return idx;
  };
  auto vertex_on_edge = [&](long a, long b) {
    if (a > b) std::swap(a, b);  // canonical: interpolate low id -> high id
    const double fa = val[a], fb = val[b];
    const double t = fa / (fa - fb);
    // below this threshold the interpolated position rounds onto the corner
    // itself, so snap to the shared corner vertex instead of duplicating it
    if (t <= 1e-9) return vertex_at_corner(a);
    if (t >= 1.0 - 1e-9) return vertex_at_corner(b);
    const std::uint64_t k = (static_cast<std::uint64_t>(a) << 25) | static_cast<std::uint64_t>(b);
    const auto it = edge_vertex.find(k);
    if (it != edge_vertex.end()) return it->second;
    const Vec3 pa = {lo.x + step.x * (a / (nv * nv)), lo.y + step.y * ((a / nv) % nv),
                     lo.z + step.z * (a % nv)};
    const Vec3 pb = {lo.x + step.x * (b / (nv * nv)), lo.y + step.y * ((b / nv) % nv),
                     lo.z + step.z * (b % nv)};
    const int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pa + (pb - pa) * t);
    edge_vertex.emplace(k, idx);
    return idx;
  };

  auto emit = [&](int v0, int v1, int v2, const Vec3& grad) {
    if (v0 == v1 || v1 == v2 || v0 == v2) return;
    const Vec3 fn = (mesh.vertices[v1] - mesh.vertices[v0])
                        .cross(mesh.vertices[v2] - mesh.vertices[v0]);
    if (fn.norm2() <= 1e-24) return;
    if (fn.dot(grad) >= 0.0)
      mesh.triangles.push_back({v0, v1, v2});
    else
      mesh.triangles.push_back({v0, v2, v1});
  };

  // Kuhn decomposition: six tetrahedra around the cube diagonal; face
  // diagonals match across neighboring cells, so the surface is watertight.
  static const int kTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                                  {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      for (long k = 0; k < n; ++k) {
        long cid[8];
        for (int c = 0; c < 8; ++c)
          cid[c] = gid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        for (const auto& tet : kTets) {
          long v[4];
          double f[4];
          bool neg[4];
          int nneg = 0;
          for (int c = 0; c < 4; ++c) {
            v[c] = cid[tet[c]];
            f[c] = val[v[c]];
            neg[c] = f[c] < 0.0;
            nneg += neg[c];
          }
          if (nneg == 0 || nneg == 4) continue;

          // the field is affine over the tet: solve for its gradient
          Vec3 p[4];
          for (int c = 0; c < 4; ++c)
            p[c] = {lo.x + step.x * (v[c] / (nv * nv)), lo.y + step.y * ((v[c] / nv) % nv),
                    lo.z + step.z * (v[c] % nv)};
          const Vec3 e1 = p[1] - p[0], e2 = p[2] - p[0], e3 = p[3] - p[0];
          const double d1 = f[1] - f[0], d2 = f[2] - f[0], d3 = f[3] - f[0];
          const Vec3 c23 = e2.cross(e3), c31 = e3.cross(e1), c12 = e1.cross(e2);
          const double det = e1.dot(c23);
          const Vec3 grad = (c23 * d1 + c31 * d2 + c12 * d3) / det;

          if (nneg == 1 || nneg == 3) {
            int lone = 0;
            const bool lone_neg = nneg == 1;
            for (int c = 0; c < 4; ++c)
              if (neg[c] == lone_neg) lone = c;
            int tri[3], t = 0;
            for (int c = 0; c < 4; ++c)
              if (c != lone) tri[t++] = vertex_on_edge(v[lone], v[c]);
            emit(tri[0], tri[1], tri[2], grad);
          } else {
            int in[2], out[2], ni = 0, no = 0;
            for (int c = 0; c < 4; ++c) (neg[c] ? in[ni++] : out[no++]) = c;
            const int q00 = vertex_on_edge(v[in[0]], v[out[0]]);
            const int q01 = vertex_on_edge(v[in[0]], v[out[1]]);
            const int q10 = vertex_on_edge(v[in[1]], v[out[0]]);
            const int q11 = vertex_on_edge(v[in[1]], v[out[1]]);
            emit(q00, q01, q11, grad);
            emit(q00, q11, q10, grad);
          }
        }
      }

  // area-weighted vertex normals from the oriented faces
  mesh.normals.assign(mesh.vertices.size(), Vec3{});
  for (const auto& tr : mesh.triangles) {
    const Vec3 fn = (mesh.vertices[tr[1]] - mesh.vertices[tr[0]])
                        .cross(mesh.vertices[tr[2]] - mesh.vertices[tr[0]]);
    for (int c : tr) mesh.normals[c] += fn;
  }
  for (Vec3& nrm : mesh.normals) nrm = nrm.normalized();
  return mesh;
}

void write_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw EvalError("cannot open " + path);
  f.precision(10);
  for (const Vec3& v : mesh.vertices) f << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  const bool has_n = mesh.normals.size() == mesh.vertices.size();
  if (has_n)
    for (const Vec3& v : mesh.normals)
      f << "vn " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles) {
    f << 'f';
    for (int c : t) {
      f << ' ' << c + 1;
      if (has_n) f << "//" << c + 1;
    }
    f << '\n';
  }
}

OrientedPoints sample_mesh_surface(const TriangleMesh& mesh, std::size_t count,
                                   std::uint64_t seed) {
  if (mesh.triangles.empty()) throw EvalError("cannot sample an empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tr = mesh.triangles[t];
    total += 0.5 * (mesh.vertices[tr[1]] - mesh.vertices[tr[0]])
                       .cross(mesh.vertices[tr[2]] - mesh.vertices[tr[0]])
                       .norm();
    cdf[t] = total;
  }
  Rng rng(seed);
  OrientedPoints out;
  out.points = Tensor({count, 3});
  out.normals = Tensor({count, 3});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t t =
        std::lower_bound(cdf.begin(), cdf.end(), rng.uniform(0.0, total)) - cdf.begin();
    const auto& tr = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 a = mesh.vertices[tr[0]], b = mesh.vertices[tr[1]], c = mesh.vertices[tr[2]];
    const Vec3 p = a + (b - a) * u + (c - a) * v;
    const Vec3 n = (b - a).cross(c - a).normalized();
    out.points(i, 0) = p.x;
    out.points(i, 1) = p.y;
    out.points(i, 2) = p.z;
    out.normals(i, 0) = n.x;
    out.normals(i, 1) = n.y;
    out.normals(i, 2) = n.z;
  }
  return out;
}

double chamfer(const Tensor& a, const Tensor& b) {
  check_points(a, "chamfer");
  check_points(b, "chamfer");
  const NearestGrid ga(a), gb(b);
  return 0.5 * (one_sided_mean(a, gb) + one_sided_mean(b, ga));
}

double chamfer_brute(const Tensor& a, const Tensor& b) {
  check_points(a, "chamfer");
  check_points(b, "chamfer");
  auto side = [](const Tensor& from, const Tensor& to) {
    double acc = 0.0;
    for (std::size_t i = 0; i < from.rows(); ++i) {
      double best = kInf;
      for (std::size_t j = 0; j < to.rows(); ++j) {
        const Vec3 d{from(i, 0) - to(j, 0), from(i, 1) - to(j, 1), from(i, 2) - to(j, 2)};
        best = std::min(best, d.norm());
      }
      acc += best;
    }
    return acc / static_cast<double>(from.rows());
  };
  return 0.5 * (side(a, b) + side(b, a));
}

double normal_consistency(const OrientedPoints& a, const OrientedPoints& b) {
  check_points(a.points, "normal_consistency");
  check_points(b.points, "normal_consistency");
  for (const OrientedPoints* s : {&a, &b})
    for (std::size_t i = 0; i < s->normals.rows(); ++i) {
      const Vec3 n{s->normals(i, 0), s->normals(i, 1), s->normals(i, 2)};
      if (n.norm() < 1e-12) throw EvalError("normal_consistency: zero normal");
    }
  auto side = [](const OrientedPoints& from, const OrientedPoints& to) {
    const NearestGrid grid(to.points);
    double acc = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : acc)
    for (long i = 0; i < static_cast<long>(from.points.rows()); ++i) {
      const int j = grid.nearest({from.points(i, 0), from.points(i, 1), from.points(i, 2)})
                        .first;
      const Vec3 na{from.normals(i, 0), from.normals(i, 1), from.normals(i, 2)};
      const Vec3 nb{to.normals(j, 0), to.normals(j, 1), to.normals(j, 2)};
      acc += std::fabs(na.normalized().dot(nb.normalized()));
    }
    return acc / static_cast<double>(from.points.rows());
  };
  return 0.5 * (side(a, b) + side(b, a));
}

MaskMetrics mask_metrics(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.channels != 1 ||
      gt.channels != 1)
    throw EvalError("mask_metrics: masks must be single-channel and equally sized");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i] > 0.5, g = gt.pixels[i] > 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  MaskMetrics m;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                            : (fn == 0 ? 1.0 : 0.0);
  m.f1 = 2 * tp + fp + fn > 0
             ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn)
             : 1.0;
  m.iou = tp + fp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn)
                           : 1.0;
  return m;
}

double volumetric_iou(const BatchField& a, const BatchField& b, int resolution,
                      const Vec3& lo, const Vec3& hi) {
  if (resolution < 2) throw EvalError("volumetric_iou: resolution must be >= 2");
  const long n = resolution;
  const Vec3 step{(hi.x - lo.x) / n, (hi.y - lo.y) / n, (hi.z - lo.z) / n};
  std::size_t inter = 0, uni = 0;
  std::vector<Vec3> pts;
  pts.reserve(65536);
  auto flush = [&]() {
    const std::vector<double> fa = a(pts), fb = b(pts);
    if (fa.size() != pts.size() || fb.size() != pts.size())
      throw EvalError("volumetric_iou: field batch size mismatch");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool oa = fa[i] <= 0.0, ob = fb[i] <= 0.0;
      inter += oa && ob;
      uni += oa || ob;
    }
    pts.clear();
  };
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      for (long k = 0; k < n; ++k) {
        pts.push_back({lo.x + step.x * (i + 0.5), lo.y + step.y * (j + 0.5),
                       lo.z + step.z * (k + 0.5)});
        if (pts.size() == 65536) flush();
      }
  if (!pts.empty()) flush();
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw EvalError("psnr: image dimensions differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.size());
  return mse == 0.0 ? kInf : 10.0 * std::log10(1.0 / mse);
}

}  // namespace recon
