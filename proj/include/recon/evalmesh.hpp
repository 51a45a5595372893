#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "recon/geom.hpp"
#include "recon/image.hpp"
#include "recon/synthetic.hpp"
#include "recon/tensor.hpp"

namespace recon {

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // optional, per vertex
};

// Batched scalar field: callers can fan the grid corners out to whatever
// evaluation path they have (analytic loop, batched network forward, ...).
using BatchField = std::function<std::vector<double>(const std::vector<Vec3>&)>;
using ScalarField = std::function<double(const Vec3&)>;

BatchField batch_of(ScalarField f);

// Zero-isosurface triangulation on a res^3 cell grid over [lo, hi] by
// tetrahedral decomposition of each cell (watertight on sign-changing smooth
// fields). Triangles are oriented with their normals along +grad(field).
// All-positive or all-negative grids yield an empty mesh.
TriangleMesh extract_isosurface(const BatchField& field, int resolution, const Vec3& lo,
                                const Vec3& hi);

void write_obj(const std::string& path, const TriangleMesh& mesh);

// Area-weighted surface sampling with face normals.
OrientedPoints sample_mesh_surface(const TriangleMesh& mesh, std::size_t count,
                                   std::uint64_t seed);

// Symmetric mean (un-squared) L2 nearest-neighbor distance between [N,3]
// point sets. chamfer() is grid-accelerated; the brute-force variant is the
// test oracle.
double chamfer(const Tensor& a, const Tensor& b);
double chamfer_brute(const Tensor& a, const Tensor& b);

// Mean |n_a . n_nn(a)| over both directions, in [0,1]. Throws on a zero
// normal.
double normal_consistency(const OrientedPoints& a, const OrientedPoints& b);

struct MaskMetrics {
  double precision = 0.0, f1 = 0.0, iou = 0.0;
};
// Pixel-set metrics between binarized (>0.5) single-channel masks; empty
// against empty counts as a perfect match.
MaskMetrics mask_metrics(const Image& pred, const Image& gt);

// Occupancy (field <= 0) intersection-over-union on cell centers.
double volumetric_iou(const BatchField& a, const BatchField& b, int resolution,
                      const Vec3& lo, const Vec3& hi);

// 10*log10(1/MSE) for [0,1] images; identical images report +infinity.
double psnr(const Image& a, const Image& b);

}  // namespace recon
