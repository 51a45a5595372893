#pragma once

#include <array>
#include <cmath>

namespace recon {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  double norm2() const { return dot(*this); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? *this / n : Vec3{};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major homogeneous 4x4.
struct Mat4 {
  std::array<double, 16> m{};

  static Mat4 identity() {
    Mat4 r;
    r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return r;
  }
  static Mat4 translation(const Vec3& t) {
    Mat4 r = identity();
    r.m[3] = t.x;
    r.m[7] = t.y;
    r.m[11] = t.z;
    return r;
  }
  static Mat4 rotation_axis_angle(const Vec3& w) {
    const double theta = w.norm();
    Mat4 r = identity();
    if (theta < 1e-12) return r;
    const Vec3 a = w / theta;
    const double c = std::cos(theta), s = std::sin(theta), t = 1.0 - c;
    r.m[0] = c + a.x * a.x * t;
    r.m[1] = a.x * a.y * t - a.z * s;
    r.m[2] = a.x * a.z * t + a.y * s;
    r.m[4] = a.y * a.x * t + a.z * s;
    r.m[5] = c + a.y * a.y * t;
    r.m[6] = a.y * a.z * t - a.x * s;
    r.m[8] = a.z * a.x * t - a.y * s;
    r.m[9] = a.z * a.y * t + a.x * s;
    r.m[10] = c + a.z * a.z * t;
    return r;
  }

  Mat4 operator*(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += m[i * 4 + k] * o.m[k * 4 + j];
        r.m[i * 4 + j] = acc;
      }
    return r;
  }
  Mat4 operator+(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 16; ++i) r.m[i] = m[i] + o.m[i];
    return r;
  }
  Mat4 scaled(double s) const {
    Mat4 r;
    for (int i = 0; i < 16; ++i) r.m[i] = m[i] * s;
    return r;
  }

  Vec3 apply_point(const Vec3& p) const {
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
  }
  Vec3 apply_vector(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }
  // Row-vector product with the 3x3 block: g^T R.
  Vec3 apply_covector(const Vec3& g) const {
    return {m[0] * g.x + m[4] * g.y + m[8] * g.z,
            m[1] * g.x + m[5] * g.y + m[9] * g.z,
            m[2] * g.x + m[6] * g.y + m[10] * g.z};
  }

  double det3() const {
    return m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
           m[2] * (m[4] * m[9] - m[5] * m[8]);
  }

  // Inverse assuming an affine matrix (last row 0,0,0,1).
  Mat4 affine_inverse() const {
    const double det = det3();
    const double inv = 1.0 / det;
    Mat4 r = identity();
    r.m[0] = (m[5] * m[10] - m[6] * m[9]) * inv;
    r.m[1] = (m[2] * m[9] - m[1] * m[10]) * inv;
    r.m[2] = (m[1] * m[6] - m[2] * m[5]) * inv;
    r.m[4] = (m[6] * m[8] - m[4] * m[10]) * inv;
    r.m[5] = (m[0] * m[10] - m[2] * m[8]) * inv;
    r.m[6] = (m[2] * m[4] - m[0] * m[6]) * inv;
    r.m[8] = (m[4] * m[9] - m[5] * m[8]) * inv;
    r.m[9] = (m[1] * m[8] - m[0] * m[9]) * inv;
    r.m[10] = (m[0] * m[5] - m[1] * m[4]) * inv;
    const Vec3 t{m[3], m[7], m[11]};
    const Vec3 ti = -Vec3{r.m[0] * t.x + r.m[1] * t.y + r.m[2] * t.z,
                          r.m[4] * t.x + r.m[5] * t.y + r.m[6] * t.z,
                          r.m[8] * t.x + r.m[9] * t.y + r.m[10] * t.z};
    r.m[3] = ti.x;
    r.m[7] = ti.y;
    r.m[11] = ti.z;
    return r;
  }
};

// Distance from p to segment [a, b].
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.norm2();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  return (p - (a + ab * t)).norm();
}

}  // namespace recon
