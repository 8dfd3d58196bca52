#pragma once

#include <random>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace loopflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rng = std::mt19937_64;

/// A proper orthonormal 3x3 matrix.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Validates orthonormality and det = +1 within `tol`; throws InvalidRotation.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  /// Wraps a matrix the caller already knows to be a rotation.
  static Rotation unchecked(const Mat3& m) { return Rotation(m); }

  const Mat3& matrix() const { return m_; }
  Rotation transpose() const { return Rotation(m_.transpose()); }
  bool is_valid(double tol = 1e-9) const;

  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Rotation vector attached to a base rotation; `v` is in body coordinates.
struct TangentVector {
  Vec3 v = Vec3::Zero();
  Rotation base;
};

Mat3 hat(const Vec3& v);
/// Inverse of hat; reads the skew part of `m` without symmetrizing.
Vec3 vee(const Mat3& m);

/// Rodrigues formula.
Rotation exp_rotvec(const Vec3& v);

/// Principal logarithm as a rotation vector. Throws AngleAtPi when
/// trace(r) <= -1 + 1e-9, where the rotation axis is ambiguous.
Vec3 log_rotation(const Rotation& r);

double rotation_angle(const Rotation& r);

/// r0 * exp(t * log(r0^T r1)).
Rotation geodesic_interp(const Rotation& r0, const Rotation& r1, double t);

/// log(rt^T r1) / (1 - t) as a body-frame tangent at rt. Throws TimeTooClose
/// when 1 - t < eps_t.
TangentVector so3_conditional_vf(const Rotation& rt, const Rotation& r1, double t,
                                 double eps_t = 1e-2);

/// mean * exp(xi) with xi ~ N(0, variance * I3): a tangent-space stand-in for
/// the isotropic Gaussian on SO(3). variance == 0 returns mean unchanged.
Rotation sample_rotation_noise(const Rotation& mean, double variance, Rng& rng);

/// Euclidean norm of the rotation-vector coordinates.
double rotation_metric_norm(const TangentVector& u);
double rotation_metric_norm(const Vec3& v);

/// Right Jacobian of exp: exp(v + d) ~= exp(v) exp(J_r(v) d).
Mat3 right_jacobian(const Vec3& v);
Mat3 right_jacobian_inverse(const Vec3& v);

/// Given the Euclidean gradient G of a scalar function of R's entries, the
/// gradient with respect to a body-frame perturbation R exp(hat(xi)) at xi=0.
Vec3 body_tangent_gradient(const Rotation& r, const Mat3& grad);

}  // namespace loopflow
