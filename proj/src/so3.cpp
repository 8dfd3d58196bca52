#include "loopflow/so3.hpp"

#include <cmath>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

namespace {

constexpr double kSmallAngle = 1e-4;
constexpr double kPiTraceGuard = 1e-9;

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  Rotation r(m);
  if (!r.is_valid(tol)) {
    std::ostringstream os;
    os << "matrix is not a proper rotation (tol " << tol << ")";
    throw InvalidRotation(os.str());
  }
  return r;
}

bool Rotation::is_valid(double tol) const {
  if (!m_.allFinite()) return false;
  const Mat3 gram = m_.transpose() * m_;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m_.determinant() - 1.0) <= tol;
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

Rotation exp_rotvec(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a;  // sin(theta) / theta
  double b;  // (1 - cos(theta)) / theta^2
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 k = hat(v);
  return Rotation::unchecked(Mat3::Identity() + a * k + b * (k * k));
}

Vec3 log_rotation(const Rotation& r) {
  const Mat3& m = r.matrix();
  const double tr = m.trace();
  if (tr <= -1.0 + kPiTraceGuard) {
    throw AngleAtPi("rotation angle is at pi; logarithm axis is ambiguous");
  }
  const Vec3 s = vee(m - m.transpose());  // 2 sin(theta) * axis
  const double sin_theta = 0.5 * s.norm();
  const double cos_theta = 0.5 * (tr - 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  double factor;  // theta / (2 sin(theta))
  if (theta < kSmallAngle) {
    factor = 0.5 * (1.0 + theta * theta / 6.0);
  } else {
    factor = theta / (2.0 * sin_theta);
  }
  return factor * s;
}

double rotation_angle(const Rotation& r) {
  const Mat3& m = r.matrix();
  const double sin_theta = 0.5 * vee(m - m.transpose()).norm();
  const double cos_theta = 0.5 * (m.trace() - 1.0);
  return std::atan2(sin_theta, cos_theta);
}

Rotation geodesic_interp(const Rotation& r0, const Rotation& r1, double t) {
  const Vec3 rel = log_rotation(r0.transpose() * r1);
  return r0 * exp_rotvec(t * rel);
}

TangentVector so3_conditional_vf(const Rotation& rt, const Rotation& r1, double t,
                                 double eps_t) {
  const double remaining = 1.0 - t;
  if (remaining < eps_t) {
    std::ostringstream os;
    os << "conditional field requested at t=" << t << " (1-t < " << eps_t << ")";
    throw TimeTooClose(os.str());
  }
  return TangentVector{log_rotation(rt.transpose() * r1) / remaining, rt};
}

Rotation sample_rotation_noise(const Rotation& mean, double variance, Rng& rng) {
  if (variance == 0.0) return mean;
  std::normal_distribution<double> normal(0.0, std::sqrt(variance));
  Vec3 xi;
  xi.x() = normal(rng);
  xi.y() = normal(rng);
  xi.z() = normal(rng);
  return mean * exp_rotvec(xi);
}

double rotation_metric_norm(const TangentVector& u) { return u.v.norm(); }
double rotation_metric_norm(const Vec3& v) { return v.norm(); }

Mat3 right_jacobian(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  double b;  // (1 - cos) / theta^2
  double c;  // (theta - sin) / theta^3
  if (theta < kSmallAngle) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 k = hat(v);
  return Mat3::Identity() - b * k + c * (k * k);
}

Mat3 right_jacobian_inverse(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  double d;
  if (theta < kSmallAngle) {
    d = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    d = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  const Mat3 k = hat(v);
  return Mat3::Identity() + 0.5 * k + d * (k * k);
}

Vec3 body_tangent_gradient(const Rotation& r, const Mat3& grad) {
  const Mat3 a = r.matrix().transpose() * grad;
  return vee(a - a.transpose());
}

}  // namespace loopflow
