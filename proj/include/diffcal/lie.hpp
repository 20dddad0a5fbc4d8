#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace diffcal {

using Vector6d = Eigen::Matrix<double, 6, 1>;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * (kPi / 180.0); }
inline double rad2deg(double rad) { return rad * (180.0 / kPi); }

/// Thrown when the SE(3) logarithm is evaluated within 1e-6 rad of the
/// rotation-angle singularity at pi. Callers treat the sample as unusable.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a cross-module usage contract is violated, e.g. evaluating a
/// surrogate against a context prepared for a different scene.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// se(3) element. Layout is (rho, phi): translational part first (meters),
/// axis-angle rotational part second (radians).
struct Twist {
  Eigen::Vector3d rho = Eigen::Vector3d::Zero();
  Eigen::Vector3d phi = Eigen::Vector3d::Zero();

  Twist() = default;
  Twist(const Eigen::Vector3d& rho_in, const Eigen::Vector3d& phi_in)
      : rho(rho_in), phi(phi_in) {}

  static Twist zero() { return {}; }

  static Twist from_vector(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
  }

  Vector6d to_vector() const {
    Vector6d v;
    v << rho, phi;
    return v;
  }

  bool all_finite() const { return rho.allFinite() && phi.allFinite(); }
  double norm() const { return to_vector().norm(); }
};

inline Twist operator+(const Twist& a, const Twist& b) {
  return {a.rho + b.rho, a.phi + b.phi};
}
inline Twist operator-(const Twist& a, const Twist& b) {
  return {a.rho - b.rho, a.phi - b.phi};
}
inline Twist operator*(double s, const Twist& x) {
  return {s * x.rho, s * x.phi};
}

/// Rigid transform stored as a rotation matrix plus translation vector.
/// Invariant: rotation is orthonormal with determinant +1 (up to rounding).
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  RigidTransform() = default;
  RigidTransform(const Eigen::Matrix3d& r, const Eigen::Vector3d& t)
      : rotation(r), translation(t) {}

  static RigidTransform identity() { return {}; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
};

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  // clang-format off
  m <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return m;
}

/// Rotation angle below which exp/log switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

/// Margin around theta = pi inside which log_map refuses to evaluate.
inline constexpr double kLogSingularityMargin = 1e-6;

/// Frobenius drift above which compose() re-orthonormalizes its result.
inline constexpr double kOrthoDriftTol = 1e-9;

/// Closest rotation matrix in Frobenius norm (polar factor via SVD).
inline Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) *= -1.0;
  }
  return u * v.transpose();
}

inline bool is_valid_transform(const RigidTransform& t, double tol = 1e-9) {
  if (!t.rotation.allFinite() || !t.translation.allFinite()) return false;
  const Eigen::Matrix3d gram =
      t.rotation.transpose() * t.rotation - Eigen::Matrix3d::Identity();
  return gram.norm() <= tol && std::abs(t.rotation.determinant() - 1.0) <= tol;
}

/// Exponential map se(3) -> SE(3).
///
/// R = I + sin(t)/t * W + (1-cos(t))/t^2 * W^2 with W = hat(phi), t = |phi|,
/// and translation = V * rho with V = I + (1-cos(t))/t^2 * W
/// + (t-sin(t))/t^3 * W^2. Below kSmallAngle both series are truncated at
/// second order, which is exact to ~1e-24 there.
inline RigidTransform exp_map(const Twist& xi) {
  if (!xi.all_finite()) {
    throw std::invalid_argument("exp_map: twist has non-finite components");
  }
  const double theta = xi.phi.norm();
  const Eigen::Matrix3d omega = hat(xi.phi);
  const Eigen::Matrix3d omega_sq = omega * omega;
  Eigen::Matrix3d rotation;
  Eigen::Matrix3d v;
  if (theta < kSmallAngle) {
    rotation = Eigen::Matrix3d::Identity() + omega + 0.5 * omega_sq;
    v = Eigen::Matrix3d::Identity() + 0.5 * omega + omega_sq / 6.0;
  } else {
    const double theta_sq = theta * theta;
    const double sin_t = std::sin(theta);
    // 1 - cos(t) via the half-angle sine: the direct subtraction loses
    // ~eps/t^2 relative accuracy near the series switch.
    const double sin_half = std::sin(0.5 * theta);
    const double one_minus_cos = 2.0 * sin_half * sin_half;
    rotation = Eigen::Matrix3d::Identity() + (sin_t / theta) * omega +
               (one_minus_cos / theta_sq) * omega_sq;
    v = Eigen::Matrix3d::Identity() + (one_minus_cos / theta_sq) * omega +
        ((theta - sin_t) / (theta_sq * theta)) * omega_sq;
  }
  return {rotation, v * xi.rho};
}

/// Logarithm map SE(3) -> se(3), inverse of exp_map away from theta = pi.
///
/// The rotation angle is recovered with atan2 of the skew-part magnitude
/// against (trace-1)/2, which stays accurate over the whole (0, pi) range.
/// Throws SingularityError within kLogSingularityMargin of pi, where the
/// axis (and hence V^-1) is no longer well conditioned.
inline Twist log_map(const RigidTransform& t) {
  const Eigen::Matrix3d& r = t.rotation;
  const Eigen::Vector3d skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0),
                             r(1, 0) - r(0, 1));
  const double cos_theta = 0.5 * (r.trace() - 1.0);
  const double sin_theta = 0.5 * skew.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta >= kPi - kLogSingularityMargin) {
    throw SingularityError("log_map: rotation angle within margin of pi");
  }

  Twist xi;
  Eigen::Matrix3d v_inv;
  if (theta < kSmallAngle) {
    xi.phi = 0.5 * skew;
    const Eigen::Matrix3d omega = hat(xi.phi);
    v_inv = Eigen::Matrix3d::Identity() - 0.5 * omega +
            (omega * omega) / 12.0;
  } else {
    xi.phi = (0.5 * theta / sin_theta) * skew;
    const Eigen::Matrix3d omega = hat(xi.phi);
    const double theta_sq = theta * theta;
    // (t/2)*cot(t/2) through the half angle. The textbook form
    // sin(t)/(1 - cos(t)) divides by exactly zero once cos(t) rounds to 1
    // (t < ~1.5e-8) and shreds precision well above that.
    const double half = 0.5 * theta;
    const double coeff =
        (1.0 - half * std::cos(half) / std::sin(half)) / theta_sq;
    v_inv = Eigen::Matrix3d::Identity() - 0.5 * omega +
            coeff * (omega * omega);
  }
  xi.rho = v_inv * t.translation;
  return xi;
}

/// Composition a * b. Re-orthonormalizes the rotation when accumulated
/// rounding pushes it more than kOrthoDriftTol from the manifold.
inline RigidTransform compose(const RigidTransform& a,
                              const RigidTransform& b) {
  RigidTransform out(a.rotation * b.rotation,
                     a.rotation * b.translation + a.translation);
  const Eigen::Matrix3d gram =
      out.rotation.transpose() * out.rotation - Eigen::Matrix3d::Identity();
  if (gram.norm() > kOrthoDriftTol) {
    out.rotation = orthonormalized(out.rotation);
  }
  return out;
}

inline RigidTransform inverse(const RigidTransform& t) {
  const Eigen::Matrix3d rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

/// Fixed-axis XYZ Euler angles in degrees, each normalized to (-180, 180].
struct EulerAngles {
  double rx = 0.0;
  double ry = 0.0;
  double rz = 0.0;

  Eigen::Vector3d to_vector() const { return {rx, ry, rz}; }
};

namespace detail {
inline double wrap_half_open_deg(double deg) {
  // Maps into (-180, 180]; inputs here are already within one period.
  if (deg <= -180.0) return deg + 360.0;
  if (deg > 180.0) return deg - 360.0;
  return deg;
}
}  // namespace detail

/// Decomposes the rotation as R = Rz(rz) * Ry(ry) * Rx(rx) (fixed-axis XYZ).
/// At the ry = +/-90 deg gimbal lock only rx + rz is observable; the split
/// is fixed by reporting rx = 0.
inline EulerAngles euler_from_rotation(const RigidTransform& t) {
  const Eigen::Matrix3d& r = t.rotation;
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  EulerAngles e;
  if (std::abs(sy) >= 1.0 - 1e-14) {
    e.ry = sy > 0.0 ? 90.0 : -90.0;
    e.rx = 0.0;
    e.rz = rad2deg(std::atan2(-r(0, 1), r(1, 1)));
  } else {
    e.ry = rad2deg(std::asin(sy));
    e.rx = rad2deg(std::atan2(r(2, 1), r(2, 2)));
    e.rz = rad2deg(std::atan2(r(1, 0), r(0, 0)));
  }
  e.rx = detail::wrap_half_open_deg(e.rx);
  e.ry = detail::wrap_half_open_deg(e.ry);
  e.rz = detail::wrap_half_open_deg(e.rz);
  return e;
}

inline Eigen::Matrix3d euler_to_rotation(const EulerAngles& e) {
  return (Eigen::AngleAxisd(deg2rad(e.rz), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(deg2rad(e.ry), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(deg2rad(e.rx), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

}  // namespace diffcal
