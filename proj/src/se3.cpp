#include "reflex/se3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace reflex {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kAngleSlack = 1e-12;
}  // namespace

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
    return compose(*this, other);
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

RigidTransform inverse(const RigidTransform& t) {
    RigidTransform out;
    out.rotation = t.rotation.transpose();
    out.translation = -(out.rotation * t.translation);
    return out;
}

RigidTransform translate(const Vector3& p) {
    RigidTransform out;
    out.translation = p;
    return out;
}

Rotation3 rot_x(double angle) {
    if (!std::isfinite(angle)) throw std::domain_error("rot_x: angle must be finite");
    const double c = std::cos(angle), s = std::sin(angle);
    Rotation3 r;
    r << 1, 0, 0,
         0, c, -s,
         0, s, c;
    return r;
}

Rotation3 rot_y(double angle) {
    if (!std::isfinite(angle)) throw std::domain_error("rot_y: angle must be finite");
    const double c = std::cos(angle), s = std::sin(angle);
    Rotation3 r;
    r << c, 0, s,
         0, 1, 0,
         -s, 0, c;
    return r;
}

Rotation3 rot_z(double angle) {
    if (!std::isfinite(angle)) throw std::domain_error("rot_z: angle must be finite");
    const double c = std::cos(angle), s = std::sin(angle);
    Rotation3 r;
    r << c, -s, 0,
         s, c, 0,
         0, 0, 1;
    return r;
}

bool is_valid_rotation(const Rotation3& r, double tol) {
    const Rotation3 should_be_identity = r * r.transpose();
    if ((should_be_identity - Rotation3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform contact_frame(double theta, double phi, double r_sensor) {
    if (std::abs(theta) > kHalfPi + kAngleSlack || std::abs(phi) > kHalfPi + kAngleSlack) {
        throw std::domain_error("contact_frame: angles outside the dome hemisphere");
    }
    if (!(r_sensor > 0.0)) {
        throw std::domain_error("contact_frame: sensor radius must be positive");
    }
    RigidTransform out;
    out.rotation = rot_y(phi) * rot_x(theta);
    out.translation = out.rotation * Vector3(0.0, 0.0, r_sensor);
    return out;
}

bool dome_angles_from_direction(const Vector3& dir, double& theta, double& phi) {
    // contact_frame maps z to (sin(phi)cos(theta), -sin(theta), cos(phi)cos(theta)).
    if (dir.z() < -kAngleSlack) return false;
    const double sy = std::clamp(-dir.y(), -1.0, 1.0);
    theta = std::asin(sy);
    phi = std::atan2(dir.x(), std::max(dir.z(), 0.0));
    return std::abs(phi) <= kHalfPi + kAngleSlack;
}

double polar_angle(const RigidTransform& t) {
    const double c = std::clamp(t.rotation(2, 2), -1.0, 1.0);
    return std::acos(c);
}

double azimuth_angle(const Vector3& normal) {
    if (normal.x() == 0.0 && normal.y() == 0.0) return 0.0;
    return std::atan2(normal.y(), normal.x());
}

}  // namespace reflex
