#pragma once

#include <Eigen/Dense>

namespace reflex {

using Rotation3 = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;

/// Homogeneous rigid transform: rotation plus translation, composed as T(x) = R x + p.
struct RigidTransform {
    Rotation3 rotation = Rotation3::Identity();
    Vector3 translation = Vector3::Zero();

    static RigidTransform Identity() { return {}; }

    Vector3 apply(const Vector3& x) const { return rotation * x + translation; }

    RigidTransform operator*(const RigidTransform& other) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);
RigidTransform translate(const Vector3& p);

/// Right-handed elementary rotations. Angles in radians, must be finite.
Rotation3 rot_x(double angle);
Rotation3 rot_y(double angle);
Rotation3 rot_z(double angle);

/// Orthonormality and det(R) = +1, checked elementwise to `tol`.
bool is_valid_rotation(const Rotation3& r, double tol = 1e-9);

/// Frame of a contact point on a hemispherical sensor dome of radius
/// r_sensor, parameterized by two tilt angles. The frame is the product
/// rot_y(phi) * rot_x(theta) applied to a pure translation of r_sensor
/// along z, so the local z-axis is the outward contact normal and the
/// origin lies on the dome surface.
///
/// Both angles are restricted to the dome hemisphere, |theta| <= pi/2 and
/// |phi| <= pi/2; values outside throw std::domain_error, as does a
/// non-positive radius.
RigidTransform contact_frame(double theta, double phi, double r_sensor);

/// Inverts contact_frame: recovers (theta, phi) from a unit direction in
/// the dome base frame. The direction must lie in the front hemisphere
/// (z >= 0); returns false otherwise.
bool dome_angles_from_direction(const Vector3& dir, double& theta, double& phi);

/// Angle between the z-axes of the two frames related by `t`, i.e.
/// acos of the bottom-right rotation element (zero-based index [2,2]),
/// clamped to [-1, 1] before acos. Result in [0, pi].
double polar_angle(const RigidTransform& t);

/// Two-argument arctangent atan2(n_y, n_x) of a unit normal, range
/// (-pi, pi]. Returns 0 by convention when n_x = n_y = 0.
double azimuth_angle(const Vector3& normal);

}  // namespace reflex
