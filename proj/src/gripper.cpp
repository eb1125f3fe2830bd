#include "reflex/gripper.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace reflex {

namespace {

double quantize(double value, double step) {
    return std::round(value / step) * step;
}

}  // namespace

GripperGeometry GripperGeometry::with_defaults() {
    GripperGeometry g;
    g.finalize();
    return g;
}

void GripperGeometry::finalize() {
    d_min = 2.0 * r_sensor;
    if (!(d_min < d_zero && d_zero < d_max)) {
        throw std::domain_error("GripperGeometry: require d_min < d_zero < d_max");
    }
    if (d_max - d_zero >= link_radius || d_zero - d_min >= link_radius) {
        throw std::domain_error("GripperGeometry: separation range exceeds link swing");
    }
    q_min = std::asin((d_min - d_zero) / link_radius);
    q_max = std::asin((d_max - d_zero) / link_radius);
    const LinearFit fit = fit_linear_inverse(*this);
    fit_a = fit.a;
    fit_b = fit.b;
    fit_r2 = fit.r_squared;
}

LinearFit fit_linear_inverse(const GripperGeometry& geom, int samples) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const int n = std::max(samples, 2);
    for (int i = 0; i < n; ++i) {
        const double q = geom.q_min + (geom.q_max - geom.q_min) * i / (n - 1);
        const double x = (geom.d_zero + geom.link_radius * std::sin(q)) / 2.0;
        sx += x;
        sy += q;
        sxx += x * x;
        sxy += x * q;
        syy += q * q;
    }
    const double mx = sx / n, my = sy / n;
    const double cov = sxy / n - mx * my;
    const double varx = sxx / n - mx * mx;
    const double vary = syy / n - my * my;
    LinearFit fit;
    fit.a = cov / varx;
    fit.b = my - fit.a * mx;
    fit.r_squared = (cov * cov) / (varx * vary);
    return fit;
}

double linear_gripper_angle(double half_span, double a, double b) {
    return a * half_span + b;
}

double separation(const GripperGeometry& geom, double q) {
    if (q < geom.q_min - 1e-9 || q > geom.q_max + 1e-9) {
        throw std::domain_error("separation: joint angle out of range");
    }
    return geom.d_zero + geom.link_radius * std::sin(q);
}

double inverse_separation(const GripperGeometry& geom, double d) {
    if (d < geom.d_min - 1e-6 || d > geom.d_max + 1e-6) {
        throw std::out_of_range("inverse_separation: separation not reachable");
    }
    return linear_gripper_angle(d / 2.0, geom.fit_a, geom.fit_b);
}

double exact_inverse_separation(const GripperGeometry& geom, double d) {
    if (d < geom.d_min - 1e-9 || d > geom.d_max + 1e-9) {
        throw std::out_of_range("exact_inverse_separation: separation not reachable");
    }
    const double s = std::clamp((d - geom.d_zero) / geom.link_radius, -1.0, 1.0);
    return std::asin(s);
}

std::pair<RigidTransform, RigidTransform> fingertip_frames(const GripperGeometry& geom, double q) {
    const double d = separation(geom, q);
    const double y_fixed = -geom.d_zero / 2.0;

    RigidTransform fixed;
    fixed.rotation.col(0) = Vector3(0, 0, 1);   // dome x along the approach axis
    fixed.rotation.col(1) = Vector3(1, 0, 0);
    fixed.rotation.col(2) = Vector3(0, 1, 0);   // dome z toward the actuated finger
    fixed.translation = Vector3(0, y_fixed, geom.l_tip);

    RigidTransform actuated;
    actuated.rotation.col(0) = Vector3(0, 0, -1);
    actuated.rotation.col(1) = Vector3(1, 0, 0);
    actuated.rotation.col(2) = Vector3(0, -1, 0);  // dome z toward the fixed finger
    actuated.translation = Vector3(0, y_fixed + d, geom.l_tip);

    return {fixed, actuated};
}

std::pair<RigidTransform, RigidTransform> desired_contact_frames(const GripperGeometry& geom, double q) {
    const auto [fixed, actuated] = fingertip_frames(geom, q);
    const Vector3 u = (actuated.translation - fixed.translation).normalized();

    auto build = [&](const RigidTransform& tip, const Vector3& z_axis) {
        RigidTransform frame;
        Vector3 x_axis = tip.rotation.col(0) - tip.rotation.col(0).dot(z_axis) * z_axis;
        x_axis.normalize();
        frame.rotation.col(0) = x_axis;
        frame.rotation.col(1) = z_axis.cross(x_axis);
        frame.rotation.col(2) = z_axis;
        frame.translation = tip.translation + geom.r_sensor * z_axis;
        return frame;
    };

    return {build(fixed, u), build(actuated, -u)};
}

double torque_for_force(const GripperGeometry& geom, double f_n_des) {
    if (f_n_des < 0.0) throw std::domain_error("torque_for_force: desired force must be >= 0");
    return -f_n_des * geom.l_finger;
}

double grip_force_from_torque(const GripperGeometry& geom, double tau) {
    return -tau / geom.l_finger;
}

ContactReading sense_contact(const RigidTransform& fingertip_pose,
                             const Vector3& object_center,
                             double object_radius,
                             double applied_normal,
                             const Vector3& applied_shear_world,
                             const NoiseParams& noise,
                             const SensorSpec& spec,
                             std::mt19937_64& rng,
                             double timestamp) {
    (void)object_radius;  // intersection is resolved upstream
    ContactReading out;
    out.timestamp = timestamp;

    const Vector3 offset = object_center - fingertip_pose.translation;
    const double dist = offset.norm();
    if (dist <= 1e-12) return out;

    const Vector3 dir_local = fingertip_pose.rotation.transpose() * (offset / dist);
    double theta = 0.0, phi = 0.0;
    if (!dome_angles_from_direction(dir_local, theta, phi)) return out;

    if (noise.enabled && noise.angle_sigma > 0.0) {
        std::normal_distribution<double> angle_noise(0.0, noise.angle_sigma);
        theta += angle_noise(rng);
        phi += angle_noise(rng);
    }
    constexpr double kHalf = 1.5707963267948966;
    theta = std::clamp(theta, -kHalf, kHalf);
    phi = std::clamp(phi, -kHalf, kHalf);

    double f_n = applied_normal;
    const Rotation3 frame_world = fingertip_pose.rotation * (rot_y(phi) * rot_x(theta));
    double f_x = frame_world.col(0).dot(applied_shear_world);
    double f_y = frame_world.col(1).dot(applied_shear_world);
    if (noise.enabled && noise.force_sigma > 0.0) {
        std::normal_distribution<double> force_noise(0.0, noise.force_sigma);
        f_n += force_noise(rng);
        f_x += force_noise(rng);
        f_y += force_noise(rng);
    }
    f_n = std::clamp(f_n, 0.0, spec.force_saturation);
    out.f_n = quantize(f_n, spec.force_resolution);
    out.f_x = std::clamp(quantize(f_x, spec.force_resolution), -spec.force_saturation, spec.force_saturation);
    out.f_y = std::clamp(quantize(f_y, spec.force_resolution), -spec.force_saturation, spec.force_saturation);
    out.theta = theta;
    out.phi = phi;
    out.in_contact = out.f_n >= spec.force_resolution - 1e-12;
    return out;
}

ContactReading DomeSensor::sample(double t,
                                  const RigidTransform& fingertip_pose,
                                  bool touching,
                                  const Vector3& object_center,
                                  double object_radius,
                                  double applied_normal,
                                  const Vector3& applied_shear_world) {
    const long index = static_cast<long>(std::floor(t * spec_.rate_hz + 1e-9));
    if (index <= last_sample_) return held_;
    last_sample_ = index;
    if (!touching) {
        held_ = ContactReading{};
        held_.timestamp = t;
        return held_;
    }
    held_ = sense_contact(fingertip_pose, object_center, object_radius, applied_normal,
                          applied_shear_world, noise_, spec_, rng_, t);
    return held_;
}

}  // namespace reflex
