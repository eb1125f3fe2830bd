#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "reflex/se3.hpp"

namespace reflex {

/// Geometry of the 1-DOF parallel gripper: one fixed finger and one
/// actuated finger, each carrying a hemispherical force-sensing dome at
/// the tip.
///
/// Conventions:
///  - The gripper base frame G has z pointing out along the approach
///    direction, y along the closing axis (from the fixed toward the
///    actuated finger) and x completing the right-handed frame.
///  - q_g increases to OPEN the gripper; a negative joint torque closes.
///  - Fingertip separation between the two dome centers follows
///    d(q) = d_zero + link_radius * sin(q), the chord law of the actuated
///    finger link swinging about its pivot.
///  - The fast inverse of d(q) is a linear fit q = a*(d/2) + b whose
///    constants are refit over the motion range at construction.
struct GripperGeometry {
    double r_sensor = 0.010;      // dome radius [m]
    double l_finger = 0.100;      // pivot-to-dome lever arm for torque mapping [m]
    double link_radius = 0.1066;  // effective swing radius of the actuated finger [m]
    double d_zero = 0.0588;     // dome separation at q_g = 0 [m]
    double d_max = 0.095;         // separation fully open [m]
    double l_tip = 0.100;         // dome center offset along G's z-axis [m]

    // Derived at construction.
    double d_min = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double fit_a = 0.0;    // [rad/m]
    double fit_b = 0.0;    // [rad]
    double fit_r2 = 0.0;

    static GripperGeometry with_defaults();

    /// Recomputes d_min, the joint range and the linear inverse fit from
    /// the primary fields. Call after editing any of them.
    void finalize();
};

struct GripperState {
    double q_g = 0.0;
    double qd_g = 0.0;
    double tau_g = 0.0;
};

struct LinearFit {
    double a = 0.0;
    double b = 0.0;
    double r_squared = 0.0;
};

/// Least-squares refit of the linear separation inverse q = a*(d/2) + b
/// over the full joint range of `geom`.
LinearFit fit_linear_inverse(const GripperGeometry& geom, int samples = 512);

/// Evaluates the linear gripper-angle law q = a * half_span + b.
double linear_gripper_angle(double half_span, double a, double b);

/// Exact dome-center separation at joint angle q. Throws std::domain_error
/// outside [q_min, q_max].
double separation(const GripperGeometry& geom, double q);

/// Linear-fit inverse of separation(). Throws std::out_of_range for
/// separations the gripper cannot reach.
double inverse_separation(const GripperGeometry& geom, double d);

/// Exact analytic inverse of separation(), used internally where the
/// approximation error of the linear fit matters.
double exact_inverse_separation(const GripperGeometry& geom, double d);

/// Fingertip dome base frames (fixed, actuated) expressed in G. Both
/// z-axes point at the opposing finger.
std::pair<RigidTransform, RigidTransform> fingertip_frames(const GripperGeometry& geom, double q);

/// Ideal antipodal contact frames (fixed, actuated) in G at joint angle q:
/// each sits on its dome surface at the point facing the opposing finger,
/// z-axis along the inter-fingertip axis.
std::pair<RigidTransform, RigidTransform> desired_contact_frames(const GripperGeometry& geom, double q);

/// tau = -f_n * l_finger and its inverse. Closing torques are negative.
double torque_for_force(const GripperGeometry& geom, double f_n_des);
double grip_force_from_torque(const GripperGeometry& geom, double tau);

struct NoiseParams {
    double angle_sigma = 0.02;  // [rad]
    double force_sigma = 0.1;   // [N]
    bool enabled = true;
};

struct SensorSpec {
    double rate_hz = 200.0;
    double force_resolution = 0.5;   // [N]
    double force_saturation = 25.0;  // [N]
};

/// One fingertip sensor sample: contact location on the dome in tilt
/// angles, contact forces in the (estimated) contact frame, validity.
struct ContactReading {
    double theta = 0.0;
    double phi = 0.0;
    double f_n = 0.0;
    double f_x = 0.0;
    double f_y = 0.0;
    bool in_contact = false;
    double timestamp = 0.0;
};

/// Synthesizes one sensor reading from ground-truth contact state.
///
/// The contact direction is taken along the line from the dome center to
/// the object center, converted to dome tilt angles, and perturbed with
/// zero-mean Gaussian angle noise. Forces are projected into the
/// (measured) contact frame, perturbed, clamped to the saturation limit
/// and quantized to the force resolution. A reading whose quantized
/// normal force falls below one resolution step reports no contact.
ContactReading sense_contact(const RigidTransform& fingertip_pose,
                             const Vector3& object_center,
                             double object_radius,
                             double applied_normal,
                             const Vector3& applied_shear_world,
                             const NoiseParams& noise,
                             const SensorSpec& spec,
                             std::mt19937_64& rng,
                             double timestamp);

/// Sample-and-hold front end for one dome sensor: re-evaluates
/// sense_contact only on sample-rate boundaries and returns the held
/// reading in between, so a faster control loop sees a constant value
/// between samples.
class DomeSensor {
public:
    DomeSensor(NoiseParams noise, SensorSpec spec, std::uint64_t seed)
        : noise_(noise), spec_(spec), rng_(seed) {}

    ContactReading sample(double t,
                          const RigidTransform& fingertip_pose,
                          bool touching,
                          const Vector3& object_center,
                          double object_radius,
                          double applied_normal,
                          const Vector3& applied_shear_world);

    const ContactReading& held() const { return held_; }

private:
    NoiseParams noise_;
    SensorSpec spec_;
    std::mt19937_64 rng_;
    ContactReading held_;
    long last_sample_ = -1;
};

}  // namespace reflex
