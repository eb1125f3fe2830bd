#pragma once

#include <utility>

#include "reflex/se3.hpp"

namespace reflex {

using JointVector = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Serial 6-DOF chain: shoulder pitch/roll, elbow pitch/roll, wrist
/// pitch/roll. At the zero configuration the arm is stretched along the
/// world x-axis; pitch joints rotate about y, roll joints about the link
/// axis x. The gripper base frame G hangs off the wrist with its z-axis
/// (approach direction) along the forearm, so the wrist-roll joint spins
/// about G's z-axis.
struct ChainGeometry {
    double upper_length = 0.48;  // shoulder to elbow [m]
    double lower_length = 0.48;  // elbow to wrist [m]
    RigidTransform base;         // shoulder frame in the world

    JointVector lower_limits = (JointVector() << -2.9, -2.9, -2.9, -2.9, -2.9, -2.9).finished();
    JointVector upper_limits = (JointVector() << 2.9, 2.9, 2.9, 2.9, 2.9, 2.9).finished();
    JointVector velocity_limits = (JointVector() << 3.0, 3.0, 3.0, 3.0, 3.0, 3.0).finished();

    double reach() const { return upper_length + lower_length; }
};

/// Gripper base pose in the world frame.
RigidTransform forward_kinematics(const ChainGeometry& chain, const JointVector& q);

/// World-frame geometric Jacobian at the gripper base origin; rows are
/// (linear velocity; angular velocity).
Matrix6 jacobian(const ChainGeometry& chain, const JointVector& q);

struct IkOptions {
    int max_iterations = 200;
    double position_tolerance = 1e-6;  // [m]
    double rotation_tolerance = 1e-6;  // [rad]
    double damping = 0.01;
    double max_step = 0.2;             // per-joint step clamp [rad]
};

struct IkResult {
    bool converged = false;
    JointVector q = JointVector::Zero();
    int iterations = 0;
    double position_error = 0.0;
    double rotation_error = 0.0;
};

/// Damped-least-squares inverse kinematics seeded at the current
/// configuration; returns the solution nearest the seed. Damping is
/// raised tenfold whenever the Jacobian condition number passes 1e6 so
/// near-singular targets do not produce joint jumps.
IkResult inverse_kinematics(const ChainGeometry& chain, const RigidTransform& target,
                            const JointVector& seed, const IkOptions& options = {});

/// Axis-angle vector of a rotation matrix.
Vector3 rotation_log(const Rotation3& r);

struct WristRollSplit {
    double alpha = 0.0;
    Rotation3 remainder = Rotation3::Identity();
};

/// Factors a rotation expressed in the gripper frame as
/// rot_z(alpha) * remainder, with alpha the component about the
/// wrist-roll axis (G's z). Recomposition is exact. The factorization is
/// order dependent, as any Euler split is.
WristRollSplit wrist_roll_decomposition(const Rotation3& rotation_in_gripper);

}  // namespace reflex
