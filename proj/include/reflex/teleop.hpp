#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "reflex/arm.hpp"
#include "reflex/gripper.hpp"
#include "reflex/world.hpp"

namespace reflex {

/// Per-joint PD coupling gains between corresponding leader and follower
/// joints (six arm joints plus the gripper).
struct CouplingGains {
    double kp_arm = 20.0;       // [Nm/rad]
    double kd_arm = 0.5;        // [Nm s/rad]
    double kp_gripper = 20.0;
    double kd_gripper = 0.5;
};

struct JointDynamics {
    double inertia_arm = 0.05;      // [kg m^2]
    double inertia_gripper = 0.005;
    double damping_arm = 0.05;      // viscous [Nm s/rad]
    double damping_gripper = 0.01;
};

struct CouplingTorques {
    JointVector follower_arm = JointVector::Zero();
    JointVector leader_arm = JointVector::Zero();
    double follower_gripper = 0.0;
    double leader_gripper = 0.0;
};

/// Bilateral PD law: the follower torque pulls the follower toward the
/// leader (plus a gravity-compensation term, exact cancellation here) and
/// the leader receives the negation as force feedback.
CouplingTorques coupling_torques(const JointVector& q_l, const JointVector& qd_l,
                                 const JointVector& q_f, const JointVector& qd_f,
                                 double q_gl, double qd_gl, double q_gf, double qd_gf,
                                 const CouplingGains& gains, double tau_gravity = 0.0);

/// Scripted stand-in for the human teleoperator: straight-line approach
/// to an aim-perturbed grasp pose, squeeze to a target grip force, then
/// lift, transport and release. Aim errors are drawn once per approach.
struct OperatorScript {
    std::string target_object = "object";
    double approach_distance = 0.15;  // start offset along the approach axis [m]
    double approach_height = 0.08;    // start offset upward [m]
    double approach_speed = 0.25;     // [m/s]
    double grip_force = 6.0;          // steady squeeze force [N]
    double squeeze_time = 0.8;        // ramp duration to full squeeze [s]
    double aim_sigma_lateral = 0.0;   // transverse offset sigma, G x-axis [m]
    double aim_sigma_axial = 0.0;     // depth offset sigma, G z-axis [m]
    double aim_sigma_gap = 0.0;       // closing-axis offset sigma [m]
    double aim_sigma_angle = 0.0;     // approach orientation error sigma [rad]
    double settle_time = 0.45;        // pause between arrival and squeeze [s]
    bool lift_enabled = false;
    double lift_height = 0.12;        // [m]
    Vector3 place_offset = Vector3(0.0, 0.15, 0.12);  // from the object start [m]
    double transport_speed = 0.25;    // [m/s]
    double hold_time = 1e9;           // grasp-and-hold duration before release [s]
    double secure_wait = 3.0;         // give up on an attempt after this long [s]
    double post_secure_hold = 0.6;    // carry check before lift [s]
    int max_approach_attempts = 4;
};

struct LeaderCommand {
    JointVector q = JointVector::Zero();
    JointVector qd = JointVector::Zero();
    double q_gripper = 0.0;
    double qd_gripper = 0.0;
};

enum class OperatorPhase {
    MoveToStart,
    Approach,
    Settle,
    Squeeze,
    Hold,
    Lift,
    Transport,
    Release,
    Retreat,
    Done
};

const char* to_string(OperatorPhase phase);

/// What the operator can observe each tick when deciding what to do next.
struct OperatorObservation {
    bool reflexes_enabled = false;
    bool secure = false;          // anti-slip reflex engaged
    bool reflex_failed = false;   // re-grasp attempts exhausted
    bool regrasp_active = false;
    bool both_contacts = false;
    bool object_held = false;
    double follower_gripper = 0.0;
    Vector3 object_position = Vector3::Zero();
};

struct OperatorEvents {
    bool attempt_started = false;
    bool attempt_abandoned = false;
    bool trial_succeeded = false;
    bool trial_failed = false;
    bool released = false;
};

/// Deterministic phase machine driving the leader device. The leader arm
/// is moved kinematically (one damped-least-squares velocity step per
/// tick toward the phase target); the gripper command is a position ramp
/// whose squeeze depth maps to the requested grip force through the
/// coupling stiffness.
class OperatorModel {
public:
    OperatorModel(OperatorScript script, const ChainGeometry& chain, const GripperGeometry& gripper,
                  const CouplingGains& gains, std::uint64_t seed);

    /// Advances one control tick and returns the leader joint commands.
    LeaderCommand step(double t, double dt, const OperatorObservation& obs, OperatorEvents& events);

    void set_object_start(const Vector3& position, double radius);
    void set_initial_config(const JointVector& q, double q_gripper);

    /// Re-seats the internal leader state after the reflex moved both
    /// devices, so the script resumes from where the hardware actually is.
    void sync(const JointVector& q, double q_gripper);

    OperatorPhase phase() const { return phase_; }
    int approach_attempts() const { return approach_attempts_; }
    bool first_motion_seen() const { return first_motion_seen_; }
    double first_motion_time() const { return first_motion_time_; }
    double open_angle() const { return open_angle_; }

    /// Where the approach begins, for seeding the arm configuration.
    RigidTransform approach_start_pose() const;

private:
    void sample_aim_error();
    RigidTransform grasp_pose() const;
    bool drive_towards(const RigidTransform& target, double dt, double speed);
    void begin_phase(OperatorPhase next, double t);

    OperatorScript script_;
    ChainGeometry chain_;
    GripperGeometry gripper_;
    CouplingGains gains_;
    std::mt19937_64 rng_;

    OperatorPhase phase_ = OperatorPhase::MoveToStart;
    double phase_start_ = 0.0;
    JointVector q_ = JointVector::Zero();
    double q_gripper_ = 0.0;
    double prev_q_gripper_ = 0.0;
    JointVector prev_q_ = JointVector::Zero();

    Vector3 object_start_ = Vector3::Zero();
    double object_radius_ = 0.03;
    Vector3 aim_offset_ = Vector3::Zero();
    Rotation3 aim_rotation_ = Rotation3::Identity();
    RigidTransform nominal_grasp_;
    RigidTransform lift_target_;
    RigidTransform transport_target_;
    RigidTransform retreat_target_;
    double open_angle_ = 0.0;
    double grasp_close_angle_ = 0.0;
    int approach_attempts_ = 0;
    bool first_motion_seen_ = false;
    double first_motion_time_ = 0.0;
    double secure_entry_ = -1.0;
};

}  // namespace reflex
