#pragma once

#include <vector>

#include "reflex/arm.hpp"
#include "reflex/gripper.hpp"
#include "reflex/se3.hpp"

namespace reflex {

/// Thresholds and gains of the grasping reflexes.
struct ReflexParams {
    double gamma_psi = 0.3;   // antipodal polar-angle threshold [rad]
    double gamma_n = 0.3;     // grasp-detection normal force threshold [N]
    double mu_hat = 0.5;      // friction coefficient estimate
    double gamma_c = 1.6;     // friction cone safety factor, >= 1
    double epsilon_r = 0.01;  // radius clearance for re-grasp trajectories [m]
    double t_f = 0.150;       // re-grasp trajectory duration [s]
    double gamma_q = 0.05;    // leader/follower gripper gap threshold [rad]
    int max_attempts = 5;

    double gamma_mu() const { return mu_hat / gamma_c; }
};

enum class ReflexMode { Teleop, AntiSlip, RegraspPlanning, RegraspExecuting };

const char* to_string(ReflexMode mode);

struct JointTrajectory {
    double start_time = 0.0;
    double duration = 0.0;
    JointVector arm_start = JointVector::Zero();
    JointVector arm_end = JointVector::Zero();
    double gripper_start = 0.0;
    double gripper_end = 0.0;

    bool finished(double t) const { return t >= start_time + duration - 1e-12; }

    double progress(double t) const {
        if (duration <= 0.0) return 1.0;
        const double s = (t - start_time) / duration;
        return s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
    }

    JointVector arm_at(double t) const {
        return arm_start + progress(t) * (arm_end - arm_start);
    }

    double gripper_at(double t) const {
        return gripper_start + progress(t) * (gripper_end - gripper_start);
    }
};

struct ReflexState {
    ReflexMode mode = ReflexMode::Teleop;
    int attempt_count = 0;
    bool secure = false;
    bool lockout = false;  // attempts exhausted; cleared when the user releases
    JointTrajectory trajectory;
};

struct ObjectEstimate {
    Vector3 center = Vector3::Zero();  // gripper frame [m]
    double radius = 0.0;               // [m]
    double residual = 0.0;             // disagreement of the two center predictions [m]
    bool fallback = false;             // degenerate system, geometric fallback used
};

/// Hierarchical grasp detection: the gripper-gap condition gates the
/// normal-force condition, which requires both fingers above gamma_n.
bool grasp_detected(double q_gl, double q_gf, const ContactReading& reading_fixed,
                    const ContactReading& reading_actuated, const ReflexParams& params);

struct AntipodalResult {
    double psi_fixed = 0.0;
    double psi_actuated = 0.0;
    bool pass = false;
};

/// Converts the measured contact frames (relative to their fingertip
/// frames) into the ideal antipodal frames for the current gripper
/// opening and measures the polar angle of each contact normal. Passes
/// when both angles are within gamma_psi.
AntipodalResult antipodal_check(const RigidTransform& contact_fixed,
                                const RigidTransform& contact_actuated, double q_g,
                                const GripperGeometry& geom, const ReflexParams& params);

/// Normal force that keeps the measured shear inside the shrunk friction
/// cone: max over both sensors of F_t / gamma_mu.
double antislip_desired_force(const ContactReading& reading_fixed,
                              const ContactReading& reading_actuated, const ReflexParams& params);

/// Feed-forward gripper torque of the anti-slip reflex. Never weaker than
/// the torque the user is already commanding: the reflex adds grip force,
/// it does not take it away.
double antislip_torque(const ContactReading& reading_fixed, const ContactReading& reading_actuated,
                       const GripperGeometry& geom, const ReflexParams& params,
                       double user_closing_torque);

/// Least-squares object center and radius from two contact frames in the
/// gripper base frame: each contact predicts the center one radius along
/// its normal, giving six equations in four unknowns. When the system is
/// degenerate the radius falls back to the current fingertip half-gap
/// and the center to the contact midpoint.
ObjectEstimate estimate_object(const RigidTransform& contact_fixed_in_g,
                               const RigidTransform& contact_actuated_in_g,
                               const GripperGeometry& geom, double q_g);

/// Averaged dome-tilt corrections used to build the re-grasp rotation:
/// theta' from the matched tilts, phi' from the mirrored ones.
struct CorrectionAngles {
    double theta = 0.0;
    double phi = 0.0;
};

CorrectionAngles correction_angles(const ContactReading& reading_fixed,
                                   const ContactReading& reading_actuated);

struct RegraspPlan {
    bool ok = false;
    JointTrajectory trajectory;
    double alpha = 0.0;              // wrist-roll share of the correction rotation
    double gripper_target = 0.0;
    RigidTransform gripper_goal;     // world frame
};

/// Builds the fast re-grasp trajectory: opening the gripper to clear the
/// estimated object, re-centering the gripper so the object sits between
/// the fingertips, and folding the wrist-roll share of the correction
/// rotation into the final wrist angle.
RegraspPlan plan_regrasp(const ObjectEstimate& estimate, const RigidTransform& gripper_pose,
                         double q_g, const ContactReading& reading_fixed,
                         const ContactReading& reading_actuated, const ChainGeometry& chain,
                         const GripperGeometry& geom, const ReflexParams& params,
                         const JointVector& arm_q, double t_now);

enum class ReflexEventType {
    GraspDetected,
    AntipodalPass,
    AntipodalFail,
    SecureEntered,
    RegraspStarted,
    RegraspCompleted,
    RegraspAborted,
    AttemptsExhausted,
    Released,
    GraspLost
};

struct ReflexEvent {
    ReflexEventType type;
    double t = 0.0;
    double psi_fixed = 0.0;
    double psi_actuated = 0.0;
    int attempt = 0;
};

struct FsmInputs {
    double t = 0.0;
    double q_gl = 0.0;  // leader gripper
    double q_gf = 0.0;  // follower gripper
    ContactReading reading_fixed;
    ContactReading reading_actuated;
    JointVector arm_q = JointVector::Zero();
    RigidTransform gripper_pose;  // follower gripper base, from joint encoders
    double user_closing_torque = 0.0;
};

struct FsmCommands {
    bool override_joints = false;
    JointVector arm_q = JointVector::Zero();
    double gripper_q = 0.0;
    bool has_gripper_torque = false;
    double gripper_torque = 0.0;
};

struct FsmResult {
    ReflexState state;
    FsmCommands commands;
    std::vector<ReflexEvent> events;
};

/// One 500 Hz step of the reflex state machine. Pure: the next state and
/// commands depend only on (state, inputs, params, kinematics).
FsmResult fsm_tick(const ReflexState& state, const FsmInputs& inputs, const ReflexParams& params,
                   const ChainGeometry& chain, const GripperGeometry& geom);

}  // namespace reflex
