#include "reflex/reflex.hpp"

#include <algorithm>
#include <cmath>

namespace reflex {

const char* to_string(ReflexMode mode) {
    switch (mode) {
        case ReflexMode::Teleop: return "teleop";
        case ReflexMode::AntiSlip: return "anti_slip";
        case ReflexMode::RegraspPlanning: return "regrasp_planning";
        case ReflexMode::RegraspExecuting: return "regrasp_executing";
    }
    return "unknown";
}

bool grasp_detected(double q_gl, double q_gf, const ContactReading& reading_fixed,
                    const ContactReading& reading_actuated, const ReflexParams& params) {
    const bool gripper_gate = (q_gl - q_gf) <= params.gamma_q;
    if (!gripper_gate) return false;
    return std::abs(reading_fixed.f_n) >= params.gamma_n &&
           std::abs(reading_actuated.f_n) >= params.gamma_n;
}

AntipodalResult antipodal_check(const RigidTransform& contact_fixed,
                                const RigidTransform& contact_actuated, double q_g,
                                const GripperGeometry& geom, const ReflexParams& params) {
    const auto [tip_fixed, tip_actuated] = fingertip_frames(geom, q_g);
    const auto [desired_fixed, desired_actuated] = desired_contact_frames(geom, q_g);

    const RigidTransform desired_fixed_local = inverse(tip_fixed) * desired_fixed;
    const RigidTransform desired_actuated_local = inverse(tip_actuated) * desired_actuated;

    AntipodalResult out;
    out.psi_fixed = polar_angle(inverse(desired_fixed_local) * contact_fixed);
    out.psi_actuated = polar_angle(inverse(desired_actuated_local) * contact_actuated);
    out.pass = out.psi_fixed <= params.gamma_psi && out.psi_actuated <= params.gamma_psi;
    return out;
}

double antislip_desired_force(const ContactReading& reading_fixed,
                              const ContactReading& reading_actuated,
                              const ReflexParams& params) {
    const double ft_fixed = std::hypot(reading_fixed.f_x, reading_fixed.f_y);
    const double ft_actuated = std::hypot(reading_actuated.f_x, reading_actuated.f_y);
    return std::max(ft_fixed, ft_actuated) / params.gamma_mu();
}

double antislip_torque(const ContactReading& reading_fixed, const ContactReading& reading_actuated,
                       const GripperGeometry& geom, const ReflexParams& params,
                       double user_closing_torque) {
    const double reflex_force = antislip_desired_force(reading_fixed, reading_actuated, params);
    const double user_force = std::max(0.0, grip_force_from_torque(geom, user_closing_torque));
    return torque_for_force(geom, std::max(reflex_force, user_force));
}

ObjectEstimate estimate_object(const RigidTransform& contact_fixed_in_g,
                               const RigidTransform& contact_actuated_in_g,
                               const GripperGeometry& geom, double q_g) {
    const Vector3 p_f = contact_fixed_in_g.translation;
    const Vector3 p_a = contact_actuated_in_g.translation;
    const Vector3 n_f = contact_fixed_in_g.rotation.col(2);
    const Vector3 n_a = contact_actuated_in_g.rotation.col(2);

    // center - r * n_i = p_i, stacked for both contacts
    Eigen::Matrix<double, 6, 4> a;
    a.setZero();
    a.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
    a.block<3, 3>(3, 0) = Eigen::Matrix3d::Identity();
    a.block<3, 1>(0, 3) = -n_f;
    a.block<3, 1>(3, 3) = -n_a;
    Eigen::Matrix<double, 6, 1> b;
    b << p_f, p_a;

    Eigen::JacobiSVD<Eigen::Matrix<double, 6, 4>> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double sigma_max = svd.singularValues()(0);
    const double sigma_min = svd.singularValues()(3);

    ObjectEstimate out;
    if (sigma_min < 1e-8 * sigma_max) {
        out.fallback = true;
    } else {
        const Eigen::Vector4d x = svd.solve(b);
        out.center = x.head<3>();
        out.radius = x(3);
        out.residual = ((p_f + out.radius * n_f) - (p_a + out.radius * n_a)).norm();
        if (!(out.radius > 0.0) || !std::isfinite(out.radius)) out.fallback = true;
    }

    if (out.fallback) {
        out.center = 0.5 * (p_f + p_a);
        out.radius = separation(geom, q_g) / 2.0 - geom.r_sensor;
        out.residual = 0.0;
    }
    return out;
}

CorrectionAngles correction_angles(const ContactReading& reading_fixed,
                                   const ContactReading& reading_actuated) {
    CorrectionAngles out;
    out.theta = 0.5 * (reading_fixed.theta + reading_actuated.theta);
    out.phi = 0.5 * (reading_fixed.phi - reading_actuated.phi);
    return out;
}

RegraspPlan plan_regrasp(const ObjectEstimate& estimate, const RigidTransform& gripper_pose,
                         double q_g, const ContactReading& reading_fixed,
                         const ContactReading& reading_actuated, const ChainGeometry& chain,
                         const GripperGeometry& geom, const ReflexParams& params,
                         const JointVector& arm_q, double t_now) {
    RegraspPlan plan;

    const double clearance_separation =
        std::clamp(2.0 * (estimate.radius + geom.r_sensor + params.epsilon_r), geom.d_min, geom.d_max);
    double q_star = inverse_separation(geom, clearance_separation);
    q_star = std::clamp(q_star, geom.q_min, geom.q_max);
    plan.gripper_target = q_star;

    const auto [desired_fixed, desired_actuated] = desired_contact_frames(geom, q_star);
    const Vector3 center_target =
        desired_fixed.translation +
        0.5 * (desired_actuated.translation - desired_fixed.translation);

    const CorrectionAngles corr = correction_angles(reading_fixed, reading_actuated);

    const auto [tip_fixed, tip_actuated] = fingertip_frames(geom, q_g);
    (void)tip_actuated;
    const RigidTransform contact_fixed_in_g =
        tip_fixed * contact_frame(reading_fixed.theta, reading_fixed.phi, geom.r_sensor);

    RigidTransform correction;
    correction.rotation = rot_y(corr.phi) * rot_x(corr.theta);
    const RigidTransform center_rotation =
        inverse(desired_fixed) * contact_fixed_in_g * correction;

    const Rotation3 rotation_in_g =
        desired_fixed.rotation * center_rotation.rotation * desired_fixed.rotation.transpose();
    plan.alpha = wrist_roll_decomposition(rotation_in_g).alpha;

    // Translation-only retarget; the rotational share rides on the wrist roll.
    plan.gripper_goal =
        gripper_pose * translate(estimate.center) * inverse(translate(center_target));

    const IkResult ik = inverse_kinematics(chain, plan.gripper_goal, arm_q);
    if (!ik.converged) return plan;

    JointVector arm_end = ik.q;
    arm_end[5] += plan.alpha;
    for (int i = 0; i < 6; ++i) {
        arm_end[i] = std::clamp(arm_end[i], chain.lower_limits[i], chain.upper_limits[i]);
    }

    plan.trajectory.start_time = t_now;
    plan.trajectory.duration = params.t_f;
    plan.trajectory.arm_start = arm_q;
    plan.trajectory.arm_end = arm_end;
    plan.trajectory.gripper_start = q_g;
    plan.trajectory.gripper_end = q_star;
    plan.ok = true;
    return plan;
}

FsmResult fsm_tick(const ReflexState& state, const FsmInputs& inputs, const ReflexParams& params,
                   const ChainGeometry& chain, const GripperGeometry& geom) {
    FsmResult result;
    result.state = state;
    ReflexState& next = result.state;

    const bool released = (inputs.q_gl - inputs.q_gf) > params.gamma_q;
    const bool detected = grasp_detected(inputs.q_gl, inputs.q_gf, inputs.reading_fixed,
                                         inputs.reading_actuated, params);

    auto push_event = [&](ReflexEventType type, double psi_f = 0.0, double psi_a = 0.0) {
        result.events.push_back({type, inputs.t, psi_f, psi_a, next.attempt_count});
    };

    auto handle_detection = [&]() {
        next.attempt_count += 1;
        const RigidTransform contact_fixed =
            contact_frame(inputs.reading_fixed.theta, inputs.reading_fixed.phi, geom.r_sensor);
        const RigidTransform contact_actuated =
            contact_frame(inputs.reading_actuated.theta, inputs.reading_actuated.phi, geom.r_sensor);
        const AntipodalResult check =
            antipodal_check(contact_fixed, contact_actuated, inputs.q_gf, geom, params);
        push_event(ReflexEventType::GraspDetected, check.psi_fixed, check.psi_actuated);

        if (check.pass) {
            push_event(ReflexEventType::AntipodalPass, check.psi_fixed, check.psi_actuated);
            next.mode = ReflexMode::AntiSlip;
            next.secure = true;
            result.commands.has_gripper_torque = true;
            result.commands.gripper_torque =
                antislip_torque(inputs.reading_fixed, inputs.reading_actuated, geom, params,
                                inputs.user_closing_torque);
            push_event(ReflexEventType::SecureEntered, check.psi_fixed, check.psi_actuated);
            return;
        }

        push_event(ReflexEventType::AntipodalFail, check.psi_fixed, check.psi_actuated);
        if (next.attempt_count >= params.max_attempts) {
            next.lockout = true;
            next.mode = ReflexMode::Teleop;
            push_event(ReflexEventType::AttemptsExhausted);
            return;
        }

        // Plan immediately: the contact information is fresh this tick.
        const auto [tip_fixed, tip_actuated] = fingertip_frames(geom, inputs.q_gf);
        const ObjectEstimate estimate = estimate_object(
            tip_fixed * contact_fixed, tip_actuated * contact_actuated, geom, inputs.q_gf);
        const RegraspPlan plan =
            plan_regrasp(estimate, inputs.gripper_pose, inputs.q_gf, inputs.reading_fixed,
                         inputs.reading_actuated, chain, geom, params, inputs.arm_q, inputs.t);
        if (plan.ok) {
            next.trajectory = plan.trajectory;
            next.mode = ReflexMode::RegraspExecuting;
            result.commands.override_joints = true;
            result.commands.arm_q = plan.trajectory.arm_start;
            result.commands.gripper_q = plan.trajectory.gripper_start;
            push_event(ReflexEventType::RegraspStarted);
        } else {
            next.mode = ReflexMode::Teleop;
            push_event(ReflexEventType::RegraspAborted);
        }
    };

    switch (state.mode) {
        case ReflexMode::Teleop: {
            if (released) {
                if (next.lockout || next.attempt_count > 0) {
                    next.lockout = false;
                    next.attempt_count = 0;
                    push_event(ReflexEventType::Released);
                }
                break;
            }
            if (!next.lockout && detected && inputs.reading_fixed.in_contact &&
                inputs.reading_actuated.in_contact) {
                handle_detection();
            }
            break;
        }
        case ReflexMode::RegraspPlanning: {
            // Planning happens on the detection tick; this mode only exists
            // transiently when a plan is injected from outside.
            next.mode = ReflexMode::Teleop;
            break;
        }
        case ReflexMode::RegraspExecuting: {
            result.commands.override_joints = true;
            result.commands.arm_q = state.trajectory.arm_at(inputs.t);
            result.commands.gripper_q = state.trajectory.gripper_at(inputs.t);
            if (state.trajectory.finished(inputs.t)) {
                result.commands.arm_q = state.trajectory.arm_end;
                result.commands.gripper_q = state.trajectory.gripper_end;
                next.mode = ReflexMode::Teleop;
                push_event(ReflexEventType::RegraspCompleted);
            }
            break;
        }
        case ReflexMode::AntiSlip: {
            if (released) {
                next.mode = ReflexMode::Teleop;
                next.secure = false;
                next.attempt_count = 0;
                next.lockout = false;
                push_event(ReflexEventType::Released);
                break;
            }
            if (!detected) {
                next.mode = ReflexMode::Teleop;
                next.secure = false;
                push_event(ReflexEventType::GraspLost);
                break;
            }
            result.commands.has_gripper_torque = true;
            result.commands.gripper_torque =
                antislip_torque(inputs.reading_fixed, inputs.reading_actuated, geom, params,
                                inputs.user_closing_torque);
            break;
        }
    }

    if (next.mode != ReflexMode::AntiSlip) next.secure = false;
    return result;
}

}  // namespace reflex
