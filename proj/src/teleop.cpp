#include "reflex/teleop.hpp"

#include <algorithm>
#include <cmath>

namespace reflex {

CouplingTorques coupling_torques(const JointVector& q_l, const JointVector& qd_l,
                                 const JointVector& q_f, const JointVector& qd_f,
                                 double q_gl, double qd_gl, double q_gf, double qd_gf,
                                 const CouplingGains& gains, double tau_gravity) {
    CouplingTorques out;
    out.follower_arm =
        gains.kp_arm * (q_l - q_f) + gains.kd_arm * (qd_l - qd_f) + JointVector::Constant(tau_gravity);
    out.leader_arm = -out.follower_arm;
    out.follower_gripper =
        gains.kp_gripper * (q_gl - q_gf) + gains.kd_gripper * (qd_gl - qd_gf) + tau_gravity;
    out.leader_gripper = -out.follower_gripper;
    return out;
}

const char* to_string(OperatorPhase phase) {
    switch (phase) {
        case OperatorPhase::MoveToStart: return "move_to_start";
        case OperatorPhase::Approach: return "approach";
        case OperatorPhase::Settle: return "settle";
        case OperatorPhase::Squeeze: return "squeeze";
        case OperatorPhase::Hold: return "hold";
        case OperatorPhase::Lift: return "lift";
        case OperatorPhase::Transport: return "transport";
        case OperatorPhase::Release: return "release";
        case OperatorPhase::Retreat: return "retreat";
        case OperatorPhase::Done: return "done";
    }
    return "unknown";
}

OperatorModel::OperatorModel(OperatorScript script, const ChainGeometry& chain,
                             const GripperGeometry& gripper, const CouplingGains& gains,
                             std::uint64_t seed)
    : script_(std::move(script)), chain_(chain), gripper_(gripper), gains_(gains), rng_(seed) {
    open_angle_ = gripper_.q_max;
    grasp_close_angle_ = gripper_.q_min;
    q_gripper_ = open_angle_;
    prev_q_gripper_ = open_angle_;
}

void OperatorModel::set_object_start(const Vector3& position, double radius) {
    object_start_ = position;
    object_radius_ = radius;
    const double touch_separation = 2.0 * (object_radius_ + gripper_.r_sensor);
    grasp_close_angle_ =
        exact_inverse_separation(gripper_, std::clamp(touch_separation, gripper_.d_min, gripper_.d_max));
    const double open_separation = std::min(gripper_.d_max, touch_separation + 0.022);
    open_angle_ = exact_inverse_separation(gripper_, open_separation);
    q_gripper_ = open_angle_;
    prev_q_gripper_ = open_angle_;
    sample_aim_error();
}

void OperatorModel::set_initial_config(const JointVector& q, double q_gripper) {
    q_ = q;
    prev_q_ = q;
    q_gripper_ = q_gripper;
    prev_q_gripper_ = q_gripper;
}

void OperatorModel::sync(const JointVector& q, double q_gripper) {
    q_ = q;
    prev_q_ = q;
    q_gripper_ = q_gripper;
    prev_q_gripper_ = q_gripper;
}

void OperatorModel::sample_aim_error() {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Rotation3 base = forward_kinematics(chain_, JointVector::Zero()).rotation;
    aim_offset_ = script_.aim_sigma_lateral * gauss(rng_) * base.col(0) +
                  script_.aim_sigma_gap * gauss(rng_) * base.col(1) +
                  script_.aim_sigma_axial * gauss(rng_) * base.col(2);
    if (script_.aim_sigma_angle > 0.0) {
        Vector3 axis(gauss(rng_), gauss(rng_), gauss(rng_));
        if (axis.norm() < 1e-9) axis = Vector3(0, 0, 1);
        axis.normalize();
        const double angle = script_.aim_sigma_angle * gauss(rng_);
        aim_rotation_ = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    } else {
        aim_rotation_ = Rotation3::Identity();
    }

    const Rotation3 grasp_rot = aim_rotation_ * base;
    const auto [fixed_local, actuated_local] = fingertip_frames(gripper_, 0.0);
    (void)actuated_local;
    nominal_grasp_.rotation = grasp_rot;
    nominal_grasp_.translation = object_start_ -
                                 (object_radius_ + gripper_.r_sensor) * grasp_rot.col(1) -
                                 grasp_rot * fixed_local.translation + aim_offset_;
}

RigidTransform OperatorModel::grasp_pose() const { return nominal_grasp_; }

RigidTransform OperatorModel::approach_start_pose() const {
    RigidTransform start = nominal_grasp_;
    start.translation += nominal_grasp_.rotation.col(2) * (-script_.approach_distance) +
                         Vector3(0, 0, script_.approach_height);
    return start;
}

bool OperatorModel::drive_towards(const RigidTransform& target, double dt, double speed) {
    const RigidTransform current = forward_kinematics(chain_, q_);
    const Vector3 e_pos = target.translation - current.translation;
    const Vector3 e_rot = rotation_log(target.rotation * current.rotation.transpose());
    const double pos_err = e_pos.norm();
    const double rot_err = e_rot.norm();
    if (pos_err < 1.5e-3 && rot_err < 0.01) return true;

    Vector3 step_pos = e_pos;
    if (pos_err > speed * dt) step_pos *= speed * dt / pos_err;
    Vector3 step_rot = e_rot;
    const double max_rot_step = 1.5 * dt;
    if (rot_err > max_rot_step) step_rot *= max_rot_step / rot_err;

    const Matrix6 j = jacobian(chain_, q_);
    Eigen::Matrix<double, 6, 1> twist;
    twist << step_pos, step_rot;
    const double damping = 0.02;
    const Matrix6 jjt = j * j.transpose() + damping * damping * Matrix6::Identity();
    JointVector dq = j.transpose() * jjt.ldlt().solve(twist);
    for (int i = 0; i < 6; ++i) {
        const double cap = chain_.velocity_limits[i] * dt;
        dq[i] = std::clamp(dq[i], -cap, cap);
    }
    q_ += dq;
    for (int i = 0; i < 6; ++i) {
        q_[i] = std::clamp(q_[i], chain_.lower_limits[i], chain_.upper_limits[i]);
    }
    return false;
}

void OperatorModel::begin_phase(OperatorPhase next, double t) {
    phase_ = next;
    phase_start_ = t;
}

LeaderCommand OperatorModel::step(double t, double dt, const OperatorObservation& obs,
                                  OperatorEvents& events) {
    prev_q_ = q_;
    prev_q_gripper_ = q_gripper_;

    if (obs.regrasp_active) {
        // Hands off while the reflex drives; keep local clocks frozen.
        phase_start_ += dt;
        LeaderCommand held;
        held.q = q_;
        held.q_gripper = q_gripper_;
        return held;
    }

    if (!first_motion_seen_ && phase_ != OperatorPhase::Done) {
        first_motion_seen_ = true;
        first_motion_time_ = t;
    }

    const double depth = script_.grip_force * gripper_.l_finger / gains_.kp_gripper;
    const double close_rate = 1.2;  // [rad/s]
    const double open_rate = 2.0;

    auto open_step = [&]() {
        q_gripper_ = std::min(open_angle_, q_gripper_ + open_rate * dt);
        return q_gripper_ >= open_angle_ - 1e-9;
    };

    switch (phase_) {
        case OperatorPhase::MoveToStart: {
            open_step();
            if (drive_towards(approach_start_pose(), dt, script_.approach_speed)) {
                begin_phase(OperatorPhase::Approach, t);
            }
            break;
        }
        case OperatorPhase::Approach: {
            open_step();
            if (drive_towards(grasp_pose(), dt, script_.approach_speed))
                begin_phase(OperatorPhase::Settle, t);
            break;
        }
        case OperatorPhase::Settle: {
            if (t - phase_start_ >= script_.settle_time) {
                begin_phase(OperatorPhase::Squeeze, t);
                events.attempt_started = true;
                secure_entry_ = -1.0;
            }
            break;
        }
        case OperatorPhase::Squeeze: {
            const double s = std::min(1.0, (t - phase_start_) / script_.squeeze_time);
            const double desired = obs.follower_gripper - depth * s;
            q_gripper_ = std::clamp(desired, q_gripper_ - close_rate * dt, q_gripper_);
            q_gripper_ = std::max(q_gripper_, gripper_.q_min);

            const bool engaged = obs.reflexes_enabled
                                     ? obs.secure
                                     : (obs.both_contacts && obs.object_held);
            if (engaged) {
                if (secure_entry_ < 0.0) secure_entry_ = t;
                if (t - secure_entry_ >= script_.post_secure_hold) {
                    begin_phase(script_.lift_enabled ? OperatorPhase::Lift : OperatorPhase::Hold, t);
                }
            } else {
                secure_entry_ = -1.0;
                const bool gave_up = t - phase_start_ > script_.squeeze_time + script_.secure_wait;
                if ((obs.reflexes_enabled && obs.reflex_failed) || gave_up) {
                    begin_phase(OperatorPhase::Retreat, t);
                    events.attempt_abandoned = true;
                }
            }
            break;
        }
        case OperatorPhase::Hold: {
            if (t - phase_start_ >= script_.hold_time) begin_phase(OperatorPhase::Release, t);
            break;
        }
        case OperatorPhase::Lift: {
            if (t - phase_start_ < 1e-9) {
                lift_target_ = forward_kinematics(chain_, q_);
                lift_target_.translation.z() += script_.lift_height;
            }
            if (!obs.object_held) {
                begin_phase(OperatorPhase::Retreat, t);
                events.attempt_abandoned = true;
                break;
            }
            if (drive_towards(lift_target_, dt, script_.transport_speed))
                begin_phase(OperatorPhase::Transport, t);
            break;
        }
        case OperatorPhase::Transport: {
            if (t - phase_start_ < 1e-9) {
                const Vector3 place_point = object_start_ + script_.place_offset;
                transport_target_ = forward_kinematics(chain_, q_);
                transport_target_.translation += place_point - obs.object_position;
            }
            if (!obs.object_held) {
                begin_phase(OperatorPhase::Retreat, t);
                events.attempt_abandoned = true;
                break;
            }
            if (drive_towards(transport_target_, dt, script_.transport_speed))
                begin_phase(OperatorPhase::Release, t);
            break;
        }
        case OperatorPhase::Release: {
            if (open_step()) {
                events.released = true;
                begin_phase(OperatorPhase::Done, t);
            }
            break;
        }
        case OperatorPhase::Retreat: {
            const bool opened = open_step();
            RigidTransform back = forward_kinematics(chain_, q_);
            if (t - phase_start_ < 1e-9) {
                back.translation += Vector3(0, 0, 0.06) - grasp_pose().rotation.col(2) * 0.08;
                retreat_target_ = back;
            }
            const bool arrived = drive_towards(retreat_target_, dt, script_.approach_speed);
            if (opened && (arrived || t - phase_start_ > 1.5)) {
                ++approach_attempts_;
                if (approach_attempts_ >= script_.max_approach_attempts) {
                    events.trial_failed = true;
                    begin_phase(OperatorPhase::Done, t);
                } else {
                    sample_aim_error();
                    begin_phase(OperatorPhase::MoveToStart, t);
                }
            }
            break;
        }
        case OperatorPhase::Done:
            break;
    }

    LeaderCommand cmd;
    cmd.q = q_;
    cmd.qd = (q_ - prev_q_) / dt;
    cmd.q_gripper = q_gripper_;
    cmd.qd_gripper = (q_gripper_ - prev_q_gripper_) / dt;
    return cmd;
}

}  // namespace reflex
