#include "reflex/arm.hpp"

#include <algorithm>
#include <cmath>

namespace reflex {

namespace {

RigidTransform wrist_to_gripper() {
    RigidTransform t;
    t.rotation.col(0) = Vector3(0, 0, -1);
    t.rotation.col(1) = Vector3(0, 1, 0);
    t.rotation.col(2) = Vector3(1, 0, 0);  // approach axis along the forearm
    return t;
}

struct ChainFrames {
    RigidTransform gripper;
    Vector3 joint_origin[6];
    Vector3 joint_axis[6];
};

ChainFrames chain_frames(const ChainGeometry& chain, const JointVector& q) {
    ChainFrames out;
    RigidTransform t = chain.base;
    const Vector3 axis_pitch(0, 1, 0);
    const Vector3 axis_roll(1, 0, 0);

    auto take_joint = [&](int i, const Vector3& local_axis) {
        out.joint_origin[i] = t.translation;
        out.joint_axis[i] = t.rotation * local_axis;
        RigidTransform rot;
        rot.rotation = local_axis.x() != 0.0 ? rot_x(q[i]) : rot_y(q[i]);
        t = t * rot;
    };

    take_joint(0, axis_pitch);
    take_joint(1, axis_roll);
    t = t * translate(Vector3(chain.upper_length, 0, 0));
    take_joint(2, axis_pitch);
    take_joint(3, axis_roll);
    t = t * translate(Vector3(chain.lower_length, 0, 0));
    take_joint(4, axis_pitch);
    take_joint(5, axis_roll);
    out.gripper = t * wrist_to_gripper();
    return out;
}

}  // namespace

RigidTransform forward_kinematics(const ChainGeometry& chain, const JointVector& q) {
    return chain_frames(chain, q).gripper;
}

Matrix6 jacobian(const ChainGeometry& chain, const JointVector& q) {
    const ChainFrames frames = chain_frames(chain, q);
    Matrix6 j;
    for (int i = 0; i < 6; ++i) {
        const Vector3 axis = frames.joint_axis[i];
        const Vector3 lever = frames.gripper.translation - frames.joint_origin[i];
        j.block<3, 1>(0, i) = axis.cross(lever);
        j.block<3, 1>(3, i) = axis;
    }
    return j;
}

Vector3 rotation_log(const Rotation3& r) {
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    if (angle < 1e-12) return Vector3::Zero();
    Vector3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    const double s = 2.0 * std::sin(angle);
    if (std::abs(s) < 1e-9) {
        // Near pi: recover the axis from the symmetric part.
        Vector3 diag = (r.diagonal().array() + 1.0).cwiseMax(0.0).sqrt();
        int k = 0;
        diag.maxCoeff(&k);
        Vector3 a = Vector3::Zero();
        a[k] = diag[k];
        for (int i = 0; i < 3; ++i) {
            if (i != k) a[i] = (r(i, k) + r(k, i)) / (2.0 * a[k] + 1e-18);
        }
        a.normalize();
        return angle * a;
    }
    return (angle / s) * axis;
}

IkResult inverse_kinematics(const ChainGeometry& chain, const RigidTransform& target,
                            const JointVector& seed, const IkOptions& options) {
    IkResult result;
    result.q = seed;

    const double distance = (target.translation - chain.base.translation).norm();
    if (distance > chain.reach() + 0.25) {
        result.position_error = distance - chain.reach();
        return result;  // outside the workspace, do not bother iterating
    }

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const RigidTransform current = forward_kinematics(chain, result.q);
        const Vector3 e_pos = target.translation - current.translation;
        const Vector3 e_rot = rotation_log(target.rotation * current.rotation.transpose());
        result.position_error = e_pos.norm();
        result.rotation_error = e_rot.norm();
        result.iterations = iter;
        if (result.position_error < options.position_tolerance &&
            result.rotation_error < options.rotation_tolerance) {
            result.converged = true;
            return result;
        }

        const Matrix6 j = jacobian(chain, result.q);
        Eigen::JacobiSVD<Matrix6> svd(j, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const double sigma_max = svd.singularValues()(0);
        const double sigma_min = svd.singularValues()(5);

        Eigen::Matrix<double, 6, 1> error;
        error << e_pos, e_rot;

        // Scale damping with the remaining error so the final iterations
        // sharpen into the solution instead of creeping.
        double damping = options.damping * std::clamp(error.norm() / 0.02, 0.02, 1.0);
        if (sigma_min <= 0.0 || sigma_max / std::max(sigma_min, 1e-300) > 1e6) {
            damping = options.damping * 10.0;
        }
        const Matrix6 jjt = j * j.transpose() + damping * damping * Matrix6::Identity();
        JointVector dq = j.transpose() * jjt.ldlt().solve(error);
        const double biggest = dq.cwiseAbs().maxCoeff();
        if (biggest > options.max_step) dq *= options.max_step / biggest;

        // Backtrack when the full step would increase the error; large
        // steps outrun the linearization and limit-cycle otherwise.
        const double error_norm = error.norm();
        double scale = 1.0;
        JointVector candidate = result.q;
        for (int attempt = 0; attempt < 6; ++attempt) {
            candidate = result.q + scale * dq;
            for (int i = 0; i < 6; ++i) {
                candidate[i] = std::clamp(candidate[i], chain.lower_limits[i], chain.upper_limits[i]);
            }
            const RigidTransform pose = forward_kinematics(chain, candidate);
            Eigen::Matrix<double, 6, 1> next_error;
            next_error << target.translation - pose.translation,
                rotation_log(target.rotation * pose.rotation.transpose());
            if (next_error.norm() < error_norm) break;
            scale *= 0.5;
        }
        result.q = candidate;
    }

    const RigidTransform current = forward_kinematics(chain, result.q);
    result.position_error = (target.translation - current.translation).norm();
    result.rotation_error = rotation_log(target.rotation * current.rotation.transpose()).norm();
    result.converged = result.position_error < options.position_tolerance &&
                       result.rotation_error < options.rotation_tolerance;
    return result;
}

WristRollSplit wrist_roll_decomposition(const Rotation3& rotation_in_gripper) {
    WristRollSplit split;
    // ZYX factorization; the leading z-rotation is the wrist-roll share.
    split.alpha = std::atan2(rotation_in_gripper(1, 0), rotation_in_gripper(0, 0));
    split.remainder = rot_z(-split.alpha) * rotation_in_gripper;
    return split;
}

}  // namespace reflex
