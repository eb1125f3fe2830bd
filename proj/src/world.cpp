#include "reflex/world.hpp"

#include <algorithm>
#include <cmath>

namespace reflex {

namespace {

constexpr double kTouchTol = 1e-7;

FingerContact finger_contact(const GripperGeometry& geom, const RigidTransform& tip,
                             const WorldObject& object) {
    FingerContact c;
    const Vector3 offset = object.pose.translation - tip.translation;
    const double dist = offset.norm();
    c.gap = dist - (object.radius + geom.r_sensor);
    if (dist <= 1e-12 || c.gap > kTouchTol) return c;

    const Vector3 u = offset / dist;  // dome center toward object center
    c.touching = true;
    c.point = object.pose.translation - object.radius * u;
    c.normal = -u;
    const Vector3 dir_local = tip.rotation.transpose() * u;
    c.dome_valid = dome_angles_from_direction(dir_local, c.theta, c.phi);
    return c;
}

}  // namespace

double MassSchedule::at(double t) const {
    if (!active || duration <= 0.0) return initial;
    const double s = std::clamp((t - start_time) / duration, 0.0, 1.0);
    return initial + s * (final_mass - initial);
}

double bottle_fill_schedule(double t) {
    MassSchedule ramp;
    ramp.active = true;
    return ramp.at(t);
}

ContactState resolve_contacts(const GripperGeometry& geom, const RigidTransform& gripper_pose,
                              double q_g, const WorldObject& object) {
    const auto [fixed_local, actuated_local] = fingertip_frames(geom, q_g);
    ContactState state;
    state.fixed = finger_contact(geom, gripper_pose * fixed_local, object);
    state.actuated = finger_contact(geom, gripper_pose * actuated_local, object);
    return state;
}

std::optional<double> contact_clamp_angle(const GripperGeometry& geom,
                                          const RigidTransform& gripper_pose,
                                          const WorldObject& object) {
    const auto [fixed_local, actuated_local] = fingertip_frames(geom, 0.0);
    (void)actuated_local;
    const Vector3 p_fixed = gripper_pose.apply(fixed_local.translation);
    const Vector3 closing_axis = gripper_pose.rotation.col(1);

    // The actuated dome center travels p_fixed + d * closing_axis; touch
    // happens where its distance to the object center equals the contact
    // radius.
    const Vector3 w = object.pose.translation - p_fixed;
    const double b = w.dot(closing_axis);
    const double contact_radius = object.radius + geom.r_sensor;
    const double disc = b * b - w.squaredNorm() + contact_radius * contact_radius;
    if (disc < 0.0) return std::nullopt;
    const double d_touch = b + std::sqrt(disc);
    if (d_touch < geom.d_min - 1e-9 || d_touch > geom.d_max + 1e-9) return std::nullopt;
    return exact_inverse_separation(geom, std::clamp(d_touch, geom.d_min, geom.d_max));
}

void World::reset_support() {
    support_ = Support::Supported;
    sticking_ = false;
    prev_slip_ = false;
}

WorldStepResult World::step(double t, double dt, const GripperGeometry& geom,
                            const GripperSnapshot& grip) {
    WorldStepResult result;
    WorldObject& obj = target();

    if (obj.schedule.active) obj.mass = obj.schedule.at(t);

    if (!obj.anchored) {
        if (sticking_ && support_ == Support::Held) {
            obj.pose = grip.pose * grasp_offset_;
        }
        if (support_ == Support::Falling) {
            obj.pose.translation.z() -= fall_speed * dt;
            if (obj.pose.translation.z() <= obj.support_z) {
                obj.pose.translation.z() = obj.support_z;
                support_ = Support::Supported;
            }
        }
    }

    ContactState contacts = resolve_contacts(geom, grip.pose, grip.q_g, obj);
    double push_force_fixed = 0.0;
    double push_force_actuated = 0.0;

    if (!obj.anchored && contacts.actuated.touching && !contacts.fixed.touching &&
        grip.closing_force > 0.0) {
        // One-sided squeeze: nothing holds the object against the closing
        // finger, so it yields along the line of centers until the fixed
        // finger (or nothing) stops it.
        const double speed = std::min(push_admittance * grip.closing_force, 0.2);
        obj.pose.translation += speed * dt * (-contacts.actuated.normal);
    }

    if (!obj.anchored) {
        // Resolve penetration by translating the object along the line of
        // centers, finger by finger. A closing finger herds the object in
        // front of it; transverse offsets grow on their own, which is how
        // off-center pinches squirt away.
        const auto [fixed_local, actuated_local] = fingertip_frames(geom, grip.q_g);
        const RigidTransform tips[2] = {grip.pose * fixed_local, grip.pose * actuated_local};
        for (int i = 0; i < 2; ++i) {
            const Vector3 offset = obj.pose.translation - tips[i].translation;
            const double dist = offset.norm();
            if (dist <= 1e-12) continue;
            const double pen = (obj.radius + geom.r_sensor) - dist;
            if (pen > 0.0) {
                obj.pose.translation += pen * (offset / dist);
                (i == 0 ? push_force_fixed : push_force_actuated) = press_stiffness * pen;
            }
        }
        contacts = resolve_contacts(geom, grip.pose, grip.q_g, obj);
    } else {
        for (const FingerContact* c : {&contacts.fixed, &contacts.actuated}) {
            if (c->touching && c->gap < 0.0) {
                result.reaction_on_gripper += press_stiffness * (-c->gap) * c->normal;
            }
        }
    }

    const bool both = contacts.both_touching();
    if (both) {
        contacts.fixed.normal_force = grip.closing_force;
        contacts.actuated.normal_force = grip.closing_force;
        if (obj.anchored) {
            if (contacts.fixed.gap < 0.0)
                contacts.fixed.normal_force += press_stiffness * (-contacts.fixed.gap);
            if (contacts.actuated.gap < 0.0)
                contacts.actuated.normal_force += press_stiffness * (-contacts.actuated.gap);
        }
    } else {
        if (contacts.actuated.touching) contacts.actuated.normal_force = grip.closing_force;
        if (contacts.fixed.touching) {
            contacts.fixed.normal_force =
                obj.anchored ? press_stiffness * std::max(0.0, -contacts.fixed.gap)
                             : push_force_fixed;
        }
        if (obj.anchored && contacts.actuated.touching && !contacts.fixed.touching) {
            result.anchored_single_contact = true;
            result.reaction_on_gripper +=
                contacts.actuated.normal_force * contacts.actuated.normal;
        }
    }

    bool slip_now = false;
    if (both && !obj.anchored) {
        // Static balance of the pinch: normals plus half-and-half friction
        // shares must carry the load. The load is the squeeze imbalance,
        // plus weight once the object hangs in the grasp.
        const Vector3 u_f = -contacts.fixed.normal;      // dome toward center
        const Vector3 u_a = -contacts.actuated.normal;
        Vector3 load = -contacts.fixed.normal_force * u_f - contacts.actuated.normal_force * u_a;
        if (support_ == Support::Held) load += obj.mass * kGravity * Vector3(0, 0, 1);

        auto tangential_demand = [&](const Vector3& u) {
            return (load / 2.0 - (load.dot(u) / 2.0) * u).eval();
        };
        Vector3 demand_f = tangential_demand(u_f);
        Vector3 demand_a = tangential_demand(u_a);
        const double cap_f = obj.mu * contacts.fixed.normal_force;
        const double cap_a = obj.mu * contacts.actuated.normal_force;
        contacts.fixed.slip = demand_f.norm() > cap_f + 1e-12;
        contacts.actuated.slip = demand_a.norm() > cap_a + 1e-12;
        slip_now = contacts.fixed.slip || contacts.actuated.slip;

        Vector3 realized_f = demand_f;
        Vector3 realized_a = demand_a;
        if (contacts.fixed.slip && demand_f.norm() > 1e-12)
            realized_f *= cap_f / demand_f.norm();
        if (contacts.actuated.slip && demand_a.norm() > 1e-12)
            realized_a *= cap_a / demand_a.norm();
        contacts.fixed.tangential = -realized_f;
        contacts.actuated.tangential = -realized_a;

        if (slip_now) {
            // The unmet friction demand is what would have held the object;
            // it drifts the opposite way.
            const Vector3 unsupported = (demand_f - realized_f) + (demand_a - realized_a);
            if (unsupported.norm() > 1e-12) {
                obj.pose.translation -= slip_speed * dt * unsupported.normalized();
            }
        }
    }

    if (slip_now && !prev_slip_) {
        ++slip_events_;
        ++result.new_slip_events;
    }
    prev_slip_ = slip_now;

    if (!obj.anchored) {
        switch (support_) {
            case Support::Supported:
                if (both && grip.closing_force >= handover_force) support_ = Support::Held;
                break;
            case Support::Held:
                if (!both) support_ = Support::Falling;
                break;
            case Support::Falling:
                if (both && grip.closing_force >= handover_force) support_ = Support::Held;
                break;
        }
        sticking_ = both;
        if (sticking_) grasp_offset_ = inverse(grip.pose) * obj.pose;
        result.carried = sticking_ && support_ == Support::Held;
    }

    result.contacts = contacts;
    return result;
}

}  // namespace reflex
