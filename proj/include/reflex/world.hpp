#pragma once

#include <optional>
#include <string>
#include <vector>

#include "reflex/gripper.hpp"
#include "reflex/se3.hpp"

namespace reflex {

inline constexpr double kGravity = 9.81;  // [m/s^2]

/// Linear mass ramp, clamped at both ends. Models a container being
/// filled at a constant rate.
struct MassSchedule {
    bool active = false;
    double initial = 0.2;     // [kg]
    double final_mass = 1.2;  // [kg]
    double start_time = 0.0;  // [s]
    double duration = 20.0;   // [s]

    double at(double t) const;
};

/// Default fill ramp: 0.2 kg to 1.2 kg over 20 s.
double bottle_fill_schedule(double t);

/// Circular-cross-section object (sphere for contact purposes).
struct WorldObject {
    std::string id = "object";
    RigidTransform pose;
    double radius = 0.030;  // [m]
    double mass = 0.2;      // [kg]
    MassSchedule schedule;
    double mu = 0.5;        // true friction coefficient
    bool anchored = false;
    double support_z = 0.0;  // rest height of the implicit support [m]
};

struct FingerContact {
    bool touching = false;
    Vector3 point = Vector3::Zero();       // on the object surface, world frame
    Vector3 normal = Vector3::Zero();      // unit, object surface toward dome center
    double normal_force = 0.0;             // [N]
    Vector3 tangential = Vector3::Zero();  // friction force on the finger, world frame [N]
    bool slip = false;
    double gap = 0.0;                      // signed surface distance [m]
    double theta = 0.0;                    // dome tilt angles of the contact
    double phi = 0.0;
    bool dome_valid = false;
};

struct ContactState {
    FingerContact fixed;
    FingerContact actuated;
    bool both_touching() const { return fixed.touching && actuated.touching; }
};

/// Pure geometric dome/sphere intersection for both fingers. Contact
/// exists when the dome center is within r_sensor of the object surface;
/// the contact point and normal lie on the line of centers.
ContactState resolve_contacts(const GripperGeometry& geom, const RigidTransform& gripper_pose,
                              double q_g, const WorldObject& object);

/// Joint angle at which the actuated dome first touches the object when
/// closing, given the current gripper pose. Empty when no closing angle
/// brings the finger into contact.
std::optional<double> contact_clamp_angle(const GripperGeometry& geom,
                                          const RigidTransform& gripper_pose,
                                          const WorldObject& object);

struct GripperSnapshot {
    RigidTransform pose;        // physical gripper base pose, world frame
    double q_g = 0.0;
    double closing_force = 0.0;  // commanded squeeze mapped through the finger lever [N]
};

struct WorldStepResult {
    ContactState contacts;
    int new_slip_events = 0;
    bool carried = false;                              // object moved with the gripper this step
    Vector3 reaction_on_gripper = Vector3::Zero();     // anchored-contact reaction [N]
    bool anchored_single_contact = false;
};

/// Quasi-static world update for the grasp target.
///
/// Free objects are projected out of penetration along the line of
/// centers (which is what pushes a badly aimed object around), ride with
/// the gripper while pinched, and drift at a fixed penalty speed along
/// the unsupported load direction when a contact leaves its friction
/// cone. Gravity loads the contacts only once the object has been
/// squeezed hard enough to hand over from its implicit support. Anchored
/// objects never move; penetration of the fixed dome into them produces
/// a reaction force the arm compliance responds to.
class World {
public:
    std::vector<WorldObject> objects;
    int target_index = 0;
    double slip_speed = 0.05;        // penalty drift [m/s]
    double fall_speed = 1.0;         // [m/s]
    double press_stiffness = 2000.0;  // single-sided penetration force [N/m]
    double push_admittance = 0.02;   // free-object yield rate under squeeze [m/s per N]
    double handover_force = 2.5;     // squeeze needed to take over from support [N]

    WorldObject& target() { return objects.at(static_cast<size_t>(target_index)); }
    const WorldObject& target() const { return objects.at(static_cast<size_t>(target_index)); }

    bool held() const { return support_ == Support::Held; }
    bool supported() const { return support_ == Support::Supported; }
    int total_slip_events() const { return slip_events_; }

    WorldStepResult step(double t, double dt, const GripperGeometry& geom,
                         const GripperSnapshot& grip);

    void reset_support();

private:
    enum class Support { Supported, Held, Falling };
    Support support_ = Support::Supported;
    bool sticking_ = false;
    RigidTransform grasp_offset_;
    bool prev_slip_ = false;
    int slip_events_ = 0;
};

}  // namespace reflex
