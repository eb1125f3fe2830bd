#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "reflex/world.hpp"

using namespace reflex;

namespace {

// Gripper pose with the fingers straddling an object of radius r placed
// exactly between the fingertips at the touching separation.
struct Rig {
    GripperGeometry geom = GripperGeometry::with_defaults();
    WorldObject object;
    RigidTransform gripper;  // identity: G frame = world frame
    double q_touch = 0.0;

    explicit Rig(double radius) {
        object.radius = radius;
        const double d = 2.0 * (radius + geom.r_sensor);
        q_touch = exact_inverse_separation(geom, d);
        const auto [fixed_tip, actuated_tip] = fingertip_frames(geom, q_touch);
        object.pose.translation =
            0.5 * (fixed_tip.translation + actuated_tip.translation);
    }
};

}  // namespace

TEST_CASE("centered object touches both dome poles") {
    Rig rig(0.03);
    const ContactState contacts =
        resolve_contacts(rig.geom, rig.gripper, rig.q_touch, rig.object);
    REQUIRE(contacts.both_touching());
    CHECK(contacts.fixed.theta == doctest::Approx(0.0));
    CHECK(contacts.fixed.phi == doctest::Approx(0.0));
    CHECK(contacts.actuated.theta == doctest::Approx(0.0));
    CHECK(contacts.actuated.phi == doctest::Approx(0.0));
    CHECK(contacts.fixed.normal.norm() == doctest::Approx(1.0));
    CHECK(contacts.actuated.normal.norm() == doctest::Approx(1.0));
    // Normals point from the object surface back toward the dome centers.
    CHECK(contacts.fixed.normal.dot(Vector3(0, -1, 0)) == doctest::Approx(1.0));
    CHECK(contacts.actuated.normal.dot(Vector3(0, 1, 0)) == doctest::Approx(1.0));
}

TEST_CASE("offset along the finger axis mirrors the contact angles") {
    Rig rig(0.03);
    const double offset = 0.005;
    // Close far enough that both domes still reach the shifted sphere and
    // center the object between the fingertips at that opening.
    const double reach = rig.object.radius + rig.geom.r_sensor;
    const double d = 2.0 * std::sqrt(reach * reach - offset * offset);
    const double q = exact_inverse_separation(rig.geom, d);
    const auto [fixed_tip, actuated_tip] = fingertip_frames(rig.geom, q);
    rig.object.pose.translation =
        0.5 * (fixed_tip.translation + actuated_tip.translation) + Vector3(0, 0, offset);
    const ContactState contacts =
        resolve_contacts(rig.geom, rig.gripper, q, rig.object);
    REQUIRE(contacts.fixed.touching);
    REQUIRE(contacts.actuated.touching);
    CHECK(contacts.fixed.theta == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(contacts.actuated.theta == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(contacts.fixed.phi > 0.0);
    CHECK(contacts.fixed.phi == doctest::Approx(-contacts.actuated.phi).epsilon(1e-9));
}

TEST_CASE("distant object produces no contact") {
    Rig rig(0.03);
    rig.object.pose.translation.x() += 1.0;
    const ContactState contacts =
        resolve_contacts(rig.geom, rig.gripper, rig.q_touch, rig.object);
    CHECK_FALSE(contacts.fixed.touching);
    CHECK_FALSE(contacts.actuated.touching);
}

TEST_CASE("contact clamp angle matches the touching separation") {
    Rig rig(0.03);
    const auto clamp_angle = contact_clamp_angle(rig.geom, rig.gripper, rig.object);
    REQUIRE(clamp_angle.has_value());
    CHECK(*clamp_angle == doctest::Approx(rig.q_touch).epsilon(1e-9));

    WorldObject far = rig.object;
    far.pose.translation.x() += 1.0;
    CHECK_FALSE(contact_clamp_angle(rig.geom, rig.gripper, far).has_value());
}

TEST_CASE("friction cone arithmetic decides slip") {
    // Two antipodal contacts carrying a 1 kg object: each finger must hold
    // half the weight, 4.905 N, against mu times its normal force.
    Rig rig(0.03);
    rig.object.mass = 1.0;
    rig.object.mu = 0.5;

    World world;
    world.objects.push_back(rig.object);

    GripperSnapshot grip;
    grip.pose = rig.gripper;
    grip.q_g = rig.q_touch;

    SUBCASE("8 N per finger slips") {
        grip.closing_force = 8.0;
        world.step(0.0, 0.002, rig.geom, grip);   // handover from support
        const WorldStepResult res = world.step(0.002, 0.002, rig.geom, grip);
        CHECK(res.contacts.fixed.slip);
        CHECK(res.contacts.actuated.slip);
        CHECK(world.total_slip_events() >= 1);
    }
    SUBCASE("12 N per finger holds") {
        grip.closing_force = 12.0;
        world.step(0.0, 0.002, rig.geom, grip);
        const WorldStepResult res = world.step(0.002, 0.002, rig.geom, grip);
        CHECK_FALSE(res.contacts.fixed.slip);
        CHECK_FALSE(res.contacts.actuated.slip);
        CHECK(world.total_slip_events() == 0);
        // Sensed shear carries half the weight on each finger.
        CHECK(res.contacts.fixed.tangential.norm() == doctest::Approx(4.905).epsilon(1e-6));
    }
}

TEST_CASE("slipping object drifts downward") {
    Rig rig(0.03);
    rig.object.mass = 1.0;
    rig.object.mu = 0.3;
    World world;
    world.objects.push_back(rig.object);
    GripperSnapshot grip{rig.gripper, rig.q_touch, 6.0};
    const double z0 = world.target().pose.translation.z();
    for (int i = 0; i < 100; ++i) world.step(i * 0.002, 0.002, rig.geom, grip);
    CHECK(world.target().pose.translation.z() < z0 - 1e-4);
    CHECK(world.total_slip_events() >= 1);
}

TEST_CASE("anchored objects never move") {
    Rig rig(0.025);
    rig.object.anchored = true;
    rig.object.mass = 1.0;
    World world;
    world.objects.push_back(rig.object);
    const Vector3 p0 = world.target().pose.translation;

    GripperSnapshot grip{rig.gripper, rig.q_touch, 15.0};
    for (int i = 0; i < 200; ++i) {
        GripperSnapshot moved = grip;
        moved.pose.translation = Vector3(0.0, 1e-3 * std::sin(0.1 * i), 0.0);
        world.step(i * 0.002, 0.002, rig.geom, moved);
    }
    // Bit-identical, not merely close.
    CHECK(world.target().pose.translation.x() == p0.x());
    CHECK(world.target().pose.translation.y() == p0.y());
    CHECK(world.target().pose.translation.z() == p0.z());
}

TEST_CASE("one sided squeeze on an anchored object shoves the gripper") {
    Rig rig(0.025);
    rig.object.anchored = true;
    // Pull the gripper back along the closing axis so only the actuated
    // finger can reach the object.
    RigidTransform pose = rig.gripper;
    pose.translation.y() -= 0.004;
    World world;
    world.objects.push_back(rig.object);
    const auto clamp_angle = contact_clamp_angle(rig.geom, pose, rig.object);
    REQUIRE(clamp_angle.has_value());
    GripperSnapshot grip{pose, *clamp_angle, 5.0};
    const WorldStepResult res = world.step(0.0, 0.002, rig.geom, grip);
    CHECK(res.anchored_single_contact);
    CHECK(res.reaction_on_gripper.y() > 1.0);  // pushes toward seating the fixed finger
}

TEST_CASE("free object is herded by a closing finger") {
    Rig rig(0.03);
    // Offset the object transversally; penetration projection must push it
    // along the line of centers as the finger closes.
    rig.object.pose.translation.x() += 0.004;
    World world;
    world.objects.push_back(rig.object);
    const Vector3 start = world.target().pose.translation;
    double q = rig.q_touch + 0.08;
    for (int i = 0; i < 120; ++i) {
        q = std::max(q - 0.002, rig.q_touch - 0.05);
        GripperSnapshot grip{rig.gripper, q, 2.0};
        world.step(i * 0.002, 0.002, rig.geom, grip);
    }
    const Vector3 moved = world.target().pose.translation - start;
    CHECK(moved.norm() > 1e-4);
    CHECK(moved.x() > 0.0);  // transverse offsets grow, they do not self-correct
}

TEST_CASE("bottle fill schedule") {
    CHECK(bottle_fill_schedule(0.0) == doctest::Approx(0.2));
    CHECK(bottle_fill_schedule(10.0) == doctest::Approx(0.7));
    CHECK(bottle_fill_schedule(20.0) == doctest::Approx(1.2));
    CHECK(bottle_fill_schedule(25.0) == doctest::Approx(1.2));

    MassSchedule ramp;
    ramp.active = true;
    ramp.start_time = 4.0;
    CHECK(ramp.at(0.0) == doctest::Approx(0.2));
    CHECK(ramp.at(14.0) == doctest::Approx(0.7));
}

TEST_CASE("held object rides with the gripper") {
    Rig rig(0.03);
    rig.object.mass = 0.3;
    rig.object.mu = 0.8;
    World world;
    world.objects.push_back(rig.object);
    GripperSnapshot grip{rig.gripper, rig.q_touch, 10.0};
    world.step(0.0, 0.002, rig.geom, grip);
    REQUIRE(world.held());

    GripperSnapshot lifted = grip;
    lifted.pose.translation.z() += 0.05;
    const Vector3 before = world.target().pose.translation;
    world.step(0.002, 0.002, rig.geom, lifted);
    const Vector3 after = world.target().pose.translation;
    CHECK(after.z() - before.z() == doctest::Approx(0.05).epsilon(1e-9));
}
