#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "reflex/reflex.hpp"
#include "reflex/world.hpp"
#include "test_support.hpp"

using namespace reflex;

namespace {

ContactReading reading(double theta, double phi, double f_n, double f_x = 0.0, double f_y = 0.0) {
    ContactReading r;
    r.theta = theta;
    r.phi = phi;
    r.f_n = f_n;
    r.f_x = f_x;
    r.f_y = f_y;
    r.in_contact = f_n >= 0.5;
    return r;
}

}  // namespace

TEST_CASE("grasp detection is hierarchical") {
    const ReflexParams params;

    // Gripper gap above the threshold gates everything else.
    CHECK_FALSE(grasp_detected(0.3, 0.1, reading(0, 0, 9.0), reading(0, 0, 9.0), params));

    CHECK(grasp_detected(0.11, 0.1, reading(0, 0, 0.5), reading(0, 0, 0.4), params));
    CHECK_FALSE(grasp_detected(0.11, 0.1, reading(0, 0, 0.5), reading(0, 0, 0.2), params));

    std::mt19937_64 rng(67);
    std::uniform_real_distribution<double> gap(0.051, 1.0), force(0.0, 25.0);
    for (int i = 0; i < 500; ++i) {
        CHECK_FALSE(grasp_detected(0.1 + gap(rng), 0.1, reading(0, 0, force(rng)),
                                   reading(0, 0, force(rng)), params));
    }
}

TEST_CASE("antipodal check examples") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ReflexParams params;
    const double q = 0.1;

    const RigidTransform perfect = contact_frame(0.0, 0.0, geom.r_sensor);
    const AntipodalResult ideal = antipodal_check(perfect, perfect, q, geom, params);
    CHECK(ideal.psi_fixed == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(ideal.psi_actuated == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(ideal.pass);

    const RigidTransform tilted = contact_frame(0.35, 0.0, geom.r_sensor);
    const AntipodalResult off = antipodal_check(tilted, perfect, q, geom, params);
    CHECK(off.psi_fixed == doctest::Approx(0.35).epsilon(1e-9));
    CHECK_FALSE(off.pass);

    const AntipodalResult edge = antipodal_check(contact_frame(0.29, 0.0, geom.r_sensor),
                                                 contact_frame(0.0, -0.29, geom.r_sensor), q,
                                                 geom, params);
    CHECK(edge.pass);
}

TEST_CASE("antipodal psi matches the world-truth normal angle") {
    // Place a sphere with a known transverse offset, read the contact
    // angles from the geometric resolver, and compare the psi computed
    // through the measured frames with the direct angle between the
    // contact normal and the closing axis.
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ReflexParams params;

    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> offset(-0.008, 0.008);
    const double radius = 0.03;
    const double reach = radius + geom.r_sensor;

    for (int i = 0; i < 200; ++i) {
        const double ox = offset(rng);
        const double oz = offset(rng);
        const double transverse = std::hypot(ox, oz);
        if (transverse > 0.8 * reach) continue;
        const double d = 2.0 * std::sqrt(reach * reach - transverse * transverse);
        if (d < geom.d_min || d > geom.d_max) continue;
        const double q = exact_inverse_separation(geom, d);

        WorldObject object;
        object.radius = radius;
        const auto [fixed_tip, actuated_tip] = fingertip_frames(geom, q);
        object.pose.translation = 0.5 * (fixed_tip.translation + actuated_tip.translation) +
                                  Vector3(ox, 0, oz);
        const ContactState contacts =
            resolve_contacts(geom, RigidTransform::Identity(), q, object);
        REQUIRE(contacts.both_touching());

        const AntipodalResult check = antipodal_check(
            contact_frame(contacts.fixed.theta, contacts.fixed.phi, geom.r_sensor),
            contact_frame(contacts.actuated.theta, contacts.actuated.phi, geom.r_sensor), q,
            geom, params);

        const Vector3 axis =
            (actuated_tip.translation - fixed_tip.translation).normalized();
        const double truth_fixed = std::acos(std::clamp(-contacts.fixed.normal.dot(axis), -1.0, 1.0));
        const double truth_actuated =
            std::acos(std::clamp(contacts.actuated.normal.dot(axis), -1.0, 1.0));
        CHECK(check.psi_fixed == doctest::Approx(truth_fixed).epsilon(1e-6));
        CHECK(check.psi_actuated == doctest::Approx(truth_actuated).epsilon(1e-6));
    }
}

TEST_CASE("anti-slip force law") {
    const ReflexParams params;  // mu_hat 0.5, gamma_c 1.6
    CHECK(params.gamma_mu() == doctest::Approx(0.3125));

    CHECK(antislip_desired_force(reading(0, 0, 5.0, 0.0, 0.0), reading(0, 0, 5.0, 0.0, 0.0),
                                 params) == doctest::Approx(0.0));
    CHECK(antislip_desired_force(reading(0, 0, 5.0, 1.0, 0.0), reading(0, 0, 5.0, 0.0, 0.0),
                                 params) == doctest::Approx(3.2));
    CHECK(antislip_desired_force(reading(0, 0, 5.0, 1.0, 0.0), reading(0, 0, 5.0, 0.9, 1.2),
                                 params) == doctest::Approx(4.8));
}

TEST_CASE("anti-slip torque never weaker than the user command") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ReflexParams params;

    // Shear calls for 3.2 N but the user already squeezes at 5 N.
    const double tau_user = torque_for_force(geom, 5.0);
    const double tau = antislip_torque(reading(0, 0, 5, 1.0, 0), reading(0, 0, 5, 0, 0), geom,
                                       params, tau_user);
    CHECK(tau == doctest::Approx(tau_user));

    // Zero shear: reflex adds nothing on top of the user.
    const double tau_rest = antislip_torque(reading(0, 0, 5, 0, 0), reading(0, 0, 5, 0, 0), geom,
                                            params, -0.2);
    CHECK(tau_rest == doctest::Approx(-0.2));

    // Strong shear overrides a light squeeze.
    const double tau_reflex = antislip_torque(reading(0, 0, 5, 2.0, 0), reading(0, 0, 5, 0, 0),
                                              geom, params, -0.1);
    CHECK(tau_reflex == doctest::Approx(torque_for_force(geom, 6.4)));
}

namespace {

RigidTransform contact_in_g(const Vector3& point, const Vector3& normal_toward_center) {
    RigidTransform t;
    const Vector3 z = normal_toward_center.normalized();
    Vector3 x = std::abs(z.x()) < 0.9 ? Vector3(1, 0, 0) : Vector3(0, 1, 0);
    x = (x - x.dot(z) * z).normalized();
    t.rotation.col(0) = x;
    t.rotation.col(1) = z.cross(x);
    t.rotation.col(2) = z;
    t.translation = point;
    return t;
}

}  // namespace

TEST_CASE("object estimation, exact antipodal case") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const RigidTransform c_f = contact_in_g(Vector3(0, -0.03, 0), Vector3(0, 1, 0));
    const RigidTransform c_a = contact_in_g(Vector3(0, 0.03, 0), Vector3(0, -1, 0));
    const ObjectEstimate est = estimate_object(c_f, c_a, geom, 0.0);
    CHECK_FALSE(est.fallback);
    CHECK(est.center.norm() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(est.radius == doctest::Approx(0.03).epsilon(1e-12));
    CHECK(est.residual == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("object estimation recovers random spheres exactly") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> radius_dist(0.01, 0.06);

    for (int i = 0; i < 1000; ++i) {
        const Vector3 center = reflex::testing::random_vector(rng, 0.15);
        const double radius = radius_dist(rng);
        Vector3 n_f = reflex::testing::random_unit(rng);
        Vector3 n_a = reflex::testing::random_unit(rng);
        while (std::abs(n_f.dot(n_a)) > 0.995) n_a = reflex::testing::random_unit(rng);

        // Surface points whose inward normals point back at the center.
        const RigidTransform c_f = contact_in_g(center - radius * n_f, n_f);
        const RigidTransform c_a = contact_in_g(center - radius * n_a, n_a);
        const ObjectEstimate est = estimate_object(c_f, c_a, geom, 0.0);
        REQUIRE_FALSE(est.fallback);
        CHECK((est.center - center).norm() < 1e-9);
        CHECK(std::abs(est.radius - radius) < 1e-9);
        CHECK(est.residual < 1e-9);
    }
}

TEST_CASE("object estimation under angle noise stays within twenty percent") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    std::mt19937_64 rng(79);
    std::normal_distribution<double> noise(0.0, 0.02);
    const double radius = 0.03;
    int ok = 0, total = 0;
    for (int i = 0; i < 300; ++i) {
        const Vector3 center = reflex::testing::random_vector(rng, 0.05);
        Vector3 n_f = reflex::testing::random_unit(rng);
        Vector3 n_a = -n_f;
        // Perturb both normals slightly, as dome angle noise would.
        auto perturb = [&](const Vector3& n) {
            const Vector3 axis = reflex::testing::random_unit(rng);
            return Eigen::AngleAxisd(noise(rng), axis).toRotationMatrix() * n;
        };
        n_f = perturb(n_f);
        n_a = perturb(n_a);
        const RigidTransform c_f = contact_in_g(center - radius * n_f, n_f);
        const RigidTransform c_a = contact_in_g(center - radius * n_a, n_a);
        const ObjectEstimate est = estimate_object(c_f, c_a, geom, 0.0);
        ++total;
        if (!est.fallback && std::abs(est.radius - radius) / radius < 0.2) ++ok;
    }
    CHECK(ok >= total * 9 / 10);
}

TEST_CASE("object estimation falls back on parallel normals") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const double q = 0.1;
    const Vector3 n(0, 1, 0);
    const RigidTransform c_f = contact_in_g(Vector3(0, -0.03, 0), n);
    const RigidTransform c_a = contact_in_g(Vector3(0.01, -0.03, 0.002), n);
    const ObjectEstimate est = estimate_object(c_f, c_a, geom, q);
    CHECK(est.fallback);
    CHECK(est.radius == doctest::Approx(separation(geom, q) / 2.0 - geom.r_sensor));
    CHECK((est.center - 0.5 * (c_f.translation + c_a.translation)).norm() < 1e-12);
}

TEST_CASE("correction angles, frozen arithmetic") {
    const CorrectionAngles corr =
        correction_angles(reading(0.2, 0.3, 1.0), reading(0.1, 0.1, 1.0));
    CHECK(corr.theta == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(corr.phi == doctest::Approx(0.1).epsilon(1e-12));
}

namespace {

struct PlanFixture {
    GripperGeometry geom = GripperGeometry::with_defaults();
    ChainGeometry chain;
    ReflexParams params;
    JointVector arm_q;
    RigidTransform gripper_pose;

    PlanFixture() {
        arm_q << 0.0, 0.0, 0.7, 0.0, -0.7, 0.0;
        gripper_pose = forward_kinematics(chain, arm_q);
    }
};

}  // namespace

TEST_CASE("re-grasp plan opens the gripper for the estimated radius") {
    PlanFixture fx;
    ObjectEstimate est;
    est.center = Vector3(0.0, 0.01, fx.geom.l_tip);
    est.radius = 0.02;
    const RegraspPlan plan =
        plan_regrasp(est, fx.gripper_pose, 0.05, reading(0.1, 0, 1.0), reading(0.1, 0, 1.0),
                     fx.chain, fx.geom, fx.params, fx.arm_q, 0.0);
    REQUIRE(plan.ok);
    // Clearance diameter: 2 * (0.02 + 0.01 + 0.01) = 0.08.
    CHECK(separation(fx.geom, plan.gripper_target) == doctest::Approx(0.08).epsilon(0.02));
}

TEST_CASE("re-grasp plan with already antipodal contacts only re-centers") {
    PlanFixture fx;
    // An estimate sitting slightly off the fingertip midpoint.
    ObjectEstimate est;
    est.center = Vector3(0.0, 0.004, fx.geom.l_tip);
    est.radius = 0.025;
    const RegraspPlan plan =
        plan_regrasp(est, fx.gripper_pose, 0.08, reading(0.0, 0.0, 1.0), reading(0.0, 0.0, 1.0),
                     fx.chain, fx.geom, fx.params, fx.arm_q, 0.0);
    REQUIRE(plan.ok);
    CHECK(std::abs(plan.alpha) < 1e-9);
    // The goal orientation is unchanged; only the translation moves.
    CHECK((plan.gripper_goal.rotation - fx.gripper_pose.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((plan.gripper_goal.translation - fx.gripper_pose.translation).norm() > 1e-4);
}

TEST_CASE("re-grasp trajectory has the configured duration and stays in limits") {
    PlanFixture fx;
    ObjectEstimate est;
    est.center = Vector3(0.002, 0.012, fx.geom.l_tip);
    est.radius = 0.025;
    const RegraspPlan plan =
        plan_regrasp(est, fx.gripper_pose, 0.08, reading(0.25, 0.1, 1.0), reading(0.2, -0.1, 1.0),
                     fx.chain, fx.geom, fx.params, fx.arm_q, 1.0);
    REQUIRE(plan.ok);
    CHECK(plan.trajectory.duration == doctest::Approx(fx.params.t_f));
    CHECK(plan.trajectory.start_time == doctest::Approx(1.0));
    CHECK(plan.trajectory.arm_at(1.0).isApprox(fx.arm_q, 1e-12));
    CHECK(plan.trajectory.arm_at(1.0 + fx.params.t_f).isApprox(plan.trajectory.arm_end, 1e-12));
    // Linear interpolation stays inside joint limits at every sample.
    for (int k = 0; k <= 75; ++k) {
        const JointVector q = plan.trajectory.arm_at(1.0 + k * 0.002);
        for (int i = 0; i < 6; ++i) {
            CHECK(q[i] >= fx.chain.lower_limits[i] - 1e-12);
            CHECK(q[i] <= fx.chain.upper_limits[i] + 1e-12);
        }
    }
    const double mid = plan.trajectory.gripper_at(1.0 + fx.params.t_f / 2);
    CHECK(mid == doctest::Approx(0.5 * (0.08 + plan.gripper_target)).epsilon(1e-9));
}

TEST_CASE("fsm never enters anti-slip with a polar angle above threshold") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ChainGeometry chain;
    const ReflexParams params;

    std::mt19937_64 rng(83);
    std::uniform_real_distribution<double> angle(-0.6, 0.6);
    std::uniform_real_distribution<double> force(0.0, 10.0);
    std::uniform_real_distribution<double> gap(-0.2, 0.2);

    JointVector arm_q;
    arm_q << 0.0, 0.0, 0.7, 0.0, -0.7, 0.0;
    const RigidTransform pose = forward_kinematics(chain, arm_q);

    int entries = 0;
    for (int i = 0; i < 3000; ++i) {
        ReflexState state;  // fresh teleop state
        FsmInputs inputs;
        inputs.t = 0.0;
        inputs.q_gf = 0.1;
        inputs.q_gl = 0.1 + gap(rng);
        inputs.reading_fixed = reading(angle(rng), angle(rng), force(rng));
        inputs.reading_actuated = reading(angle(rng), angle(rng), force(rng));
        inputs.arm_q = arm_q;
        inputs.gripper_pose = pose;
        const FsmResult result = fsm_tick(state, inputs, params, chain, geom);
        if (result.state.mode == ReflexMode::AntiSlip) {
            ++entries;
            const AntipodalResult check = antipodal_check(
                contact_frame(inputs.reading_fixed.theta, inputs.reading_fixed.phi, geom.r_sensor),
                contact_frame(inputs.reading_actuated.theta, inputs.reading_actuated.phi,
                              geom.r_sensor),
                inputs.q_gf, geom, params);
            CHECK(check.psi_fixed <= params.gamma_psi + 1e-12);
            CHECK(check.psi_actuated <= params.gamma_psi + 1e-12);
        }
    }
    CHECK(entries > 0);  // the property was actually exercised
}

TEST_CASE("fsm tick is a pure function of its inputs") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ChainGeometry chain;
    const ReflexParams params;

    JointVector arm_q;
    arm_q << 0.0, 0.0, 0.7, 0.0, -0.7, 0.0;

    ReflexState state;
    FsmInputs inputs;
    inputs.t = 2.0;
    inputs.q_gl = 0.08;
    inputs.q_gf = 0.1;
    inputs.reading_fixed = reading(0.4, 0.1, 2.0);
    inputs.reading_actuated = reading(0.35, -0.05, 2.0);
    inputs.arm_q = arm_q;
    inputs.gripper_pose = forward_kinematics(chain, arm_q);

    const FsmResult a = fsm_tick(state, inputs, params, chain, geom);
    const FsmResult b = fsm_tick(state, inputs, params, chain, geom);
    CHECK(a.state.mode == b.state.mode);
    CHECK(a.state.attempt_count == b.state.attempt_count);
    CHECK(a.events.size() == b.events.size());
    CHECK((a.state.trajectory.arm_end - b.state.trajectory.arm_end).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fsm walks detection, re-grasp and release transitions") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ChainGeometry chain;
    ReflexParams params;
    params.max_attempts = 3;

    JointVector arm_q;
    arm_q << 0.0, 0.0, 0.7, 0.0, -0.7, 0.0;
    const RigidTransform pose = forward_kinematics(chain, arm_q);

    ReflexState state;
    FsmInputs inputs;
    inputs.q_gl = 0.08;
    inputs.q_gf = 0.1;
    inputs.arm_q = arm_q;
    inputs.gripper_pose = pose;

    // Misaligned detection launches a re-grasp.
    inputs.t = 0.0;
    inputs.reading_fixed = reading(0.45, 0.0, 2.0);
    inputs.reading_actuated = reading(0.4, 0.0, 2.0);
    FsmResult r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.state.mode == ReflexMode::RegraspExecuting);
    CHECK(r.state.attempt_count == 1);
    CHECK(r.commands.override_joints);

    // Trajectory runs to completion, then hands back to teleop.
    state = r.state;
    inputs.t = state.trajectory.start_time + params.t_f;
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.state.mode == ReflexMode::Teleop);

    // A well-aligned grasp secures and emits the anti-slip torque.
    state = r.state;
    inputs.t += 0.1;
    inputs.reading_fixed = reading(0.05, 0.0, 3.0, 0.5, 0.0);
    inputs.reading_actuated = reading(0.02, 0.0, 3.0, 0.5, 0.0);
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.state.mode == ReflexMode::AntiSlip);
    CHECK(r.state.secure);
    CHECK(r.state.attempt_count == 2);

    state = r.state;
    inputs.t += 0.1;
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.commands.has_gripper_torque);
    CHECK(r.commands.gripper_torque < 0.0);

    // User opens the leader gripper: release, counters reset.
    state = r.state;
    inputs.t += 0.1;
    inputs.q_gl = 0.3;
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.state.mode == ReflexMode::Teleop);
    CHECK_FALSE(r.state.secure);
    CHECK(r.state.attempt_count == 0);
}

TEST_CASE("fsm locks out after exhausting attempts until release") {
    const GripperGeometry geom = GripperGeometry::with_defaults();
    const ChainGeometry chain;
    ReflexParams params;
    params.max_attempts = 2;

    JointVector arm_q;
    arm_q << 0.0, 0.0, 0.7, 0.0, -0.7, 0.0;

    ReflexState state;
    FsmInputs inputs;
    inputs.q_gl = 0.08;
    inputs.q_gf = 0.1;
    inputs.arm_q = arm_q;
    inputs.gripper_pose = forward_kinematics(chain, arm_q);
    inputs.reading_fixed = reading(0.5, 0.0, 2.0);
    inputs.reading_actuated = reading(0.5, 0.0, 2.0);

    inputs.t = 0.0;
    FsmResult r = fsm_tick(state, inputs, params, chain, geom);  // attempt 1, regrasp
    state = r.state;
    inputs.t = state.trajectory.start_time + params.t_f;
    r = fsm_tick(state, inputs, params, chain, geom);  // completes
    state = r.state;
    inputs.t += 0.1;
    r = fsm_tick(state, inputs, params, chain, geom);  // attempt 2: exhausted
    CHECK(r.state.lockout);
    CHECK(r.state.mode == ReflexMode::Teleop);

    // Still squeezing: no further attempts.
    state = r.state;
    inputs.t += 0.1;
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK(r.state.mode == ReflexMode::Teleop);
    CHECK(r.state.attempt_count == 2);

    // Release clears the lockout.
    state = r.state;
    inputs.q_gl = 0.5;
    r = fsm_tick(state, inputs, params, chain, geom);
    CHECK_FALSE(r.state.lockout);
    CHECK(r.state.attempt_count == 0);
}
