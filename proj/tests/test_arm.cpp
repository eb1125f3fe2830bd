#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "reflex/arm.hpp"
#include "test_support.hpp"

using namespace reflex;

namespace {

JointVector random_reachable_config(std::mt19937_64& rng, const ChainGeometry& chain) {
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    (void)chain;
    JointVector q;
    q[0] = 1.8 * uniform(rng);
    q[1] = 1.2 * uniform(rng);
    q[2] = 2.0 * uniform(rng);
    q[3] = 1.8 * uniform(rng);
    q[4] = 1.8 * uniform(rng);
    q[5] = 1.8 * uniform(rng);
    // Keep the elbow and wrist bent away from the stretched-out and
    // gimbal singular surfaces.
    if (std::abs(q[2]) < 0.3) q[2] = q[2] < 0 ? -0.3 : 0.3;
    if (std::abs(q[4]) < 0.3) q[4] = q[4] < 0 ? -0.3 : 0.3;
    return q;
}

}  // namespace

TEST_CASE("zero configuration reaches full extension") {
    const ChainGeometry chain;
    const RigidTransform pose = forward_kinematics(chain, JointVector::Zero());
    CHECK(pose.translation.norm() == doctest::Approx(0.96).epsilon(1e-12));
    CHECK(pose.translation.x() == doctest::Approx(0.96));
    // Approach axis points along world x at zero.
    CHECK((pose.rotation.col(2) - Vector3(1, 0, 0)).norm() < 1e-12);
    CHECK(is_valid_rotation(pose.rotation));
}

TEST_CASE("first joint rotates the whole arm about its axis") {
    const ChainGeometry chain;
    std::mt19937_64 rng(31);
    const JointVector q = random_reachable_config(rng, chain);
    JointVector q_rot = q;
    q_rot[0] += std::numbers::pi / 2;
    const Vector3 p = forward_kinematics(chain, q).translation;
    const Vector3 p_rot = forward_kinematics(chain, q_rot).translation;
    CHECK((rot_y(std::numbers::pi / 2) * p - p_rot).norm() < 1e-9);
}

TEST_CASE("jacobian matches finite differences") {
    const ChainGeometry chain;
    std::mt19937_64 rng(37);
    const double h = 1e-7;
    for (int trial = 0; trial < 20; ++trial) {
        const JointVector q = random_reachable_config(rng, chain);
        const Matrix6 j = jacobian(chain, q);
        const RigidTransform base_pose = forward_kinematics(chain, q);
        for (int i = 0; i < 6; ++i) {
            JointVector qp = q;
            qp[i] += h;
            const RigidTransform pose = forward_kinematics(chain, qp);
            const Vector3 dp = (pose.translation - base_pose.translation) / h;
            const Vector3 dw = rotation_log(pose.rotation * base_pose.rotation.transpose()) / h;
            CHECK((j.block<3, 1>(0, i) - dp).norm() < 1e-5);
            CHECK((j.block<3, 1>(3, i) - dw).norm() < 1e-5);
        }
    }
}

TEST_CASE("ik returns the seed when already at the target") {
    const ChainGeometry chain;
    std::mt19937_64 rng(41);
    const JointVector q = random_reachable_config(rng, chain);
    const IkResult result = inverse_kinematics(chain, forward_kinematics(chain, q), q);
    REQUIRE(result.converged);
    CHECK((result.q - q).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ik converges on perturbed seeds over random targets") {
    const ChainGeometry chain;
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    int converged = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        const JointVector q_true = random_reachable_config(rng, chain);
        const RigidTransform target = forward_kinematics(chain, q_true);
        JointVector seed = q_true;
        for (int k = 0; k < 6; ++k) seed[k] += jitter(rng);
        const IkResult result = inverse_kinematics(chain, target, seed);
        if (!result.converged) continue;
        ++converged;
        const RigidTransform reached = forward_kinematics(chain, result.q);
        CHECK((reached.translation - target.translation).norm() < 1e-6);
        CHECK(rotation_log(reached.rotation * target.rotation.transpose()).norm() < 1e-6);
    }
    CHECK(converged == trials);
}

TEST_CASE("ik stays close to the seed for a small displacement") {
    const ChainGeometry chain;
    std::mt19937_64 rng(47);
    const JointVector seed = random_reachable_config(rng, chain);
    RigidTransform target = forward_kinematics(chain, seed);
    target.translation += target.rotation.col(2) * 0.01;  // 1 cm along the approach axis
    const IkResult result = inverse_kinematics(chain, target, seed);
    REQUIRE(result.converged);
    CHECK((result.q - seed).cwiseAbs().maxCoeff() < 0.3);
}

TEST_CASE("ik solution continuity under millimeter perturbations") {
    const ChainGeometry chain;
    std::mt19937_64 rng(53);
    for (int i = 0; i < 50; ++i) {
        const JointVector seed = random_reachable_config(rng, chain);
        const RigidTransform pose = forward_kinematics(chain, seed);
        RigidTransform nudged = pose;
        nudged.translation += reflex::testing::random_unit(rng) * 0.001;
        const IkResult result = inverse_kinematics(chain, nudged, seed);
        REQUIRE(result.converged);
        CHECK((result.q - seed).cwiseAbs().maxCoeff() < 0.05);
    }
}

TEST_CASE("targets beyond the reach fail") {
    const ChainGeometry chain;
    RigidTransform target;
    target.translation = Vector3(2.0, 0, 0);
    const IkResult result = inverse_kinematics(chain, target, JointVector::Zero());
    CHECK_FALSE(result.converged);
}

TEST_CASE("wrist roll decomposition") {
    const WristRollSplit identity = wrist_roll_decomposition(Rotation3::Identity());
    CHECK(identity.alpha == doctest::Approx(0.0));
    CHECK((identity.remainder - Rotation3::Identity()).norm() < 1e-12);

    const WristRollSplit pure = wrist_roll_decomposition(rot_z(0.25));
    CHECK(pure.alpha == doctest::Approx(0.25).epsilon(1e-12));
    CHECK((pure.remainder - Rotation3::Identity()).cwiseAbs().maxCoeff() < 1e-12);

    std::mt19937_64 rng(59);
    for (int i = 0; i < 500; ++i) {
        const Rotation3 r = reflex::testing::random_rotation(rng);
        const WristRollSplit split = wrist_roll_decomposition(r);
        const Rotation3 recomposed = rot_z(split.alpha) * split.remainder;
        CHECK((recomposed - r).cwiseAbs().maxCoeff() < 1e-9);
    }
}
