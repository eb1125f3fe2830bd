#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflex/arm.hpp"
#include "reflex/gripper.hpp"
#include "reflex/reflex.hpp"
#include "reflex/teleop.hpp"
#include "reflex/world.hpp"

namespace reflex {

inline constexpr int kSchemaVersion = 1;
inline constexpr double kControlDt = 0.002;  // 500 Hz control loop

/// Raised for malformed configs; the message carries the offending field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ObjectConfig {
    std::string id = "object";
    Vector3 center = Vector3(0.62, 0.0, -0.24);
    double radius = 0.030;
    double mass = 0.2;
    double mu = 0.5;
    bool anchored = false;
    MassSchedule fill;  // optional mass ramp
};

enum class OperatorKind { GraspHold, GraspRelease, PickPlace };

const char* to_string(OperatorKind kind);

struct TraceConfig {
    bool enabled = false;
    int decimate = 1;
    std::string path = "trace.csv";
};

struct ComplianceConfig {
    double stiffness = 150.0;  // task-space restoring spring [N/m]
    double damping = 15.0;     // [N s/m]
};

struct ScenarioConfig {
    int schema_version = kSchemaVersion;
    std::string name = "scenario";
    std::uint64_t seed = 1;
    double duration = 20.0;  // [s]
    bool reflexes_enabled = true;

    ReflexParams reflex;
    GripperGeometry gripper = GripperGeometry::with_defaults();
    NoiseParams noise;
    SensorSpec sensor;
    ChainGeometry chain;
    CouplingGains gains;
    JointDynamics dynamics;
    ComplianceConfig compliance;

    std::vector<ObjectConfig> objects{ObjectConfig{}};
    std::string target_object = "object";

    OperatorKind operator_kind = OperatorKind::PickPlace;
    OperatorScript script;
    double place_tolerance = 0.05;  // [m]

    double world_slip_speed = 0.05;
    double world_press_stiffness = 2000.0;
    double world_handover_force = 2.5;

    TraceConfig trace;
};

ScenarioConfig parse_config(const std::string& json_text, const std::string& origin = "config");
ScenarioConfig load_config(const std::string& path);
std::string config_to_json(const ScenarioConfig& cfg);

/// FNV-1a hash of the serialized config; embedded in every output header
/// so a result file identifies the exact run that produced it.
std::uint64_t config_hash(const ScenarioConfig& cfg);

struct AttemptRecord {
    double t_started = 0.0;       // squeeze begin
    double t_first_detect = -1.0;
    double initial_psi_fixed = 0.0;
    double initial_psi_actuated = 0.0;
    double initial_rho_fixed = 0.0;
    double initial_rho_actuated = 0.0;
    bool secured = false;
    double t_secured = -1.0;
    double final_psi_fixed = 0.0;
    double final_psi_actuated = 0.0;
    double final_rho_fixed = 0.0;
    double final_rho_actuated = 0.0;
    int detections = 0;  // grasp detections inside this attempt, re-grasps included
    bool success = false;
};

struct TrialMetrics {
    std::string scenario;
    std::uint64_t seed = 0;
    std::uint64_t hash = 0;
    bool reflexes = true;

    std::vector<AttemptRecord> attempts;
    int regrasp_trajectories = 0;
    int slip_events = 0;
    int slip_events_post_secure = 0;
    double first_slip_time = -1.0;
    bool trial_success = false;
    double trial_time = 0.0;       // first operator motion to release [s]
    double time_to_secure = -1.0;  // first detection to secure [s]
    double max_ratio_post_secure = 0.0;
    bool ratio_bound_ok = true;
    bool joint_limits_ok = true;
    std::vector<double> trajectory_durations;
    double duration_simulated = 0.0;

    int total_attempts() const { return static_cast<int>(attempts.size()); }
    int successful_attempts() const;
    /// Grasp detections of the securing attempt; matches the trial's
    /// "number of attempted grasps".
    int securing_detections() const;
};

void write_metrics_json(const TrialMetrics& metrics, const std::string& path);
TrialMetrics read_metrics_json(const std::string& path);

/// Runs one deterministic scenario. When out_dir is nonempty, writes the
/// per-tick CSV trace (if enabled) and a metrics summary there.
TrialMetrics run_scenario(const ScenarioConfig& cfg, const std::string& out_dir = "");

}  // namespace reflex
