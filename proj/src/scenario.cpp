#include "reflex/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace reflex {

namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const std::string& path, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

Vector3 vec3_field(const json& j, const std::string& path, const char* key, const Vector3& fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 3) {
        throw ConfigError(path + "." + key + ": expected an array of 3 numbers");
    }
    try {
        return Vector3(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

json vec3_json(const Vector3& v) { return json::array({v.x(), v.y(), v.z()}); }

OperatorKind operator_kind_from(const std::string& text, const std::string& path) {
    if (text == "grasp_hold") return OperatorKind::GraspHold;
    if (text == "grasp_release") return OperatorKind::GraspRelease;
    if (text == "pick_place") return OperatorKind::PickPlace;
    throw ConfigError(path + ".operator.kind: unknown kind '" + text + "'");
}

double reading_shear(const ContactReading& r) { return std::hypot(r.f_x, r.f_y); }

double reading_azimuth(const ContactReading& r) {
    const Vector3 n = rot_y(r.phi) * rot_x(r.theta) * Vector3(0, 0, 1);
    return azimuth_angle(n);
}

}  // namespace

const char* to_string(OperatorKind kind) {
    switch (kind) {
        case OperatorKind::GraspHold: return "grasp_hold";
        case OperatorKind::GraspRelease: return "grasp_release";
        case OperatorKind::PickPlace: return "pick_place";
    }
    return "unknown";
}

ScenarioConfig parse_config(const std::string& json_text, const std::string& origin) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }

    ScenarioConfig cfg;
    const std::string path = origin;
    cfg.schema_version = field(root, path, "schema_version", kSchemaVersion);
    if (cfg.schema_version != kSchemaVersion) {
        throw ConfigError(path + ".schema_version: unsupported version");
    }
    cfg.name = field<std::string>(root, path, "name", "scenario");
    cfg.seed = field<std::uint64_t>(root, path, "seed", 1);
    cfg.duration = field(root, path, "duration_s", 20.0);
    if (cfg.duration <= 0.0) throw ConfigError(path + ".duration_s: must be positive");
    cfg.reflexes_enabled = field(root, path, "reflexes_enabled", true);

    if (root.contains("reflex_params")) {
        const json& r = root.at("reflex_params");
        const std::string p = path + ".reflex_params";
        cfg.reflex.gamma_psi = field(r, p, "gamma_psi", cfg.reflex.gamma_psi);
        cfg.reflex.gamma_n = field(r, p, "gamma_n", cfg.reflex.gamma_n);
        cfg.reflex.mu_hat = field(r, p, "mu_hat", cfg.reflex.mu_hat);
        cfg.reflex.gamma_c = field(r, p, "gamma_c", cfg.reflex.gamma_c);
        cfg.reflex.epsilon_r = field(r, p, "epsilon_r", cfg.reflex.epsilon_r);
        cfg.reflex.t_f = field(r, p, "t_f", cfg.reflex.t_f);
        cfg.reflex.gamma_q = field(r, p, "gamma_q", cfg.reflex.gamma_q);
        cfg.reflex.max_attempts = field(r, p, "max_attempts", cfg.reflex.max_attempts);
        if (cfg.reflex.gamma_c < 1.0) throw ConfigError(p + ".gamma_c: must be >= 1");
        if (cfg.reflex.t_f <= 0.0) throw ConfigError(p + ".t_f: must be positive");
    }

    if (root.contains("gripper")) {
        const json& g = root.at("gripper");
        const std::string p = path + ".gripper";
        cfg.gripper.r_sensor = field(g, p, "r_sensor", cfg.gripper.r_sensor);
        cfg.gripper.l_finger = field(g, p, "l_finger", cfg.gripper.l_finger);
        cfg.gripper.link_radius = field(g, p, "link_radius", cfg.gripper.link_radius);
        cfg.gripper.d_zero = field(g, p, "d_zero", cfg.gripper.d_zero);
        cfg.gripper.d_max = field(g, p, "d_max", cfg.gripper.d_max);
        cfg.gripper.l_tip = field(g, p, "l_tip", cfg.gripper.l_tip);
        try {
            cfg.gripper.finalize();
        } catch (const std::exception& e) {
            throw ConfigError(p + ": " + e.what());
        }
    }

    if (root.contains("noise")) {
        const json& n = root.at("noise");
        const std::string p = path + ".noise";
        cfg.noise.angle_sigma = field(n, p, "angle_sigma", cfg.noise.angle_sigma);
        cfg.noise.force_sigma = field(n, p, "force_sigma", cfg.noise.force_sigma);
        cfg.noise.enabled = field(n, p, "enabled", cfg.noise.enabled);
    }

    if (root.contains("sensor")) {
        const json& s = root.at("sensor");
        const std::string p = path + ".sensor";
        cfg.sensor.rate_hz = field(s, p, "rate_hz", cfg.sensor.rate_hz);
        cfg.sensor.force_resolution = field(s, p, "force_resolution", cfg.sensor.force_resolution);
        cfg.sensor.force_saturation = field(s, p, "force_saturation", cfg.sensor.force_saturation);
    }

    if (root.contains("arm")) {
        const json& a = root.at("arm");
        const std::string p = path + ".arm";
        cfg.chain.upper_length = field(a, p, "upper_length", cfg.chain.upper_length);
        cfg.chain.lower_length = field(a, p, "lower_length", cfg.chain.lower_length);
    }

    if (root.contains("coupling")) {
        const json& c = root.at("coupling");
        const std::string p = path + ".coupling";
        cfg.gains.kp_arm = field(c, p, "kp_arm", cfg.gains.kp_arm);
        cfg.gains.kd_arm = field(c, p, "kd_arm", cfg.gains.kd_arm);
        cfg.gains.kp_gripper = field(c, p, "kp_gripper", cfg.gains.kp_gripper);
        cfg.gains.kd_gripper = field(c, p, "kd_gripper", cfg.gains.kd_gripper);
        cfg.dynamics.inertia_arm = field(c, p, "inertia_arm", cfg.dynamics.inertia_arm);
        cfg.dynamics.inertia_gripper = field(c, p, "inertia_gripper", cfg.dynamics.inertia_gripper);
        cfg.dynamics.damping_arm = field(c, p, "damping_arm", cfg.dynamics.damping_arm);
        cfg.dynamics.damping_gripper = field(c, p, "damping_gripper", cfg.dynamics.damping_gripper);
    }

    if (root.contains("compliance")) {
        const json& c = root.at("compliance");
        const std::string p = path + ".compliance";
        cfg.compliance.stiffness = field(c, p, "stiffness", cfg.compliance.stiffness);
        cfg.compliance.damping = field(c, p, "damping", cfg.compliance.damping);
    }

    if (root.contains("world")) {
        const json& w = root.at("world");
        const std::string p = path + ".world";
        cfg.world_slip_speed = field(w, p, "slip_speed", cfg.world_slip_speed);
        cfg.world_press_stiffness = field(w, p, "press_stiffness", cfg.world_press_stiffness);
        cfg.world_handover_force = field(w, p, "handover_force", cfg.world_handover_force);
        if (w.contains("objects")) {
            cfg.objects.clear();
            int index = 0;
            for (const auto& item : w.at("objects")) {
                const std::string op = p + ".objects[" + std::to_string(index++) + "]";
                ObjectConfig obj;
                obj.id = field<std::string>(item, op, "id", "object");
                obj.center = vec3_field(item, op, "center", obj.center);
                obj.radius = field(item, op, "radius", obj.radius);
                obj.mass = field(item, op, "mass", obj.mass);
                obj.mu = field(item, op, "mu", obj.mu);
                obj.anchored = field(item, op, "anchored", obj.anchored);
                if (obj.radius <= 0.0) throw ConfigError(op + ".radius: must be positive");
                if (obj.mu <= 0.0 || obj.mu > 2.0) throw ConfigError(op + ".mu: must be in (0, 2]");
                if (obj.mass < 0.0) throw ConfigError(op + ".mass: must be >= 0");
                if (item.contains("fill")) {
                    const json& f = item.at("fill");
                    const std::string fp = op + ".fill";
                    obj.fill.active = true;
                    obj.fill.initial = field(f, fp, "initial", obj.fill.initial);
                    obj.fill.final_mass = field(f, fp, "final", obj.fill.final_mass);
                    obj.fill.start_time = field(f, fp, "start_time", obj.fill.start_time);
                    obj.fill.duration = field(f, fp, "duration", obj.fill.duration);
                }
                cfg.objects.push_back(obj);
            }
        }
        if (cfg.objects.empty()) throw ConfigError(p + ".objects: at least one object required");
    }

    if (root.contains("operator")) {
        const json& o = root.at("operator");
        const std::string p = path + ".operator";
        cfg.operator_kind = operator_kind_from(field<std::string>(o, p, "kind", "pick_place"), path);
        cfg.target_object = field<std::string>(o, p, "target_object", cfg.target_object);
        cfg.script.approach_distance = field(o, p, "approach_distance", cfg.script.approach_distance);
        cfg.script.approach_height = field(o, p, "approach_height", cfg.script.approach_height);
        cfg.script.approach_speed = field(o, p, "approach_speed", cfg.script.approach_speed);
        cfg.script.grip_force = field(o, p, "grip_force", cfg.script.grip_force);
        cfg.script.squeeze_time = field(o, p, "squeeze_time", cfg.script.squeeze_time);
        cfg.script.aim_sigma_lateral = field(o, p, "aim_sigma_lateral", cfg.script.aim_sigma_lateral);
        cfg.script.aim_sigma_axial = field(o, p, "aim_sigma_axial", cfg.script.aim_sigma_axial);
        cfg.script.aim_sigma_gap = field(o, p, "aim_sigma_gap", cfg.script.aim_sigma_gap);
        cfg.script.aim_sigma_angle = field(o, p, "aim_sigma_angle", cfg.script.aim_sigma_angle);
        cfg.script.settle_time = field(o, p, "settle_time", cfg.script.settle_time);
        cfg.script.lift_enabled = field(o, p, "lift", cfg.operator_kind == OperatorKind::PickPlace);
        cfg.script.lift_height = field(o, p, "lift_height", cfg.script.lift_height);
        cfg.script.place_offset = vec3_field(o, p, "place_offset", cfg.script.place_offset);
        cfg.script.transport_speed = field(o, p, "transport_speed", cfg.script.transport_speed);
        cfg.script.hold_time = field(o, p, "hold_time", cfg.script.hold_time);
        cfg.script.secure_wait = field(o, p, "secure_wait", cfg.script.secure_wait);
        cfg.script.post_secure_hold = field(o, p, "post_secure_hold", cfg.script.post_secure_hold);
        cfg.script.max_approach_attempts =
            field(o, p, "max_approach_attempts", cfg.script.max_approach_attempts);
        cfg.place_tolerance = field(o, p, "place_tolerance", cfg.place_tolerance);
    } else {
        cfg.script.lift_enabled = cfg.operator_kind == OperatorKind::PickPlace;
    }

    if (root.contains("trace")) {
        const json& t = root.at("trace");
        const std::string p = path + ".trace";
        cfg.trace.enabled = field(t, p, "enabled", cfg.trace.enabled);
        cfg.trace.decimate = std::max(1, field(t, p, "decimate", cfg.trace.decimate));
        cfg.trace.path = field<std::string>(t, p, "path", cfg.trace.path);
    }

    bool target_found = false;
    for (const auto& obj : cfg.objects) target_found |= obj.id == cfg.target_object;
    if (!target_found) {
        throw ConfigError(path + ".operator.target_object: no object with id '" + cfg.target_object + "'");
    }

    return cfg;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path);
}

std::string config_to_json(const ScenarioConfig& cfg) {
    json root;
    root["schema_version"] = cfg.schema_version;
    root["name"] = cfg.name;
    root["seed"] = cfg.seed;
    root["duration_s"] = cfg.duration;
    root["reflexes_enabled"] = cfg.reflexes_enabled;
    root["reflex_params"] = {
        {"gamma_psi", cfg.reflex.gamma_psi}, {"gamma_n", cfg.reflex.gamma_n},
        {"mu_hat", cfg.reflex.mu_hat},       {"gamma_c", cfg.reflex.gamma_c},
        {"epsilon_r", cfg.reflex.epsilon_r}, {"t_f", cfg.reflex.t_f},
        {"gamma_q", cfg.reflex.gamma_q},     {"max_attempts", cfg.reflex.max_attempts}};
    root["gripper"] = {{"r_sensor", cfg.gripper.r_sensor}, {"l_finger", cfg.gripper.l_finger},
                       {"link_radius", cfg.gripper.link_radius}, {"d_zero", cfg.gripper.d_zero},
                       {"d_max", cfg.gripper.d_max},             {"l_tip", cfg.gripper.l_tip}};
    root["noise"] = {{"angle_sigma", cfg.noise.angle_sigma},
                     {"force_sigma", cfg.noise.force_sigma},
                     {"enabled", cfg.noise.enabled}};
    root["sensor"] = {{"rate_hz", cfg.sensor.rate_hz},
                      {"force_resolution", cfg.sensor.force_resolution},
                      {"force_saturation", cfg.sensor.force_saturation}};
    root["arm"] = {{"upper_length", cfg.chain.upper_length}, {"lower_length", cfg.chain.lower_length}};
    root["coupling"] = {{"kp_arm", cfg.gains.kp_arm},
                        {"kd_arm", cfg.gains.kd_arm},
                        {"kp_gripper", cfg.gains.kp_gripper},
                        {"kd_gripper", cfg.gains.kd_gripper},
                        {"inertia_arm", cfg.dynamics.inertia_arm},
                        {"inertia_gripper", cfg.dynamics.inertia_gripper},
                        {"damping_arm", cfg.dynamics.damping_arm},
                        {"damping_gripper", cfg.dynamics.damping_gripper}};
    root["compliance"] = {{"stiffness", cfg.compliance.stiffness}, {"damping", cfg.compliance.damping}};
    json objects = json::array();
    for (const auto& obj : cfg.objects) {
        json item = {{"id", obj.id},     {"center", vec3_json(obj.center)}, {"radius", obj.radius},
                     {"mass", obj.mass}, {"mu", obj.mu},                   {"anchored", obj.anchored}};
        if (obj.fill.active) {
            item["fill"] = {{"initial", obj.fill.initial},
                            {"final", obj.fill.final_mass},
                            {"start_time", obj.fill.start_time},
                            {"duration", obj.fill.duration}};
        }
        objects.push_back(item);
    }
    root["world"] = {{"slip_speed", cfg.world_slip_speed},
                     {"press_stiffness", cfg.world_press_stiffness},
                     {"handover_force", cfg.world_handover_force},
                     {"objects", objects}};
    root["operator"] = {{"kind", to_string(cfg.operator_kind)},
                        {"target_object", cfg.target_object},
                        {"approach_distance", cfg.script.approach_distance},
                        {"approach_height", cfg.script.approach_height},
                        {"approach_speed", cfg.script.approach_speed},
                        {"grip_force", cfg.script.grip_force},
                        {"squeeze_time", cfg.script.squeeze_time},
                        {"aim_sigma_lateral", cfg.script.aim_sigma_lateral},
                        {"aim_sigma_axial", cfg.script.aim_sigma_axial},
                        {"aim_sigma_gap", cfg.script.aim_sigma_gap},
                        {"aim_sigma_angle", cfg.script.aim_sigma_angle},
                        {"settle_time", cfg.script.settle_time},
                        {"lift", cfg.script.lift_enabled},
                        {"lift_height", cfg.script.lift_height},
                        {"place_offset", vec3_json(cfg.script.place_offset)},
                        {"transport_speed", cfg.script.transport_speed},
                        {"hold_time", cfg.script.hold_time},
                        {"secure_wait", cfg.script.secure_wait},
                        {"post_secure_hold", cfg.script.post_secure_hold},
                        {"max_approach_attempts", cfg.script.max_approach_attempts},
                        {"place_tolerance", cfg.place_tolerance}};
    root["trace"] = {{"enabled", cfg.trace.enabled},
                     {"decimate", cfg.trace.decimate},
                     {"path", cfg.trace.path}};
    return root.dump(2);
}

std::uint64_t config_hash(const ScenarioConfig& cfg) {
    const std::string text = config_to_json(cfg);
    std::uint64_t hash = 1469598103934665603ull;
    for (const unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

int TrialMetrics::successful_attempts() const {
    int n = 0;
    for (const auto& a : attempts) n += a.success ? 1 : 0;
    return n;
}

int TrialMetrics::securing_detections() const {
    for (const auto& a : attempts) {
        if (a.secured) return a.detections;
    }
    return 0;
}

void write_metrics_json(const TrialMetrics& m, const std::string& path) {
    json root;
    root["scenario"] = m.scenario;
    root["seed"] = m.seed;
    root["config_hash"] = m.hash;
    root["reflexes"] = m.reflexes;
    root["trial_success"] = m.trial_success;
    root["trial_time"] = m.trial_time;
    root["time_to_secure"] = m.time_to_secure;
    root["regrasp_trajectories"] = m.regrasp_trajectories;
    root["slip_events"] = m.slip_events;
    root["slip_events_post_secure"] = m.slip_events_post_secure;
    root["first_slip_time"] = m.first_slip_time;
    root["max_ratio_post_secure"] = m.max_ratio_post_secure;
    root["ratio_bound_ok"] = m.ratio_bound_ok;
    root["joint_limits_ok"] = m.joint_limits_ok;
    root["trajectory_durations"] = m.trajectory_durations;
    root["duration_simulated"] = m.duration_simulated;
    json attempts = json::array();
    for (const auto& a : m.attempts) {
        attempts.push_back({{"t_started", a.t_started},
                            {"t_first_detect", a.t_first_detect},
                            {"initial_psi_fixed", a.initial_psi_fixed},
                            {"initial_psi_actuated", a.initial_psi_actuated},
                            {"initial_rho_fixed", a.initial_rho_fixed},
                            {"initial_rho_actuated", a.initial_rho_actuated},
                            {"secured", a.secured},
                            {"t_secured", a.t_secured},
                            {"final_psi_fixed", a.final_psi_fixed},
                            {"final_psi_actuated", a.final_psi_actuated},
                            {"final_rho_fixed", a.final_rho_fixed},
                            {"final_rho_actuated", a.final_rho_actuated},
                            {"detections", a.detections},
                            {"success", a.success}});
    }
    root["attempts"] = attempts;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    out << root.dump(2) << "\n";
}

TrialMetrics read_metrics_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file: " + path);
    json root;
    in >> root;
    TrialMetrics m;
    m.scenario = root.value("scenario", "");
    m.seed = root.value("seed", 0ull);
    m.hash = root.value("config_hash", 0ull);
    m.reflexes = root.value("reflexes", true);
    m.trial_success = root.value("trial_success", false);
    m.trial_time = root.value("trial_time", 0.0);
    m.time_to_secure = root.value("time_to_secure", -1.0);
    m.regrasp_trajectories = root.value("regrasp_trajectories", 0);
    m.slip_events = root.value("slip_events", 0);
    m.slip_events_post_secure = root.value("slip_events_post_secure", 0);
    m.first_slip_time = root.value("first_slip_time", -1.0);
    m.max_ratio_post_secure = root.value("max_ratio_post_secure", 0.0);
    m.ratio_bound_ok = root.value("ratio_bound_ok", true);
    m.joint_limits_ok = root.value("joint_limits_ok", true);
    m.trajectory_durations = root.value("trajectory_durations", std::vector<double>{});
    m.duration_simulated = root.value("duration_simulated", 0.0);
    if (root.contains("attempts")) {
        for (const auto& a : root.at("attempts")) {
            AttemptRecord rec;
            rec.t_started = a.value("t_started", 0.0);
            rec.t_first_detect = a.value("t_first_detect", -1.0);
            rec.initial_psi_fixed = a.value("initial_psi_fixed", 0.0);
            rec.initial_psi_actuated = a.value("initial_psi_actuated", 0.0);
            rec.initial_rho_fixed = a.value("initial_rho_fixed", 0.0);
            rec.initial_rho_actuated = a.value("initial_rho_actuated", 0.0);
            rec.secured = a.value("secured", false);
            rec.t_secured = a.value("t_secured", -1.0);
            rec.final_psi_fixed = a.value("final_psi_fixed", 0.0);
            rec.final_psi_actuated = a.value("final_psi_actuated", 0.0);
            rec.final_rho_fixed = a.value("final_rho_fixed", 0.0);
            rec.final_rho_actuated = a.value("final_rho_actuated", 0.0);
            rec.detections = a.value("detections", 0);
            rec.success = a.value("success", false);
            m.attempts.push_back(rec);
        }
    }
    return m;
}

namespace {

class TraceWriter {
public:
    TraceWriter(const std::string& path, const ScenarioConfig& cfg, std::uint64_t hash) {
        file_ = std::fopen(path.c_str(), "w");
        if (!file_) throw std::runtime_error("cannot open trace file: " + path);
        std::fprintf(file_, "# scenario=%s seed=%llu config_hash=%016llx reflexes=%s\n",
                     cfg.name.c_str(), static_cast<unsigned long long>(cfg.seed),
                     static_cast<unsigned long long>(hash), cfg.reflexes_enabled ? "on" : "off");
        std::fprintf(file_,
                     "t,mode,phase,attempt,q_f1,q_f2,q_f3,q_f4,q_f5,q_f6,q_gf,q_gl,"
                     "theta_f,phi_f,F_n_f,F_x_f,F_y_f,contact_f,"
                     "theta_a,phi_a,F_n_a,F_x_a,F_y_a,contact_a,"
                     "psi_f,psi_a,F_t_f,F_t_a,F_n_cmd,ratio,slip,"
                     "obj_x,obj_y,obj_z,obj_mass,defl_x,defl_y,defl_z\n");
    }

    ~TraceWriter() {
        if (file_) std::fclose(file_);
    }

    TraceWriter(const TraceWriter&) = delete;
    TraceWriter& operator=(const TraceWriter&) = delete;

    void row(double t, const char* mode, const char* phase, int attempt, const JointVector& q_f,
             double q_gf, double q_gl, const ContactReading& rf, const ContactReading& ra,
             double psi_f, double psi_a, double fn_cmd, double ratio, bool slip,
             const Vector3& obj, double mass, const Vector3& defl) {
        std::fprintf(file_,
                     "%.6f,%s,%s,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%d,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%d,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                     t, mode, phase, attempt, q_f[0], q_f[1], q_f[2], q_f[3], q_f[4], q_f[5], q_gf,
                     q_gl, rf.theta, rf.phi, rf.f_n, rf.f_x, rf.f_y, rf.in_contact ? 1 : 0, ra.theta,
                     ra.phi, ra.f_n, ra.f_x, ra.f_y, ra.in_contact ? 1 : 0, psi_f, psi_a,
                     reading_shear(rf), reading_shear(ra), fn_cmd, ratio, slip ? 1 : 0, obj.x(),
                     obj.y(), obj.z(), mass, defl.x(), defl.y(), defl.z());
    }

private:
    std::FILE* file_ = nullptr;
};

class SimulationEngine {
public:
    SimulationEngine(const ScenarioConfig& cfg, const std::string& out_dir)
        : cfg_(cfg),
          hash_(config_hash(cfg)),
          world_(),
          op_(cfg.script, cfg.chain, cfg.gripper, cfg.gains,
              cfg.seed ^ 0x9e3779b97f4a7c15ull),
          sensor_fixed_(cfg.noise, cfg.sensor, cfg.seed * 2654435761ull + 1),
          sensor_actuated_(cfg.noise, cfg.sensor, cfg.seed * 2654435761ull + 2) {
        world_.slip_speed = cfg.world_slip_speed;
        world_.press_stiffness = cfg.world_press_stiffness;
        world_.handover_force = cfg.world_handover_force;
        int index = 0;
        for (const auto& oc : cfg.objects) {
            WorldObject obj;
            obj.id = oc.id;
            obj.pose.translation = oc.center;
            obj.radius = oc.radius;
            obj.mass = oc.mass;
            obj.mu = oc.mu;
            obj.anchored = oc.anchored;
            obj.schedule = oc.fill;
            obj.schedule.initial = oc.fill.active ? oc.fill.initial : oc.mass;
            obj.support_z = oc.center.z();
            if (oc.id == cfg.target_object) world_.target_index = index;
            world_.objects.push_back(obj);
            ++index;
        }

        const WorldObject& target = world_.target();
        op_.set_object_start(target.pose.translation, target.radius);
        place_point_ = target.pose.translation + cfg.script.place_offset;

        // Start both devices at the approach start pose.
        JointVector q_seed;
        q_seed << 0.0, 0.0, 0.6, 0.0, -0.6, 0.0;
        RigidTransform start = op_.approach_start_pose();
        const IkResult ik = inverse_kinematics(cfg.chain, start, q_seed);
        q_f_ = ik.converged ? ik.q : q_seed;
        q_l_ = q_f_;
        q_gf_ = op_.open_angle();
        q_gl_ = q_gf_;
        op_.set_initial_config(q_f_, q_gf_);

        metrics_.scenario = cfg.name;
        metrics_.seed = cfg.seed;
        metrics_.hash = hash_;
        metrics_.reflexes = cfg.reflexes_enabled;

        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            if (cfg.trace.enabled) {
                trace_ = std::make_unique<TraceWriter>(out_dir + "/" + cfg.trace.path, cfg, hash_);
            }
            metrics_path_ = out_dir + "/metrics_" + cfg.name + "_" +
                            std::to_string(cfg.seed) + (cfg.reflexes_enabled ? "_on" : "_off") +
                            ".json";
        }
    }

    TrialMetrics run() {
        const double dt = kControlDt;
        const long total_ticks = static_cast<long>(std::llround(cfg_.duration / dt));
        double done_since = -1.0;

        for (long k = 0; k < total_ticks; ++k) {
            const double t = k * dt;
            tick(t, dt);
            metrics_.duration_simulated = t + dt;
            if (op_.phase() == OperatorPhase::Done) {
                if (done_since < 0.0) done_since = t;
                if (t - done_since > 0.3) break;
            }
        }
        finalize();
        if (!metrics_path_.empty()) write_metrics_json(metrics_, metrics_path_);
        return metrics_;
    }

private:
    void tick(double t, double dt) {
        // Operator first: decides from what it saw last tick.
        OperatorObservation obs;
        obs.reflexes_enabled = cfg_.reflexes_enabled;
        obs.secure = reflex_state_.secure;
        obs.reflex_failed = reflex_state_.lockout;
        obs.regrasp_active = reflex_state_.mode == ReflexMode::RegraspExecuting;
        obs.both_contacts = last_world_.contacts.both_touching();
        obs.object_held = world_.held();
        obs.follower_gripper = q_gf_;
        obs.object_position = world_.target().pose.translation;

        OperatorEvents op_events;
        const OperatorPhase prev_phase = op_.phase();
        const LeaderCommand cmd = op_.step(t, dt, obs, op_events);
        if (prev_phase != OperatorPhase::Release && op_.phase() == OperatorPhase::Release) {
            // Judge the grasp at the moment the operator lets go on purpose.
            release_was_held_ = world_.held();
            release_position_ = world_.target().pose.translation;
        }
        handle_operator_events(op_events, t);

        const bool regrasp_override_pending = reflex_state_.mode == ReflexMode::RegraspExecuting;
        if (!regrasp_override_pending) {
            q_l_ = cmd.q;
            qd_l_ = cmd.qd;
            q_gl_ = cmd.q_gripper;
            qd_gl_ = cmd.qd_gripper;
        }

        // Sensors see the world state of the previous step.
        const auto [tip_fixed_local, tip_actuated_local] = fingertip_frames(cfg_.gripper, q_gf_);
        const RigidTransform tip_fixed = physical_pose() * tip_fixed_local;
        const RigidTransform tip_actuated = physical_pose() * tip_actuated_local;
        const WorldObject& target = world_.target();
        reading_fixed_ = sensor_fixed_.sample(
            t, tip_fixed, last_world_.contacts.fixed.touching, target.pose.translation,
            target.radius, last_world_.contacts.fixed.normal_force,
            last_world_.contacts.fixed.tangential);
        reading_actuated_ = sensor_actuated_.sample(
            t, tip_actuated, last_world_.contacts.actuated.touching, target.pose.translation,
            target.radius, last_world_.contacts.actuated.normal_force,
            last_world_.contacts.actuated.tangential);

        const double tau_pd_grip = cfg_.gains.kp_gripper * (q_gl_ - q_gf_) +
                                   cfg_.gains.kd_gripper * (qd_gl_ - qd_gf_);

        FsmCommands commands;
        if (cfg_.reflexes_enabled) {
            FsmInputs inputs;
            inputs.t = t;
            inputs.q_gl = q_gl_;
            inputs.q_gf = q_gf_;
            inputs.reading_fixed = reading_fixed_;
            inputs.reading_actuated = reading_actuated_;
            inputs.arm_q = q_f_;
            inputs.gripper_pose = forward_kinematics(cfg_.chain, q_f_);
            inputs.user_closing_torque = tau_pd_grip;
            FsmResult result = fsm_tick(reflex_state_, inputs, cfg_.reflex, cfg_.chain, cfg_.gripper);
            reflex_state_ = result.state;
            commands = result.commands;
            handle_reflex_events(result.events, t);
        }

        double closing_force = 0.0;
        if (commands.override_joints) {
            const JointVector q_new = commands.arm_q;
            qd_f_ = (q_new - q_f_) / dt;
            q_f_ = q_new;
            check_joint_limits();
            double q_g_new = commands.gripper_q;
            const auto clamp_angle = contact_clamp_angle(cfg_.gripper, physical_pose(), target);
            if (clamp_angle && q_g_new < *clamp_angle) q_g_new = *clamp_angle;
            qd_gf_ = (q_g_new - q_gf_) / dt;
            q_gf_ = std::clamp(q_g_new, cfg_.gripper.q_min, cfg_.gripper.q_max);
            // Leader rides along with the reflex trajectory.
            q_l_ = q_f_;
            qd_l_ = qd_f_;
            q_gl_ = q_gf_;
            qd_gl_ = qd_gf_;
            if (regrasp_completed_this_tick_) {
                op_.sync(q_f_, q_gf_);
                qd_f_.setZero();
                qd_gf_ = 0.0;
                regrasp_completed_this_tick_ = false;
            }
        } else {
            const CouplingTorques torques = coupling_torques(
                q_l_, qd_l_, q_f_, qd_f_, q_gl_, qd_gl_, q_gf_, qd_gf_, cfg_.gains);
            for (int i = 0; i < 6; ++i) {
                qd_f_[i] += dt * (torques.follower_arm[i] - cfg_.dynamics.damping_arm * qd_f_[i]) /
                            cfg_.dynamics.inertia_arm;
                qd_f_[i] = std::clamp(qd_f_[i], -cfg_.chain.velocity_limits[i],
                                      cfg_.chain.velocity_limits[i]);
                q_f_[i] += dt * qd_f_[i];
                if (q_f_[i] <= cfg_.chain.lower_limits[i] || q_f_[i] >= cfg_.chain.upper_limits[i]) {
                    q_f_[i] = std::clamp(q_f_[i], cfg_.chain.lower_limits[i],
                                         cfg_.chain.upper_limits[i]);
                    qd_f_[i] = 0.0;
                }
            }

            double tau_g = tau_pd_grip;
            if (commands.has_gripper_torque) tau_g = commands.gripper_torque;
            qd_gf_ += dt * (tau_g - cfg_.dynamics.damping_gripper * qd_gf_) /
                      cfg_.dynamics.inertia_gripper;
            q_gf_ += dt * qd_gf_;
            const auto clamp_angle = contact_clamp_angle(cfg_.gripper, physical_pose(), target);
            if (clamp_angle && q_gf_ < *clamp_angle) {
                q_gf_ = *clamp_angle;
                qd_gf_ = 0.0;
            }
            if (q_gf_ <= cfg_.gripper.q_min || q_gf_ >= cfg_.gripper.q_max) {
                q_gf_ = std::clamp(q_gf_, cfg_.gripper.q_min, cfg_.gripper.q_max);
                qd_gf_ = 0.0;
            }
            closing_force = std::max(0.0, -tau_g) / cfg_.gripper.l_finger;
        }

        // World update against the physical (deflected) gripper pose.
        GripperSnapshot snapshot;
        snapshot.pose = physical_pose();
        snapshot.q_g = q_gf_;
        snapshot.closing_force = closing_force;
        const WorldStepResult wres = world_.step(t, dt, cfg_.gripper, snapshot);

        // Arm compliance: anchored-contact reactions shove the gripper
        // along the closing axis until both fingers seat; the sticking
        // dome contacts absorb the transverse components.
        if (world_.target().anchored && wres.contacts.both_touching()) {
            // stick
        } else {
            const Vector3 closing_axis = snapshot.pose.rotation.col(1);
            const Vector3 reaction =
                wres.reaction_on_gripper.dot(closing_axis) * closing_axis;
            const Vector3 force = reaction - cfg_.compliance.stiffness * deflection_;
            deflection_ += dt * force / cfg_.compliance.damping;
        }

        metrics_.slip_events += wres.new_slip_events;
        if (wres.new_slip_events > 0 && metrics_.first_slip_time < 0.0) {
            metrics_.first_slip_time = t;
        }
        if (reflex_state_.secure) {
            if (wres.new_slip_events > 0) metrics_.slip_events_post_secure += wres.new_slip_events;
            const double ft = std::max(reading_shear(reading_fixed_), reading_shear(reading_actuated_));
            if (closing_force > 1e-9) {
                const double ratio = ft / closing_force;
                metrics_.max_ratio_post_secure = std::max(metrics_.max_ratio_post_secure, ratio);
                if (ratio > cfg_.reflex.gamma_mu() + 1e-9) metrics_.ratio_bound_ok = false;
            }
        }

        if (trace_ && tick_count_ % cfg_.trace.decimate == 0) {
            double psi_f = 0.0, psi_a = 0.0;
            if (reading_fixed_.in_contact && reading_actuated_.in_contact) {
                const AntipodalResult check = antipodal_check(
                    contact_frame(reading_fixed_.theta, reading_fixed_.phi, cfg_.gripper.r_sensor),
                    contact_frame(reading_actuated_.theta, reading_actuated_.phi,
                                  cfg_.gripper.r_sensor),
                    q_gf_, cfg_.gripper, cfg_.reflex);
                psi_f = check.psi_fixed;
                psi_a = check.psi_actuated;
            }
            const double ft = std::max(reading_shear(reading_fixed_), reading_shear(reading_actuated_));
            const double ratio = closing_force > 1e-9 ? ft / closing_force : 0.0;
            const bool slip = wres.contacts.fixed.slip || wres.contacts.actuated.slip;
            trace_->row(t, to_string(reflex_state_.mode), to_string(op_.phase()),
                        reflex_state_.attempt_count, q_f_, q_gf_, q_gl_, reading_fixed_,
                        reading_actuated_, psi_f, psi_a, closing_force, ratio, slip,
                        world_.target().pose.translation, world_.target().mass, deflection_);
        }
        ++tick_count_;

        last_world_ = wres;
    }

    RigidTransform physical_pose() const {
        return translate(deflection_) * forward_kinematics(cfg_.chain, q_f_);
    }

    void check_joint_limits() {
        for (int i = 0; i < 6; ++i) {
            if (q_f_[i] < cfg_.chain.lower_limits[i] - 1e-9 ||
                q_f_[i] > cfg_.chain.upper_limits[i] + 1e-9) {
                metrics_.joint_limits_ok = false;
            }
        }
    }

    void handle_operator_events(const OperatorEvents& ev, double t) {
        if (ev.attempt_started) {
            AttemptRecord rec;
            rec.t_started = t;
            metrics_.attempts.push_back(rec);
        }
        if (ev.released) {
            bool success = false;
            switch (cfg_.operator_kind) {
                case OperatorKind::PickPlace: {
                    const double error = (release_position_ - place_point_).norm();
                    success = release_was_held_ && error <= cfg_.place_tolerance;
                    break;
                }
                case OperatorKind::GraspHold:
                    success = release_was_held_;
                    break;
                case OperatorKind::GraspRelease:
                    success = !metrics_.attempts.empty() && metrics_.attempts.back().secured;
                    break;
            }
            metrics_.trial_success = success;
            metrics_.trial_time = t - op_.first_motion_time();
            if (!metrics_.attempts.empty()) metrics_.attempts.back().success = success;
        }
        if (ev.trial_failed) {
            metrics_.trial_success = false;
            metrics_.trial_time = metrics_.duration_simulated;
        }
    }

    void handle_reflex_events(const std::vector<ReflexEvent>& events, double t) {
        for (const auto& ev : events) {
            switch (ev.type) {
                case ReflexEventType::GraspDetected: {
                    if (metrics_.attempts.empty()) {
                        AttemptRecord rec;
                        rec.t_started = t;
                        metrics_.attempts.push_back(rec);
                    }
                    AttemptRecord& rec = metrics_.attempts.back();
                    rec.detections += 1;
                    if (rec.t_first_detect < 0.0) {
                        rec.t_first_detect = t;
                        rec.initial_psi_fixed = ev.psi_fixed;
                        rec.initial_psi_actuated = ev.psi_actuated;
                        rec.initial_rho_fixed = reading_azimuth(reading_fixed_);
                        rec.initial_rho_actuated = reading_azimuth(reading_actuated_);
                    }
                    break;
                }
                case ReflexEventType::SecureEntered: {
                    if (!metrics_.attempts.empty()) {
                        AttemptRecord& rec = metrics_.attempts.back();
                        rec.secured = true;
                        rec.t_secured = t;
                        rec.final_psi_fixed = ev.psi_fixed;
                        rec.final_psi_actuated = ev.psi_actuated;
                        rec.final_rho_fixed = reading_azimuth(reading_fixed_);
                        rec.final_rho_actuated = reading_azimuth(reading_actuated_);
                        if (metrics_.time_to_secure < 0.0 && rec.t_first_detect >= 0.0) {
                            metrics_.time_to_secure = t - rec.t_first_detect;
                        }
                    }
                    break;
                }
                case ReflexEventType::RegraspStarted:
                    metrics_.regrasp_trajectories += 1;
                    regrasp_start_time_ = t;
                    break;
                case ReflexEventType::RegraspCompleted:
                    metrics_.trajectory_durations.push_back(t - regrasp_start_time_);
                    regrasp_completed_this_tick_ = true;
                    break;
                default:
                    break;
            }
        }
    }

    void finalize() {
        if (metrics_.trial_time == 0.0 && !metrics_.trial_success) {
            metrics_.trial_time = metrics_.duration_simulated;
        }
    }

    ScenarioConfig cfg_;
    std::uint64_t hash_;
    World world_;
    OperatorModel op_;
    DomeSensor sensor_fixed_;
    DomeSensor sensor_actuated_;

    JointVector q_l_ = JointVector::Zero();
    JointVector qd_l_ = JointVector::Zero();
    JointVector q_f_ = JointVector::Zero();
    JointVector qd_f_ = JointVector::Zero();
    double q_gl_ = 0.0, qd_gl_ = 0.0, q_gf_ = 0.0, qd_gf_ = 0.0;
    Vector3 deflection_ = Vector3::Zero();

    ReflexState reflex_state_;
    WorldStepResult last_world_;
    ContactReading reading_fixed_;
    ContactReading reading_actuated_;
    Vector3 place_point_ = Vector3::Zero();

    TrialMetrics metrics_;
    std::unique_ptr<TraceWriter> trace_;
    std::string metrics_path_;
    long tick_count_ = 0;
    double regrasp_start_time_ = 0.0;
    bool regrasp_completed_this_tick_ = false;
    bool release_was_held_ = false;
    Vector3 release_position_ = Vector3::Zero();
};

}  // namespace

TrialMetrics run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
    SimulationEngine engine(cfg, out_dir);
    return engine.run();
}

}  // namespace reflex
