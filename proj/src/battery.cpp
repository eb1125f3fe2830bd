#include "reflex/battery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace reflex {

namespace {

struct Stats {
    double mean = 0.0;
    double sd = 0.0;
};

Stats mean_sd(const std::vector<double>& values) {
    Stats s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / values.size();
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.sd = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
    return s;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

ModeAggregate aggregate(const std::vector<const TrialMetrics*>& runs) {
    ModeAggregate agg;
    std::vector<double> initial_psi, final_psi, times, detections, secure_times;
    for (const TrialMetrics* m : runs) {
        agg.trials += 1;
        agg.attempts += m->total_attempts();
        agg.successes += m->successful_attempts();
        agg.slip_events += m->slip_events;
        if (m->trial_success) {
            agg.successful_trials += 1;
            times.push_back(m->trial_time);
        }
        for (const auto& a : m->attempts) {
            if (a.t_first_detect >= 0.0) {
                initial_psi.push_back(a.initial_psi_fixed);
                initial_psi.push_back(a.initial_psi_actuated);
            }
            if (a.secured) {
                final_psi.push_back(a.final_psi_fixed);
                final_psi.push_back(a.final_psi_actuated);
            }
        }
        if (m->securing_detections() > 0) detections.push_back(m->securing_detections());
        if (m->time_to_secure >= 0.0) secure_times.push_back(m->time_to_secure);
    }
    agg.success_rate = agg.attempts > 0 ? static_cast<double>(agg.successes) / agg.attempts : 0.0;
    const Stats t = mean_sd(times);
    agg.mean_trial_time = t.mean;
    const Stats ip = mean_sd(initial_psi);
    agg.mean_initial_psi = ip.mean;
    agg.sd_initial_psi = ip.sd;
    const Stats fp = mean_sd(final_psi);
    agg.mean_final_psi = fp.mean;
    agg.sd_final_psi = fp.sd;
    agg.median_detections = median(detections);
    agg.mean_time_to_secure = mean_sd(secure_times).mean;
    return agg;
}

BatteryResult run_battery(const ScenarioConfig& base, const std::vector<std::uint64_t>& seeds,
                          const std::string& out_dir) {
    BatteryResult result;
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    for (const bool reflexes : {true, false}) {
        for (const std::uint64_t seed : seeds) {
            ScenarioConfig cfg = base;
            cfg.seed = seed;
            cfg.reflexes_enabled = reflexes;
            cfg.trace.enabled = false;  // metrics only; traces belong to single runs
            result.runs.push_back(run_scenario(cfg, out_dir));
        }
    }

    std::vector<const TrialMetrics*> on, off;
    for (const auto& m : result.runs) (m.reflexes ? on : off).push_back(&m);
    result.with_reflexes = aggregate(on);
    result.without_reflexes = aggregate(off);

    if (!out_dir.empty()) {
        std::ofstream csv(out_dir + "/battery_trials.csv");
        csv << "# config_hash=" << std::hex << config_hash(base) << std::dec << "\n";
        csv << "scenario,seed,reflexes,attempts,successes,trial_success,trial_time,"
               "securing_detections,slip_events,time_to_secure\n";
        for (const auto& m : result.runs) {
            csv << m.scenario << "," << m.seed << "," << (m.reflexes ? "on" : "off") << ","
                << m.total_attempts() << "," << m.successful_attempts() << ","
                << (m.trial_success ? 1 : 0) << "," << m.trial_time << ","
                << m.securing_detections() << "," << m.slip_events << "," << m.time_to_secure
                << "\n";
        }
        std::ofstream summary(out_dir + "/battery_summary.txt");
        summary << comparison_table(result);
    }
    return result;
}

std::string comparison_table(const BatteryResult& result) {
    auto line = [](const char* label, const ModeAggregate& a) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-18s %6d %8d %9.1f%% %8.2f %12.3f/%.3f %11.3f/%.3f %8.1f\n", label,
                      a.trials, a.attempts, 100.0 * a.success_rate, a.mean_trial_time,
                      a.mean_initial_psi, a.sd_initial_psi, a.mean_final_psi, a.sd_final_psi,
                      a.median_detections);
        return std::string(buf);
    };
    std::string out;
    out += "controller          trials attempts   success  avg t[s]  init psi m/sd  final psi m/sd  med det\n";
    out += line("teleop only", result.without_reflexes);
    out += line("with reflexes", result.with_reflexes);
    return out;
}

std::string generate_report(const std::vector<std::string>& metrics_paths,
                            const std::string& out_dir) {
    std::ostringstream out;
    std::vector<TrialMetrics> runs;
    for (const auto& path : metrics_paths) {
        try {
            runs.push_back(read_metrics_json(path));
        } catch (const std::exception& e) {
            out << "missing or unreadable: " << path << " (" << e.what() << ")\n";
        }
    }

    out << "trials: " << runs.size() << "\n";
    out << "scenario,seed,reflexes,success,trial_time,attempts,detections,slips,max_ratio\n";
    for (const auto& m : runs) {
        out << m.scenario << "," << m.seed << "," << (m.reflexes ? "on" : "off") << ","
            << (m.trial_success ? 1 : 0) << "," << m.trial_time << "," << m.total_attempts()
            << "," << m.securing_detections() << "," << m.slip_events << ","
            << m.max_ratio_post_secure << "\n";
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream table(out_dir + "/report.txt");
        table << out.str();

        // Grasp locations on the sensor surface, one row per contact:
        // initial and final (azimuth, polar angle) pairs.
        std::ofstream angles(out_dir + "/grasp_angles.csv");
        angles << "scenario,seed,reflexes,finger,stage,rho,psi\n";
        for (const auto& m : runs) {
            const char* mode = m.reflexes ? "on" : "off";
            for (const auto& a : m.attempts) {
                if (a.t_first_detect >= 0.0) {
                    angles << m.scenario << "," << m.seed << "," << mode << ",fixed,initial,"
                           << a.initial_rho_fixed << "," << a.initial_psi_fixed << "\n";
                    angles << m.scenario << "," << m.seed << "," << mode << ",actuated,initial,"
                           << a.initial_rho_actuated << "," << a.initial_psi_actuated << "\n";
                }
                if (a.secured) {
                    angles << m.scenario << "," << m.seed << "," << mode << ",fixed,final,"
                           << a.final_rho_fixed << "," << a.final_psi_fixed << "\n";
                    angles << m.scenario << "," << m.seed << "," << mode << ",actuated,final,"
                           << a.final_rho_actuated << "," << a.final_psi_actuated << "\n";
                }
            }
        }
    }
    return out.str();
}

}  // namespace reflex
