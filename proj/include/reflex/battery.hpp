#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reflex/scenario.hpp"

namespace reflex {

/// Aggregate statistics over the trials of one controller mode.
struct ModeAggregate {
    int trials = 0;
    int attempts = 0;
    int successes = 0;
    double success_rate = 0.0;
    int successful_trials = 0;
    double mean_trial_time = 0.0;  // successful trials only [s]
    double mean_initial_psi = 0.0;
    double sd_initial_psi = 0.0;
    double mean_final_psi = 0.0;
    double sd_final_psi = 0.0;
    double median_detections = 0.0;
    double mean_time_to_secure = 0.0;
    int slip_events = 0;
};

struct BatteryResult {
    ModeAggregate with_reflexes;
    ModeAggregate without_reflexes;
    std::vector<TrialMetrics> runs;
};

ModeAggregate aggregate(const std::vector<const TrialMetrics*>& runs);

/// Runs the same scripted trials with the reflexes on and off, one pair
/// per seed, and writes per-trial metrics plus a comparison table.
BatteryResult run_battery(const ScenarioConfig& base, const std::vector<std::uint64_t>& seeds,
                          const std::string& out_dir);

std::string comparison_table(const BatteryResult& result);

/// Summarizes previously written metrics files into a one-row-per-trial
/// table plus a plot-ready CSV of (azimuth, polar-angle) grasp locations.
/// Missing files are reported in the returned text.
std::string generate_report(const std::vector<std::string>& metrics_paths,
                            const std::string& out_dir);

}  // namespace reflex
