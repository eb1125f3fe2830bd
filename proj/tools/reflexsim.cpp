#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reflex/battery.hpp"
#include "reflex/scenario.hpp"

namespace {

int run_command(const std::string& config_path, std::uint64_t seed, bool seed_set,
                const std::string& out_dir, const std::string& reflexes) {
    reflex::ScenarioConfig cfg = reflex::load_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (reflexes == "on") cfg.reflexes_enabled = true;
    if (reflexes == "off") cfg.reflexes_enabled = false;

    const reflex::TrialMetrics metrics = reflex::run_scenario(cfg, out_dir);
    std::printf("scenario %s seed %llu reflexes %s\n", metrics.scenario.c_str(),
                static_cast<unsigned long long>(metrics.seed), metrics.reflexes ? "on" : "off");
    std::printf("  success: %s  trial time: %.2f s  attempts: %d  detections: %d\n",
                metrics.trial_success ? "yes" : "no", metrics.trial_time,
                metrics.total_attempts(), metrics.securing_detections());
    std::printf("  slip events: %d (post secure: %d)  max ratio: %.4f\n", metrics.slip_events,
                metrics.slip_events_post_secure, metrics.max_ratio_post_secure);
    return metrics.trial_success ? 0 : 2;
}

int battery_command(const std::string& config_path, int seed_count, std::uint64_t first_seed,
                    const std::string& out_dir) {
    reflex::ScenarioConfig base = reflex::load_config(config_path);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < seed_count; ++i) seeds.push_back(first_seed + static_cast<std::uint64_t>(i));
    const reflex::BatteryResult result = reflex::run_battery(base, seeds, out_dir);
    std::printf("%s", reflex::comparison_table(result).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reflexive grasping scenario runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::string reflexes = "config";
    std::uint64_t seed = 0;
    bool seed_set = false;

    CLI::App* run = app.add_subcommand("run", "Run a single scenario");
    run->add_option("--config", config_path, "Scenario config JSON")->required();
    run->add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--reflexes", reflexes, "Override reflexes: on|off")
        ->check(CLI::IsMember({"on", "off", "config"}));

    int seed_count = 20;
    std::uint64_t first_seed = 1;
    CLI::App* battery = app.add_subcommand("battery", "Paired reflexes on/off seed sweep");
    battery->add_option("--config", config_path, "Scenario config JSON")->required();
    battery->add_option("--seeds", seed_count, "Number of seeds");
    battery->add_option("--first-seed", first_seed, "First seed value");
    battery->add_option("--out", out_dir, "Output directory");

    std::vector<std::string> metrics_files;
    CLI::App* report = app.add_subcommand("report", "Summarize metrics files");
    report->add_option("files", metrics_files, "Metrics JSON files")->required();
    report->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(config_path, seed, seed_set, out_dir, reflexes);
        if (battery->parsed()) return battery_command(config_path, seed_count, first_seed, out_dir);
        if (report->parsed()) {
            std::printf("%s", reflex::generate_report(metrics_files, out_dir).c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
