#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxchan/core_model.hpp"
#include "ctxchan/net.hpp"
#include "ctxchan/provider_agent.hpp"

namespace ctxchan {

/// Process exit status of `ctxchan run`.
enum class ScenarioExit : int { Ok = 0, ConfigError = 1, ComponentFailure = 2, DeadlineExceeded = 3 };

class ScenarioError : public std::runtime_error {
public:
    ScenarioError(ScenarioExit code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ScenarioExit code() const noexcept { return code_; }

private:
    ScenarioExit code_;
};

struct ScenarioSpec {
    std::filesystem::path environment_file;
    std::vector<std::filesystem::path> providers;
    int iterations = 100;
    net::Endpoint broker{};
    std::filesystem::path output_dir = "out";
    std::optional<std::uint64_t> seed;  // overrides the environment's seed
    UnixSeconds start_time = 1'700'000'000;
    double time_scale = 100.0;  // simulated seconds per real second
    std::optional<double> deadline_s;  // real seconds; default iterations * interval / scale + 30

    void validate() const;
};

/// `key = value` lines: environment, provider (repeatable), iterations, broker, output_dir, seed,
/// start_time, time_scale. Relative paths resolve against `base_dir`.
ScenarioSpec parse_scenario(std::string_view text, const std::filesystem::path& base_dir,
                            const std::string& origin = "<scenario>");
ScenarioSpec load_scenario(const std::filesystem::path& path);

struct ProviderCsvRow {
    int iteration = 0;
    UnixSeconds timestamp = 0;
    int current_channel = 0;
    int recommended_channel = 0;
    int switch_flag = 0;
    double mean_current_dbm = 0.0;
    double mean_recommended_dbm = 0.0;
    double snr_gain_db = 0.0;
    double validity_s = 0.0;
};

/// Parses a provider event CSV (header required). Throws ParseError with the line number.
std::vector<ProviderCsvRow> parse_provider_csv(std::string_view text, const std::string& origin = "<csv>");

struct ProviderSummary {
    std::string provider_id;
    ProviderExit exit = ProviderExit::Completed;
    int rows = 0;
    int switches = 0;
    int recommendation_changes = 0;
    double mean_snr_gain_db = 0.0;
    double max_snr_gain_db = 0.0;
    int final_channel = 0;
    int final_recommendation = 0;
    double final_validity_s = 0.0;
    std::filesystem::path csv;
};

struct ScenarioSummary {
    ScenarioExit exit = ScenarioExit::Ok;
    std::vector<ProviderSummary> providers;
    int broker_acked_updates = 0;
    std::size_t broker_cache_entries = 0;
    std::filesystem::path output_dir;

    std::string to_json() const;
    std::string to_table() const;
};

/// Runs a broker and every provider of `spec` against the simulated environment over loopback
/// TCP, writes `<provider>.csv`, `<provider>.log`, `broker_events.log`, `summary.json` and
/// `summary.txt` into the output directory. Throws ScenarioError for configuration and startup
/// failures; component failures and deadline overruns are reported through `exit`.
ScenarioSummary run_scenario(const ScenarioSpec& spec);

/// Writes the SNR-gain series of a provider CSV: SVG when `out` ends in ".svg", otherwise
/// gnuplot-ready `iteration snr_gain_db` lines. Returns the number of points.
std::size_t plot_series(const std::filesystem::path& csv, const std::filesystem::path& out);

/// The gnuplot data text for `rows`.
std::string series_data(const std::vector<ProviderCsvRow>& rows);
std::string series_svg(const std::vector<ProviderCsvRow>& rows, const std::string& title);

}  // namespace ctxchan
