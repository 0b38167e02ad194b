#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ctxchan/core_model.hpp"
#include "ctxchan/net.hpp"
#include "ctxchan/rf_environment.hpp"

namespace ctxchan {

struct ProviderConfig {
    std::string provider_id = "provider1";
    EntityRef entity{"sensor", "noisesensor1"};
    std::string scope = "interference";
    std::string own_ssid;
    net::Endpoint broker{};
    bool safety_critical = false;
    ChannelPlan channel_plan{};
    double validity_initial_s = 60.0;
    double validity_min_s = 10.0;
    double validity_max_s = 600.0;
    double validity_grow = 1.5;
    double validity_shrink = 0.5;
    double scan_interval_s = 5.0;
    double hysteresis_db = 0.0;
    Position position{};
    double empty_channel_floor_dbm = -100.0;
    /// Channel of an already established AP link. Unset: adopt the initial radio check result.
    std::optional<ChannelId> associated_channel;
    /// Move the local link to the recommendation whenever the switch flag is raised.
    bool follow_recommendation = true;
    int max_retries = 3;

    /// Throws DomainError.
    void validate() const;
};

/// `key = value` lines, '#' comments. Throws ParseError with file and line.
ProviderConfig parse_provider_config(std::string_view text, const std::string& origin = "<config>");
ProviderConfig load_provider_config(const std::filesystem::path& path);

/// Allowed channels, minus the security channel unless the provider is safety critical.
std::vector<ChannelId> candidate_channels(const ProviderConfig& cfg);

// Link budget

inline constexpr double kBoltzmann = 1.380649e-23;

struct LinkBudget {
    double gain_tx = 1.0;
    double gain_rx = 1.0;
    double tx_power_w = 0.100;
    double boltzmann = kBoltzmann;
    double noise_temperature_k = 290.0;
    double bandwidth_hz = 20e6;
    double free_field_absorption = 1.0;
    double multipath_factor = 1.0;
    double neighbor_factor = 1.0;
};

struct Snr {
    double ratio;
    double db;
};

/// G_t * G_r * P_t / (k * T * B * F). Throws DomainError if any factor is non-positive.
Snr snr_ideal(const LinkBudget& lb);
/// snr_ideal / (I_M * I_N).
Snr snr_effective(const LinkBudget& lb);

struct ChannelReport {
    std::map<ChannelId, double> per_channel_mean_dbm;  // every allowed channel
    std::map<ChannelId, int> observation_count;
    ChannelId recommended{1};
    int recommended_mhz = 0;
    int switch_flag = 0;
    ChannelId current_channel{1};
    std::optional<double> current_rssi_dbm;  // own SSID, if it was seen

    double mean_dbm(ChannelId c) const { return per_channel_mean_dbm.at(c); }
    /// mean(current) - mean(recommended), dB.
    double snr_gain_db() const { return mean_dbm(current_channel) - mean_dbm(recommended); }
};

/// Per-channel interference analysis.
///
/// Observations of `own_ssid` and observations outside every allowed channel's window are
/// dropped; the remaining powers are averaged per channel in mW and reported in dBm. Channels
/// nobody transmits on report `cfg.empty_channel_floor_dbm`. The recommendation is the candidate
/// with the lowest mean; ties go to the current channel, then to the lowest channel number.
ChannelReport analyze_interference(std::span<const ScanObservation> scans, std::string_view own_ssid,
                                   ChannelId current_channel, const ProviderConfig& cfg);

/// First channel assignment: the recommendation of one analysis from the first candidate.
ChannelId initial_radio_check(std::span<const ScanObservation> scans, const ProviderConfig& cfg);

/// Shrinks the validity period after a switch, grows it otherwise; clamped to [min, max].
double adapt_validity(double current_s, bool switched, const ProviderConfig& cfg);

// Runtime plumbing

class ScanSource {
public:
    virtual ~ScanSource() = default;
    virtual std::vector<ScanObservation> scan(UnixSeconds now) = 0;
};

class SimulatedScanSource final : public ScanSource {
public:
    SimulatedScanSource(EnvironmentSpec env, Position at) : env_(std::move(env)), at_(at) {}
    std::vector<ScanObservation> scan(UnixSeconds now) override;

private:
    EnvironmentSpec env_;
    Position at_;
};

/// Replays scan blocks (blank-line separated `ssid,frequency_mhz,rssi_dbm` lines), cycling.
class ReplayScanSource final : public ScanSource {
public:
    explicit ReplayScanSource(std::vector<std::vector<ScanObservation>> blocks);
    static ReplayScanSource parse(std::string_view text, const std::string& origin = "<replay>");
    static ReplayScanSource load(const std::filesystem::path& path);
    std::vector<ScanObservation> scan(UnixSeconds now) override;

private:
    std::vector<std::vector<ScanObservation>> blocks_;
    std::size_t next_ = 0;
};

class Clock {
public:
    virtual ~Clock() = default;
    virtual UnixSeconds now() const = 0;
    /// Real time remaining until the clock reads `t` (zero if already reached).
    virtual std::chrono::nanoseconds real_time_until(UnixSeconds t) const = 0;
};

class SystemClock final : public Clock {
public:
    UnixSeconds now() const override;
    std::chrono::nanoseconds real_time_until(UnixSeconds t) const override;
};

/// epoch + elapsed_real * scale; lets simulated scenarios run faster than real time.
class ScaledClock final : public Clock {
public:
    ScaledClock(UnixSeconds epoch, double scale);
    UnixSeconds now() const override;
    std::chrono::nanoseconds real_time_until(UnixSeconds t) const override;

private:
    UnixSeconds epoch_;
    double scale_;
    std::chrono::steady_clock::time_point start_;
};

enum class ProviderExit : int {
    Completed = 0,
    ConfigError = 1,
    PingFailed = 3,
    AdvertisementRejected = 4,
    ConnectionLost = 5,
};

const char* to_string(ProviderExit e) noexcept;

inline constexpr std::string_view kProviderCsvHeader =
    "iteration,timestamp,current_channel,recommended_channel,switch_flag,mean_current_dbm,"
    "mean_recommended_dbm,snr_gain_db,validity_s";

struct ProviderRun {
    ScanSource* scans = nullptr;
    const Clock* clock = nullptr;
    std::ostream* csv = nullptr;  // header + one row per update
    std::ostream* log = nullptr;
    std::optional<int> iterations;            // unset: run until stopped
    std::optional<UnixSeconds> start_time;    // logical time of the initial radio check
    std::chrono::milliseconds ping_timeout{2000};
    std::chrono::milliseconds reply_timeout{5000};
    const std::atomic<bool>* stop = nullptr;
};

struct ProviderResult {
    ProviderExit exit = ProviderExit::Completed;
    int updates_sent = 0;
    int updates_acked = 0;
    std::optional<ChannelId> final_channel;
};

/// The provider process: ping, advertise, initial radio check, then the scan/analyze/update loop.
ProviderResult run_provider(const ProviderConfig& cfg, const ProviderRun& run);

/// Advertisement message for `cfg` (scope plus its parameter names).
std::string advertisement_line(const ProviderConfig& cfg, UnixSeconds now);

}  // namespace ctxchan
