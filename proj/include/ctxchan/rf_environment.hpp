#pragma once

// Deterministic simulated 2.4 GHz radio environment.
//
// Received power follows a log-distance path-loss model:
//
//   P_rx = P_tx - L(1 m) - 10 * n * log10(max(d, 1 m)) + jitter
//
// with jitter uniform in [-J, +J] dB, drawn from a generator keyed by (seed, ssid, time), so
// every scan is a pure function of (environment, position, time).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxchan/core_model.hpp"

namespace ctxchan {

struct Position {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Position&, const Position&) = default;
};

double distance(Position a, Position b) noexcept;

struct ScanObservation {
    std::string ssid;
    int frequency_mhz = 0;
    double rssi_dbm = 0.0;

    friend bool operator==(const ScanObservation&, const ScanObservation&) = default;
};

inline constexpr double kMaxTxPowerDbm = 20.0;

struct TransmitterSpec {
    std::string ssid;
    ChannelId channel{1};
    double tx_power_dbm = kMaxTxPowerDbm;
    Position position{};
    std::optional<UnixSeconds> active_from;   // inclusive
    std::optional<UnixSeconds> active_until;  // exclusive

    bool active_at(UnixSeconds t) const noexcept;
};

struct EnvironmentSpec {
    std::vector<TransmitterSpec> transmitters;
    double path_loss_exponent = 2.0;
    double reference_loss_db_at_1m = 40.0;
    double noise_jitter_db = 0.0;
    std::uint64_t rng_seed = 0;
    double detection_floor_dbm = -95.0;

    /// Throws DomainError on duplicate SSIDs, tx power above the cap or exponent outside [1.6, 6].
    void validate() const;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, int line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Received power in dBm of `tx` at `at`, evaluated at time `now` (jitter key).
double received_power(const EnvironmentSpec& env, const TransmitterSpec& tx, Position at, UnixSeconds now);

/// One observation per transmitter active at `now` and received at or above the detection floor,
/// ordered by SSID.
std::vector<ScanObservation> scan(const EnvironmentSpec& env, Position at, UnixSeconds now);

/// Environment text format: one transmitter per line `ssid,channel,tx_power_dbm,x,y[,from,until]`
/// ('-' or empty leaves from/until open), optional `key = value` settings
/// (path_loss_exponent, reference_loss_db, noise_jitter_db, seed, detection_floor_dbm),
/// '#' comments.
EnvironmentSpec parse_environment(std::string_view text, const std::string& origin = "<env>");
EnvironmentSpec load_environment(const std::filesystem::path& path);

/// Scan lines in replay format `ssid,frequency_mhz,rssi_dbm`.
std::string format_scan(const std::vector<ScanObservation>& scan);
std::vector<ScanObservation> parse_scan(std::string_view text, const std::string& origin = "<scan>");

struct HiddenNodeScenario {
    EnvironmentSpec environment;
    std::string hidden_ssid;
    ChannelId hidden_channel{1};
    Position provider_near;  // detects the hidden transmitter
    Position provider_far;   // does not
};

/// Canned topology in which one transmitter is audible at one provider but below the detection
/// floor at the other.
HiddenNodeScenario hidden_node_scenario();

}  // namespace ctxchan
