#include "ctxchan/rf_environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ctxchan/text_config.hpp"
#include "ctxchan/wire_protocol.hpp"

namespace ctxchan {

namespace {

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

double jitter_db(const EnvironmentSpec& env, std::string_view ssid, UnixSeconds now) {
    if (env.noise_jitter_db <= 0.0) return 0.0;
    const std::uint64_t h = fnv1a(ssid);
    const auto t = static_cast<std::uint64_t>(now);
    std::seed_seq seq{static_cast<std::uint32_t>(env.rng_seed), static_cast<std::uint32_t>(env.rng_seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
    std::mt19937_64 gen(seq);
    std::uniform_real_distribution<double> dist(-env.noise_jitter_db, env.noise_jitter_db);
    return dist(gen);
}

double require_decimal(std::string_view s, const std::string& origin, int line, const char* what) {
    auto v = wire::parse_decimal(trim(s));
    if (!v) throw ParseError(origin, line, std::string("bad ") + what + " '" + std::string(s) + "'");
    return *v;
}

std::optional<UnixSeconds> optional_time(std::string_view s, const std::string& origin, int line) {
    s = trim(s);
    if (s.empty() || s == "-") return std::nullopt;
    auto v = wire::parse_integer(s);
    if (!v) throw ParseError(origin, line, "bad timestamp '" + std::string(s) + "'");
    return *v;
}

}  // namespace

double distance(Position a, Position b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

bool TransmitterSpec::active_at(UnixSeconds t) const noexcept {
    if (active_from && t < *active_from) return false;
    if (active_until && t >= *active_until) return false;
    return true;
}

void EnvironmentSpec::validate() const {
    if (path_loss_exponent < 1.6 || path_loss_exponent > 6.0)
        throw DomainError("path loss exponent must lie in [1.6, 6.0]");
    if (noise_jitter_db < 0.0) throw DomainError("noise jitter must be non-negative");
    std::set<std::string_view> ssids;
    for (const auto& tx : transmitters) {
        if (tx.ssid.empty() || tx.ssid.find_first_of(",\n") != std::string::npos)
            throw DomainError("invalid ssid '" + tx.ssid + "'");
        if (!ssids.insert(tx.ssid).second) throw DomainError("duplicate ssid '" + tx.ssid + "'");
        if (tx.tx_power_dbm > kMaxTxPowerDbm)
            throw DomainError("transmitter '" + tx.ssid + "' exceeds 20 dBm");
    }
}

double received_power(const EnvironmentSpec& env, const TransmitterSpec& tx, Position at, UnixSeconds now) {
    const double d = std::max(1.0, distance(tx.position, at));
    return tx.tx_power_dbm - env.reference_loss_db_at_1m - 10.0 * env.path_loss_exponent * std::log10(d) +
           jitter_db(env, tx.ssid, now);
}

std::vector<ScanObservation> scan(const EnvironmentSpec& env, Position at, UnixSeconds now) {
    std::vector<ScanObservation> out;
    for (const auto& tx : env.transmitters) {
        if (!tx.active_at(now)) continue;
        const double p = received_power(env, tx, at, now);
        if (p >= env.detection_floor_dbm) out.push_back({tx.ssid, carrier_frequency(tx.channel), p});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.ssid < b.ssid; });
    return out;
}

EnvironmentSpec parse_environment(std::string_view text, const std::string& origin) {
    EnvironmentSpec env;
    for_each_content_line(text, [&](std::string_view line, int lineno) {
        if (line.find('=') != std::string_view::npos) {
            auto [key, value] = split_key_value(line);
            if (key == "path_loss_exponent")
                env.path_loss_exponent = require_decimal(value, origin, lineno, "path_loss_exponent");
            else if (key == "reference_loss_db")
                env.reference_loss_db_at_1m = require_decimal(value, origin, lineno, "reference_loss_db");
            else if (key == "noise_jitter_db")
                env.noise_jitter_db = require_decimal(value, origin, lineno, "noise_jitter_db");
            else if (key == "detection_floor_dbm")
                env.detection_floor_dbm = require_decimal(value, origin, lineno, "detection_floor_dbm");
            else if (key == "seed") {
                auto v = wire::parse_integer(value);
                if (!v || *v < 0) throw ParseError(origin, lineno, "bad seed");
                env.rng_seed = static_cast<std::uint64_t>(*v);
            } else
                throw ParseError(origin, lineno, "unknown setting '" + std::string(key) + "'");
            return;
        }
        const auto f = wire::split(line, ',');
        if (f.size() != 5 && f.size() != 7)
            throw ParseError(origin, lineno, "expected ssid,channel,tx_power_dbm,x,y[,from,until]");
        TransmitterSpec tx;
        tx.ssid = std::string(trim(f[0]));
        auto ch = wire::parse_integer(trim(f[1]));
        if (!ch || *ch < kMinChannel || *ch > kMaxChannel)
            throw ParseError(origin, lineno, "bad channel '" + std::string(f[1]) + "'");
        tx.channel = ChannelId{static_cast<int>(*ch)};
        tx.tx_power_dbm = require_decimal(f[2], origin, lineno, "tx power");
        tx.position = {require_decimal(f[3], origin, lineno, "x"), require_decimal(f[4], origin, lineno, "y")};
        if (f.size() == 7) {
            tx.active_from = optional_time(f[5], origin, lineno);
            tx.active_until = optional_time(f[6], origin, lineno);
        }
        env.transmitters.push_back(std::move(tx));
    });
    try {
        env.validate();
    } catch (const DomainError& e) {
        throw ParseError(origin, 0, e.what());
    }
    return env;
}

EnvironmentSpec load_environment(const std::filesystem::path& path) {
    return parse_environment(read_text_file(path), path.string());
}

std::string format_scan(const std::vector<ScanObservation>& observations) {
    std::string out;
    for (const auto& o : observations)
        out += o.ssid + "," + std::to_string(o.frequency_mhz) + "," + wire::format_decimal(o.rssi_dbm) + "\n";
    return out;
}

std::vector<ScanObservation> parse_scan(std::string_view text, const std::string& origin) {
    std::vector<ScanObservation> out;
    for_each_content_line(text, [&](std::string_view line, int lineno) {
        const auto f = wire::split(line, ',');
        if (f.size() != 3) throw ParseError(origin, lineno, "expected ssid,frequency_mhz,rssi_dbm");
        auto mhz = wire::parse_integer(trim(f[1]));
        if (!mhz || *mhz < 2400 || *mhz > 2500)
            throw ParseError(origin, lineno, "frequency outside 2400..2500 MHz");
        out.push_back({std::string(trim(f[0])), static_cast<int>(*mhz), require_decimal(f[2], origin, lineno, "rssi")});
    });
    return out;
}

HiddenNodeScenario hidden_node_scenario() {
    HiddenNodeScenario s;
    s.environment.path_loss_exponent = 3.0;
    s.environment.transmitters = {
        {"shared-a", ChannelId{1}, 20.0, {200.0, 0.0}, std::nullopt, std::nullopt},
        {"shared-b", ChannelId{13}, 20.0, {200.0, 20.0}, std::nullopt, std::nullopt},
        {"hidden", ChannelId{5}, 20.0, {420.0, 0.0}, std::nullopt, std::nullopt},
    };
    s.hidden_ssid = "hidden";
    s.hidden_channel = ChannelId{5};
    s.provider_near = {400.0, 0.0};
    s.provider_far = {0.0, 0.0};
    return s;
}

}  // namespace ctxchan
