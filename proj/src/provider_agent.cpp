#include "ctxchan/provider_agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "ctxchan/text_config.hpp"
#include "ctxchan/wire_protocol.hpp"

namespace ctxchan {

// ---------------------------------------------------------------------------------------------
// Configuration

void ProviderConfig::validate() const {
    if (provider_id.empty() || provider_id.find_first_of("|\n\r") != std::string::npos)
        throw DomainError("invalid provider_id");
    if (scope.empty() || has_reserved_delimiter(scope) || scope.find(',') != std::string::npos)
        throw DomainError("invalid scope");
    if (!(validity_min_s > 0.0 && validity_min_s <= validity_initial_s && validity_initial_s <= validity_max_s))
        throw DomainError("validity bounds must satisfy 0 < min <= initial <= max");
    if (!(validity_grow > 1.0)) throw DomainError("validity_grow must be > 1");
    if (!(validity_shrink > 0.0 && validity_shrink < 1.0)) throw DomainError("validity_shrink must be in (0, 1)");
    if (!(scan_interval_s > 0.0)) throw DomainError("scan_interval_s must be positive");
    if (!(hysteresis_db >= 0.0)) throw DomainError("hysteresis_db must be >= 0");
    if (max_retries < 0) throw DomainError("max_retries must be >= 0");
    if (candidate_channels(*this).empty()) throw DomainError("empty candidate channel set");
    if (associated_channel) {
        const auto c = candidate_channels(*this);
        if (std::find(c.begin(), c.end(), *associated_channel) == c.end())
            throw DomainError("associated_channel is not a candidate channel");
    }
}

namespace {

double decimal_value(std::string_view v, const std::string& origin, int line, std::string_view key) {
    auto d = wire::parse_decimal(v);
    if (!d) throw ParseError(origin, line, "bad decimal for " + std::string(key) + ": '" + std::string(v) + "'");
    return *d;
}

int integer_value(std::string_view v, const std::string& origin, int line, std::string_view key) {
    auto d = wire::parse_integer(v);
    if (!d || *d < std::numeric_limits<int>::min() || *d > std::numeric_limits<int>::max())
        throw ParseError(origin, line, "bad integer for " + std::string(key) + ": '" + std::string(v) + "'");
    return static_cast<int>(*d);
}

ChannelId channel_value(std::string_view v, const std::string& origin, int line, std::string_view key) {
    const int n = integer_value(v, origin, line, key);
    if (n < kMinChannel || n > kMaxChannel)
        throw ParseError(origin, line, std::string(key) + " outside 1..13");
    return ChannelId{n};
}

}  // namespace

ProviderConfig parse_provider_config(std::string_view text, const std::string& origin) {
    ProviderConfig cfg;
    std::string entity_type = cfg.entity.type();
    std::string entity_id = cfg.entity.id();
    std::vector<ChannelId> allowed = cfg.channel_plan.allowed();
    ChannelId security = cfg.channel_plan.security_channel();

    for_each_content_line(text, [&](std::string_view line, int n) {
        auto [key, value] = split_key_value(line);
        if (line.find('=') == std::string_view::npos) throw ParseError(origin, n, "expected key = value");
        if (key == "provider_id") cfg.provider_id = std::string(value);
        else if (key == "entity_type") entity_type = std::string(value);
        else if (key == "entity_id") entity_id = std::string(value);
        else if (key == "scope") cfg.scope = std::string(value);
        else if (key == "own_ssid") cfg.own_ssid = std::string(value);
        else if (key == "broker") {
            try {
                cfg.broker = net::parse_endpoint(value);
            } catch (const std::invalid_argument& e) {
                throw ParseError(origin, n, e.what());
            }
        } else if (key == "safety_critical") {
            if (!parse_bool(value, cfg.safety_critical)) throw ParseError(origin, n, "bad boolean for safety_critical");
        } else if (key == "follow_recommendation") {
            if (!parse_bool(value, cfg.follow_recommendation))
                throw ParseError(origin, n, "bad boolean for follow_recommendation");
        } else if (key == "allowed_channels") {
            allowed.clear();
            for (auto item : wire::split(value, ',')) allowed.push_back(channel_value(trim(item), origin, n, key));
        } else if (key == "security_channel") security = channel_value(value, origin, n, key);
        else if (key == "associated_channel") {
            if (value == "none" || value.empty()) cfg.associated_channel.reset();
            else cfg.associated_channel = channel_value(value, origin, n, key);
        } else if (key == "validity_initial_s") cfg.validity_initial_s = decimal_value(value, origin, n, key);
        else if (key == "validity_min_s") cfg.validity_min_s = decimal_value(value, origin, n, key);
        else if (key == "validity_max_s") cfg.validity_max_s = decimal_value(value, origin, n, key);
        else if (key == "validity_grow") cfg.validity_grow = decimal_value(value, origin, n, key);
        else if (key == "validity_shrink") cfg.validity_shrink = decimal_value(value, origin, n, key);
        else if (key == "scan_interval_s") cfg.scan_interval_s = decimal_value(value, origin, n, key);
        else if (key == "hysteresis_db") cfg.hysteresis_db = decimal_value(value, origin, n, key);
        else if (key == "empty_channel_floor_dbm") cfg.empty_channel_floor_dbm = decimal_value(value, origin, n, key);
        else if (key == "max_retries") cfg.max_retries = integer_value(value, origin, n, key);
        else if (key == "position") {
            const auto xy = wire::split(value, ',');
            if (xy.size() != 2) throw ParseError(origin, n, "position must be x,y");
            cfg.position = {decimal_value(trim(xy[0]), origin, n, key), decimal_value(trim(xy[1]), origin, n, key)};
        } else
            throw ParseError(origin, n, "unknown key '" + std::string(key) + "'");
    });

    try {
        cfg.entity = EntityRef{entity_type, entity_id};
        cfg.channel_plan = ChannelPlan{allowed, security};
        cfg.validate();
    } catch (const DomainError& e) {
        throw ParseError(origin, 0, e.what());
    }
    return cfg;
}

ProviderConfig load_provider_config(const std::filesystem::path& path) {
    return parse_provider_config(read_text_file(path), path.string());
}

std::vector<ChannelId> candidate_channels(const ProviderConfig& cfg) {
    std::vector<ChannelId> out;
    for (ChannelId c : cfg.channel_plan.allowed())
        if (cfg.safety_critical || c != cfg.channel_plan.security_channel()) out.push_back(c);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Link budget

Snr snr_ideal(const LinkBudget& lb) {
    for (double v : {lb.gain_tx, lb.gain_rx, lb.tx_power_w, lb.boltzmann, lb.noise_temperature_k,
                     lb.bandwidth_hz, lb.free_field_absorption})
        if (!(v > 0.0)) throw DomainError("link budget factors must be positive");
    const double ratio = lb.gain_tx * lb.gain_rx * lb.tx_power_w /
                         (lb.boltzmann * lb.noise_temperature_k * lb.bandwidth_hz * lb.free_field_absorption);
    return {ratio, 10.0 * std::log10(ratio)};
}

Snr snr_effective(const LinkBudget& lb) {
    if (!(lb.multipath_factor > 0.0 && lb.neighbor_factor > 0.0))
        throw DomainError("interference factors must be positive");
    const double ratio = snr_ideal(lb).ratio / (lb.multipath_factor * lb.neighbor_factor);
    return {ratio, 10.0 * std::log10(ratio)};
}

// ---------------------------------------------------------------------------------------------
// Channel analysis

ChannelReport analyze_interference(std::span<const ScanObservation> scans, std::string_view own_ssid,
                                   ChannelId current_channel, const ProviderConfig& cfg) {
    const auto candidates = candidate_channels(cfg);
    if (candidates.empty()) throw DomainError("empty candidate channel set");
    if (std::find(candidates.begin(), candidates.end(), current_channel) == candidates.end())
        throw DomainError("current channel is not a candidate");

    std::map<ChannelId, double> sum_mw;
    ChannelReport report;
    report.current_channel = current_channel;
    for (ChannelId c : cfg.channel_plan.allowed()) {
        sum_mw[c] = 0.0;
        report.observation_count[c] = 0;
    }
    for (const auto& o : scans) {
        if (o.ssid == own_ssid) {
            if (!report.current_rssi_dbm) report.current_rssi_dbm = o.rssi_dbm;
            continue;
        }
        const auto channel = channel_for_frequency(o.frequency_mhz, cfg.channel_plan);
        if (!channel) continue;
        sum_mw[*channel] += dbm_to_mw(o.rssi_dbm);
        ++report.observation_count[*channel];
    }
    for (const auto& [c, sum] : sum_mw) {
        const int n = report.observation_count[c];
        report.per_channel_mean_dbm[c] = n == 0 ? cfg.empty_channel_floor_dbm : mw_to_dbm(sum / n);
    }

    ChannelId best = candidates.front();
    for (ChannelId c : candidates)
        if (report.mean_dbm(c) < report.mean_dbm(best)) best = c;
    if (report.mean_dbm(current_channel) == report.mean_dbm(best)) best = current_channel;

    report.recommended = best;
    report.recommended_mhz = carrier_frequency(best);
    report.switch_flag = best != current_channel &&
                                 report.mean_dbm(best) < report.mean_dbm(current_channel) - cfg.hysteresis_db
                             ? 1
                             : 0;
    return report;
}

ChannelId initial_radio_check(std::span<const ScanObservation> scans, const ProviderConfig& cfg) {
    const auto candidates = candidate_channels(cfg);
    if (candidates.empty()) throw DomainError("empty candidate channel set");
    return analyze_interference(scans, cfg.own_ssid, candidates.front(), cfg).recommended;
}

double adapt_validity(double current_s, bool switched, const ProviderConfig& cfg) {
    const double next = current_s * (switched ? cfg.validity_shrink : cfg.validity_grow);
    return std::clamp(next, cfg.validity_min_s, cfg.validity_max_s);
}

// ---------------------------------------------------------------------------------------------
// Scan sources and clocks

std::vector<ScanObservation> SimulatedScanSource::scan(UnixSeconds now) { return ctxchan::scan(env_, at_, now); }

ReplayScanSource::ReplayScanSource(std::vector<std::vector<ScanObservation>> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) blocks_.emplace_back();
}

ReplayScanSource ReplayScanSource::parse(std::string_view text, const std::string& origin) {
    std::vector<std::vector<ScanObservation>> blocks;
    std::string current;
    int first_line = 1;
    int lineno = 0;
    auto flush = [&] {
        if (trim(current).empty()) return;
        // Re-number errors relative to the whole file.
        try {
            blocks.push_back(parse_scan(current, origin));
        } catch (const ParseError& e) {
            throw ParseError(origin, first_line + e.line() - 1, "bad replay line");
        }
        current.clear();
    };
    while (!text.empty()) {
        ++lineno;
        const auto nl = text.find('\n');
        const auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (trim(line).empty()) {
            flush();
            current.clear();
            first_line = lineno + 1;
            continue;
        }
        current.append(line);
        current += '\n';
    }
    flush();
    return ReplayScanSource(std::move(blocks));
}

ReplayScanSource ReplayScanSource::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

std::vector<ScanObservation> ReplayScanSource::scan(UnixSeconds) {
    auto out = blocks_[next_];
    next_ = (next_ + 1) % blocks_.size();
    return out;
}

UnixSeconds SystemClock::now() const {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::chrono::nanoseconds SystemClock::real_time_until(UnixSeconds t) const {
    const auto target = std::chrono::system_clock::time_point(std::chrono::seconds(t));
    return std::max(std::chrono::nanoseconds::zero(),
                    std::chrono::duration_cast<std::chrono::nanoseconds>(target - std::chrono::system_clock::now()));
}

ScaledClock::ScaledClock(UnixSeconds epoch, double scale)
    : epoch_(epoch), scale_(scale), start_(std::chrono::steady_clock::now()) {
    if (!(scale > 0.0)) throw DomainError("clock scale must be positive");
}

UnixSeconds ScaledClock::now() const {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    return epoch_ + static_cast<UnixSeconds>(std::floor(elapsed.count() * scale_));
}

std::chrono::nanoseconds ScaledClock::real_time_until(UnixSeconds t) const {
    const auto target = start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double>(static_cast<double>(t - epoch_) / scale_));
    return std::max(std::chrono::nanoseconds::zero(), std::chrono::duration_cast<std::chrono::nanoseconds>(
                                                          target - std::chrono::steady_clock::now()));
}

// ---------------------------------------------------------------------------------------------
// Provider process

const char* to_string(ProviderExit e) noexcept {
    switch (e) {
        case ProviderExit::Completed: return "completed";
        case ProviderExit::ConfigError: return "config error";
        case ProviderExit::PingFailed: return "broker ping failed";
        case ProviderExit::AdvertisementRejected: return "advertisement rejected";
        case ProviderExit::ConnectionLost: return "broker connection lost";
    }
    return "unknown";
}

std::string advertisement_line(const ProviderConfig& cfg, UnixSeconds now) {
    wire::ContextMessage m;
    m.flag = wire::Flag::Advertisement;
    m.provider_id = cfg.provider_id;
    m.entity_type = cfg.entity.type();
    m.entity_id = cfg.entity.id();
    m.scope = cfg.scope;
    m.ts_begin = now;
    m.ts_end = now;
    m.payload = cfg.scope + ":security,recommendation,switch,power,x,y";
    return wire::encode_message(m);
}

namespace {

/// Request/reply connection to the broker that answers broker-initiated PINGs in between.
class BrokerLink {
public:
    BrokerLink(net::LineConnection conn, std::chrono::milliseconds reply_timeout)
        : conn_(std::move(conn)), reply_timeout_(reply_timeout) {}

    /// Throws net::NetError on timeout or closed connection.
    wire::BrokerReply request(std::string_view line) {
        conn_.send(line);
        const auto deadline = std::chrono::steady_clock::now() + reply_timeout_;
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw net::NetError("broker reply timed out");
            auto got = conn_.read_line(left);
            if (!got) throw net::NetError("broker reply timed out");
            if (*got == "PING") {
                answer_ping();
                continue;
            }
            if (auto reply = wire::decode_reply(*got)) return *reply;
            // Anything else (e.g. a notification) is not ours to handle.
        }
    }

    /// Serves incoming PINGs for up to `budget`.
    void service(std::chrono::nanoseconds budget) {
        const auto deadline = std::chrono::steady_clock::now() + budget;
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return;
            auto got = conn_.read_line(left);
            if (got && *got == "PING") answer_ping();
        }
    }

    bool take_refresh_request() noexcept { return std::exchange(refresh_requested_, false); }

private:
    void answer_ping() {
        conn_.send(wire::encode_reply(wire::BrokerReply::pong()));
        refresh_requested_ = true;
    }

    net::LineConnection conn_;
    std::chrono::milliseconds reply_timeout_;
    bool refresh_requested_ = false;
};

void log_line(std::ostream* log, const ProviderConfig& cfg, const std::string& msg) {
    if (log) *log << "[" << cfg.provider_id << "] " << msg << '\n';
}

}  // namespace

ProviderResult run_provider(const ProviderConfig& cfg, const ProviderRun& run) {
    ProviderResult result;
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        log_line(run.log, cfg, std::string("invalid configuration: ") + e.what());
        result.exit = ProviderExit::ConfigError;
        return result;
    }
    if (!run.scans || !run.clock) {
        result.exit = ProviderExit::ConfigError;
        return result;
    }
    const Clock& clock = *run.clock;
    auto stopped = [&] { return run.stop && run.stop->load(); };

    // Availability check: one PING, one attempt.
    std::optional<BrokerLink> link;
    try {
        auto conn = net::LineConnection::connect(cfg.broker, run.ping_timeout);
        conn.send(wire::ping());
        auto reply = conn.read_line(run.ping_timeout);
        if (!reply || *reply != "PONG") throw net::NetError("no PONG");
        link.emplace(std::move(conn), run.reply_timeout);
    } catch (const net::NetError& e) {
        log_line(run.log, cfg, "broker " + cfg.broker.to_string() + " unreachable (" + e.what() + "), exiting");
        result.exit = ProviderExit::PingFailed;
        return result;
    }

    auto advertise = [&]() -> bool {
        const auto reply = link->request(advertisement_line(cfg, clock.now()));
        if (reply.kind != wire::BrokerReply::Kind::Ack) {
            log_line(run.log, cfg, "advertisement rejected: " + reply.reason.value_or(""));
            return false;
        }
        return true;
    };
    try {
        if (!advertise()) {
            result.exit = ProviderExit::AdvertisementRejected;
            return result;
        }
    } catch (const net::NetError& e) {
        log_line(run.log, cfg, std::string("advertisement failed: ") + e.what());
        result.exit = ProviderExit::ConnectionLost;
        return result;
    }

    auto reconnect = [&]() -> bool {
        for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
            log_line(run.log, cfg, "reconnecting (attempt " + std::to_string(attempt) + ")");
            try {
                link.emplace(net::LineConnection::connect(cfg.broker, run.ping_timeout), run.reply_timeout);
                if (advertise()) return true;
            } catch (const net::NetError&) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
        }
        return false;
    };

    const UnixSeconds t0 = run.start_time.value_or(clock.now());
    const ChannelId initial = initial_radio_check(run.scans->scan(t0), cfg);
    ChannelId current = cfg.associated_channel.value_or(initial);
    log_line(run.log, cfg,
             "initial radio check recommends channel " + std::to_string(initial.number()) + ", operating on " +
                 std::to_string(current.number()));
    result.final_channel = current;

    if (run.csv) *run.csv << kProviderCsvHeader << '\n';
    double validity = cfg.validity_initial_s;
    std::optional<wire::ContextMessage> last_update;

    // Re-sends the last report with fresh timestamps once the broker has asked for it and the
    // previous validity window has lapsed.
    auto serve_refresh = [&] {
        if (!link->take_refresh_request() || !last_update) return;
        const UnixSeconds now = clock.now();
        if (now <= last_update->ts_end) return;
        auto m = *last_update;
        m.ts_begin = now;
        m.ts_end = now + std::llround(validity);
        link->request(wire::encode_message(m));
        last_update = m;
    };

    for (int i = 1; !run.iterations || i <= *run.iterations; ++i) {
        const UnixSeconds t = t0 + std::llround(static_cast<double>(i) * cfg.scan_interval_s);
        try {
            for (;;) {
                if (stopped()) return result;
                const auto left = clock.real_time_until(t);
                if (left <= std::chrono::nanoseconds::zero() && clock.now() >= t) break;
                link->service(std::min<std::chrono::nanoseconds>(
                    std::max(left, std::chrono::nanoseconds(std::chrono::milliseconds(1))),
                    std::chrono::milliseconds(50)));
                serve_refresh();
            }
        } catch (const net::NetError& e) {
            log_line(run.log, cfg, std::string("broker connection lost: ") + e.what());
            if (!reconnect()) {
                result.exit = ProviderExit::ConnectionLost;
                return result;
            }
        }

        const auto observations = run.scans->scan(t);
        const ChannelReport report = analyze_interference(observations, cfg.own_ssid, current, cfg);

        InterferencePayload payload;
        payload.security_flag = cfg.safety_critical ? 1 : 0;
        payload.channel_recommendation_mhz = report.recommended_mhz;
        payload.channel_switch = report.switch_flag;
        payload.interference_power_dbm = report.mean_dbm(report.recommended);
        payload.pos_x = cfg.position.x;
        payload.pos_y = cfg.position.y;

        wire::ContextMessage m;
        m.flag = wire::Flag::Update;
        m.provider_id = cfg.provider_id;
        m.entity_type = cfg.entity.type();
        m.entity_id = cfg.entity.id();
        m.scope = cfg.scope;
        m.ts_begin = t;
        m.ts_end = t + std::llround(validity);
        m.payload = wire::encode_payload(payload);
        const std::string line = wire::encode_message(m);

        bool delivered = false;
        for (int attempt = 0; !delivered; ++attempt) {
            try {
                ++result.updates_sent;
                const auto reply = link->request(line);
                delivered = true;
                if (reply.kind == wire::BrokerReply::Kind::Ack)
                    ++result.updates_acked;
                else
                    log_line(run.log, cfg, "update " + std::to_string(i) + " rejected: " + reply.reason.value_or(""));
            } catch (const net::NetError& e) {
                log_line(run.log, cfg, std::string("broker connection lost: ") + e.what());
                if (attempt >= 1 || !reconnect()) {
                    result.exit = ProviderExit::ConnectionLost;
                    return result;
                }
            }
        }
        last_update = m;

        if (run.csv) {
            *run.csv << i << ',' << t << ',' << current.number() << ',' << report.recommended.number() << ','
                     << report.switch_flag << ',' << wire::format_decimal(report.mean_dbm(current)) << ','
                     << wire::format_decimal(report.mean_dbm(report.recommended)) << ','
                     << wire::format_decimal(report.snr_gain_db()) << ',' << wire::format_decimal(validity) << '\n';
            run.csv->flush();
        }

        validity = adapt_validity(validity, report.switch_flag == 1, cfg);
        if (report.switch_flag == 1 && cfg.follow_recommendation) {
            log_line(run.log, cfg,
                     "switching " + std::to_string(current.number()) + " -> " +
                         std::to_string(report.recommended.number()));
            current = report.recommended;
        }
        result.final_channel = current;
    }
    return result;
}

}  // namespace ctxchan
