#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctxchan {

/// Seconds since the UNIX epoch.
using UnixSeconds = std::int64_t;

class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// True if `s` contains one of the reserved wire delimiters ('|', '/', '\n').
bool has_reserved_delimiter(std::string_view s) noexcept;

/// Typed, identified object that context data is attached to.
class EntityRef {
public:
    EntityRef(std::string type, std::string id);

    const std::string& type() const noexcept { return type_; }
    const std::string& id() const noexcept { return id_; }

    friend bool operator==(const EntityRef&, const EntityRef&) = default;
    friend auto operator<=>(const EntityRef&, const EntityRef&) = default;

private:
    std::string type_;
    std::string id_;
};

/// A named group of parameters with a validity window [t_begin, t_end].
class ScopeRecord {
public:
    using Parameter = std::pair<std::string, std::string>;

    ScopeRecord(std::string name, std::vector<Parameter> parameters, UnixSeconds t_begin,
                UnixSeconds t_end);

    const std::string& name() const noexcept { return name_; }
    const std::vector<Parameter>& parameters() const noexcept { return parameters_; }
    UnixSeconds t_begin() const noexcept { return t_begin_; }
    UnixSeconds t_end() const noexcept { return t_end_; }

    bool valid_at(UnixSeconds t) const noexcept { return t_begin_ <= t && t <= t_end_; }
    std::optional<std::string> parameter(std::string_view name) const;

    friend bool operator==(const ScopeRecord&, const ScopeRecord&) = default;

private:
    std::string name_;
    std::vector<Parameter> parameters_;
    UnixSeconds t_begin_;
    UnixSeconds t_end_;
};

// 2.4 GHz channel grid

inline constexpr int kMinChannel = 1;
inline constexpr int kMaxChannel = 13;
inline constexpr int kChannelBandwidthMhz = 20;

class ChannelId {
public:
    explicit ChannelId(int n);

    int number() const noexcept { return n_; }

    friend bool operator==(ChannelId, ChannelId) = default;
    friend auto operator<=>(ChannelId, ChannelId) = default;

private:
    int n_;
};

/// Carrier frequency in MHz: 2407 + 5n.
int carrier_frequency(ChannelId channel) noexcept;
int carrier_frequency(int n);

/// Allowed operating channels, including the reserved security channel.
class ChannelPlan {
public:
    /// {1, 5, 9, 13}, security channel 13.
    ChannelPlan();
    ChannelPlan(std::vector<ChannelId> allowed, ChannelId security_channel);

    const std::vector<ChannelId>& allowed() const noexcept { return allowed_; }
    ChannelId security_channel() const noexcept { return security_; }
    int bandwidth_mhz() const noexcept { return kChannelBandwidthMhz; }
    bool contains(ChannelId c) const noexcept;

    friend bool operator==(const ChannelPlan&, const ChannelPlan&) = default;

private:
    std::vector<ChannelId> allowed_;  // sorted ascending, unique
    ChannelId security_;
};

/// Nearest allowed channel within half a channel bandwidth of `frequency_mhz`.
/// Equidistant frequencies go to the lower channel. Nothing in range yields nullopt.
std::optional<ChannelId> channel_for_frequency(int frequency_mhz, const ChannelPlan& plan);

double dbm_to_mw(double dbm) noexcept;
/// Throws DomainError for mw <= 0.
double mw_to_dbm(double mw);

/// The per-update interference context a provider publishes.
struct InterferencePayload {
    int security_flag = 0;
    int channel_recommendation_mhz = 0;
    int channel_switch = 0;
    double interference_power_dbm = 0.0;
    double pos_x = 0.0;
    double pos_y = 0.0;

    friend bool operator==(const InterferencePayload&, const InterferencePayload&) = default;
};

}  // namespace ctxchan
