#include "ctxchan/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

namespace ctxchan {

bool has_reserved_delimiter(std::string_view s) noexcept {
    return s.find_first_of("|/\n") != std::string_view::npos;
}

EntityRef::EntityRef(std::string type, std::string id) : type_(std::move(type)), id_(std::move(id)) {
    if (type_.empty() || id_.empty()) throw DomainError("entity type and id must be non-empty");
    if (has_reserved_delimiter(type_) || has_reserved_delimiter(id_))
        throw DomainError("entity contains a reserved delimiter");
}

ScopeRecord::ScopeRecord(std::string name, std::vector<Parameter> parameters, UnixSeconds t_begin,
                         UnixSeconds t_end)
    : name_(std::move(name)), parameters_(std::move(parameters)), t_begin_(t_begin), t_end_(t_end) {
    if (name_.empty()) throw DomainError("scope name must be non-empty");
    if (has_reserved_delimiter(name_)) throw DomainError("scope name contains a reserved delimiter");
    if (t_begin_ > t_end_) throw DomainError("scope t_begin after t_end");
    std::set<std::string_view> seen;
    for (const auto& [key, value] : parameters_) {
        if (key.empty() || has_reserved_delimiter(key))
            throw DomainError("invalid parameter name '" + key + "'");
        if (value.find_first_of("|\n") != std::string::npos)
            throw DomainError("parameter value contains a reserved delimiter");
        if (!seen.insert(key).second) throw DomainError("duplicate parameter '" + key + "'");
    }
}

std::optional<std::string> ScopeRecord::parameter(std::string_view name) const {
    for (const auto& [key, value] : parameters_)
        if (key == name) return value;
    return std::nullopt;
}

ChannelId::ChannelId(int n) : n_(n) {
    if (n < kMinChannel || n > kMaxChannel)
        throw DomainError("channel " + std::to_string(n) + " outside 1..13");
}

int carrier_frequency(ChannelId channel) noexcept { return 2407 + 5 * channel.number(); }

int carrier_frequency(int n) { return carrier_frequency(ChannelId{n}); }

ChannelPlan::ChannelPlan()
    : ChannelPlan({ChannelId{1}, ChannelId{5}, ChannelId{9}, ChannelId{13}}, ChannelId{13}) {}

ChannelPlan::ChannelPlan(std::vector<ChannelId> allowed, ChannelId security_channel)
    : allowed_(std::move(allowed)), security_(security_channel) {
    std::sort(allowed_.begin(), allowed_.end());
    allowed_.erase(std::unique(allowed_.begin(), allowed_.end()), allowed_.end());
    if (allowed_.size() < 2) throw DomainError("channel plan needs at least two channels");
    if (!contains(security_)) throw DomainError("security channel not in allowed set");
}

bool ChannelPlan::contains(ChannelId c) const noexcept {
    return std::binary_search(allowed_.begin(), allowed_.end(), c);
}

std::optional<ChannelId> channel_for_frequency(int frequency_mhz, const ChannelPlan& plan) {
    const int window = plan.bandwidth_mhz() / 2;
    std::optional<ChannelId> best;
    int best_distance = window + 1;
    for (ChannelId c : plan.allowed()) {
        const int d = std::abs(frequency_mhz - carrier_frequency(c));
        if (d < best_distance) {
            best = c;
            best_distance = d;
        }
    }
    return best;
}

double dbm_to_mw(double dbm) noexcept { return std::pow(10.0, dbm / 10.0); }

double mw_to_dbm(double mw) {
    if (!(mw > 0.0)) throw DomainError("power in mW must be positive");
    return 10.0 * std::log10(mw);
}

}  // namespace ctxchan
