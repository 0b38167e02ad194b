#include "ctxchan/broker.hpp"

#include <algorithm>
#include <set>

namespace ctxchan {

using wire::BrokerReply;
using wire::ContextMessage;

std::string CacheKey::to_string() const { return entity.type() + "/" + entity.id() + "/" + scope; }

const ScopeDeclaration* RegistryEntry::find_scope(std::string_view name) const {
    for (const auto& s : scopes)
        if (s.name == name) return &s;
    return nullptr;
}

std::optional<std::vector<ScopeDeclaration>> parse_advertised_scopes(std::string_view scope_field,
                                                                     std::string_view payload) {
    if (scope_field.empty()) return std::nullopt;
    std::vector<ScopeDeclaration> scopes;
    std::set<std::string_view> names;
    for (auto name : wire::split(scope_field, ',')) {
        if (name.empty() || has_reserved_delimiter(name) || !names.insert(name).second) return std::nullopt;
        scopes.push_back({std::string(name), {}});
    }
    if (payload.empty()) return scopes;

    std::set<std::string_view> declared;
    for (auto decl : wire::split(payload, ';')) {
        const auto colon = decl.find(':');
        if (colon == std::string_view::npos) return std::nullopt;
        const auto name = decl.substr(0, colon);
        auto it = std::find_if(scopes.begin(), scopes.end(), [&](const auto& s) { return s.name == name; });
        if (it == scopes.end() || !declared.insert(name).second) return std::nullopt;
        std::set<std::string_view> params;
        for (auto p : wire::split(decl.substr(colon + 1), ',')) {
            if (p.empty() || has_reserved_delimiter(p) || !params.insert(p).second) return std::nullopt;
            it->parameters.emplace_back(p);
        }
    }
    return scopes;
}

Broker::Broker(BrokerConfig config, EventSink events) : config_(config), events_(std::move(events)) {}

void Broker::log(UnixSeconds now, const std::string& event) const {
    if (events_) events_(std::to_string(now) + " " + event);
}

BrokerReply Broker::handle_advertisement(const ContextMessage& m, UnixSeconds now, LineSink link) {
    if (m.flag != wire::Flag::Advertisement) return BrokerReply::nack("not an advertisement");
    auto scopes = parse_advertised_scopes(m.scope, m.payload);
    std::optional<EntityRef> entity;
    try {
        entity.emplace(m.entity_type, m.entity_id);
    } catch (const DomainError&) {
    }
    std::lock_guard lock(mutex_);
    if (!scopes || !entity) {
        log(now, "ADVERTISE_NACK provider=" + m.provider_id);
        return BrokerReply::nack("bad advertisement");
    }

    auto it = providers_.find(m.provider_id);
    const bool fresh = it == providers_.end();
    RegistryEntry entry{m.provider_id, *entity, std::move(*scopes), now, now};
    if (!fresh) {
        entry.registered_at = it->second.entry.registered_at;
        // Drop cached scopes the new advertisement no longer covers.
        for (auto c = cache_.begin(); c != cache_.end();) {
            const bool stale_owner = c->second.source_provider == m.provider_id &&
                                     (c->first.entity != entry.entity || !entry.find_scope(c->first.scope));
            if (stale_owner) {
                log(now, "EVICT key=" + c->first.to_string() + " reason=readvertised");
                c = cache_.erase(c);
            } else {
                ++c;
            }
        }
    }
    std::string scope_list;
    for (const auto& s : entry.scopes) scope_list += (scope_list.empty() ? "" : ",") + s.name;
    log(now, std::string(fresh ? "REGISTER" : "REREGISTER") + " provider=" + m.provider_id +
                 " entity=" + entity->type() + "/" + entity->id() + " scopes=" + scope_list);

    if (fresh) {
        providers_.emplace(m.provider_id, Provider{std::move(entry), std::move(link)});
    } else {
        it->second.entry = std::move(entry);
        if (link) it->second.link = std::move(link);
    }
    pending_pings_.erase(m.provider_id);
    return BrokerReply::ack();
}

BrokerReply Broker::handle_update(const ContextMessage& m, UnixSeconds now, std::string_view raw_line) {
    if (m.flag != wire::Flag::Update) return BrokerReply::nack("not an update");
    std::lock_guard lock(mutex_);
    auto nack = [&](const std::string& reason) {
        log(now, "UPDATE_NACK provider=" + m.provider_id + " reason=" + reason);
        return BrokerReply::nack(reason);
    };

    auto it = providers_.find(m.provider_id);
    if (it == providers_.end()) return nack("unknown provider");
    RegistryEntry& reg = it->second.entry;
    reg.last_seen = now;
    if (m.entity_type != reg.entity.type() || m.entity_id != reg.entity.id())
        return nack("entity not advertised");
    const ScopeDeclaration* decl = reg.find_scope(m.scope);
    if (!decl) return nack("scope not advertised");
    if (m.ts_end < now) return nack("expired");
    if (m.ts_begin > now) return nack("not yet valid");

    std::vector<ScopeRecord::Parameter> params;
    if (!decl->parameters.empty()) {
        const auto values = wire::split(m.payload, '/');
        if (values.size() == decl->parameters.size())
            for (std::size_t i = 0; i < values.size(); ++i)
                params.emplace_back(decl->parameters[i], std::string(values[i]));
    }

    CacheKey key{reg.entity, m.scope};
    std::string line = raw_line.empty() ? wire::encode_message(m) : std::string(raw_line);
    if (line.empty() || line.back() != '\n') line += '\n';
    CacheEntry entry{key, ScopeRecord{m.scope, std::move(params), m.ts_begin, m.ts_end}, m.payload,
                     m.provider_id, line};
    cache_.insert_or_assign(key, std::move(entry));
    log(now, "UPDATE_ACK provider=" + m.provider_id + " key=" + key.to_string() + " ts_end=" +
                 std::to_string(m.ts_end));
    notify_locked(key, line);
    return BrokerReply::ack();
}

BrokerReply Broker::handle_message_line(std::string_view line, UnixSeconds now, LineSink link) {
    ContextMessage m;
    try {
        m = wire::decode_message(line);
    } catch (const wire::ProtocolError& e) {
        log(now, std::string("PARSE_NACK reason=") + e.what());
        return BrokerReply::nack(std::string("parse error: ") + e.what());
    }
    if (m.flag == wire::Flag::Advertisement) return handle_advertisement(m, now, std::move(link));
    std::string raw(wire::strip_line_ending(line));
    raw += '\n';
    return handle_update(m, now, raw);
}

QueryResult Broker::query(const CacheKey& key, UnixSeconds now) {
    std::lock_guard lock(mutex_);
    std::string source;
    if (auto it = cache_.find(key); it != cache_.end()) {
        if (it->second.record.valid_at(now)) {
            log(now, "QUERY_HIT key=" + key.to_string());
            return {QueryStatus::Hit, it->second};
        }
        source = it->second.source_provider;
        log(now, "EVICT key=" + key.to_string() + " reason=expired");
        cache_.erase(it);
    }
    if (source.empty() || !providers_.contains(source)) {
        source.clear();
        for (const auto& [id, p] : providers_)
            if (p.entry.entity == key.entity && p.entry.find_scope(key.scope)) {
                source = id;
                break;
            }
    }
    if (source.empty()) {
        log(now, "QUERY_MISS key=" + key.to_string());
        return {QueryStatus::Miss, std::nullopt};
    }
    log(now, "QUERY_MISS key=" + key.to_string() + " refresh=" + source);
    ping_locked(source, now);
    return {QueryStatus::MissRefreshPending, std::nullopt};
}

void Broker::subscribe(const std::string& consumer_id, const CacheKey& key, LineSink delivery) {
    std::lock_guard lock(mutex_);
    auto& subs = subscriptions_[key];
    const bool known = std::any_of(subs.begin(), subs.end(),
                                   [&](const Subscriber& s) { return s.consumer_id == consumer_id; });
    if (known) return;
    subs.push_back({consumer_id, std::move(delivery)});
    if (events_) events_("- SUBSCRIBE consumer=" + consumer_id + " key=" + key.to_string());
}

void Broker::unsubscribe_all(const std::string& consumer_id) {
    std::lock_guard lock(mutex_);
    for (auto it = subscriptions_.begin(); it != subscriptions_.end();) {
        std::erase_if(it->second, [&](const Subscriber& s) { return s.consumer_id == consumer_id; });
        it = it->second.empty() ? subscriptions_.erase(it) : std::next(it);
    }
    consumer_failures_.erase(consumer_id);
}

std::size_t Broker::notify_subscribers(const CacheKey& key, std::string_view line) {
    std::lock_guard lock(mutex_);
    return notify_locked(key, line);
}

std::size_t Broker::notify_locked(const CacheKey& key, std::string_view line) {
    auto it = subscriptions_.find(key);
    if (it == subscriptions_.end()) return 0;
    std::size_t delivered = 0;
    std::vector<std::string> dropped;
    for (const Subscriber& s : it->second) {
        const bool ok = s.delivery && s.delivery(line);
        int& failures = consumer_failures_[s.consumer_id];
        if (ok) {
            ++delivered;
            failures = 0;
        } else if (++failures >= config_.max_consumer_failures) {
            dropped.push_back(s.consumer_id);
        }
    }
    if (events_)
        events_("- NOTIFY key=" + key.to_string() + " delivered=" + std::to_string(delivered));
    for (const auto& consumer : dropped) {
        for (auto sit = subscriptions_.begin(); sit != subscriptions_.end();) {
            std::erase_if(sit->second, [&](const Subscriber& s) { return s.consumer_id == consumer; });
            sit = sit->second.empty() ? subscriptions_.erase(sit) : std::next(sit);
        }
        consumer_failures_.erase(consumer);
        if (events_) events_("- DROP_CONSUMER consumer=" + consumer);
    }
    return delivered;
}

void Broker::ping_locked(const std::string& provider_id, UnixSeconds now) {
    auto it = providers_.find(provider_id);
    if (it == providers_.end()) return;
    pending_pings_.try_emplace(provider_id, now);
    const bool sent = it->second.link && it->second.link(wire::ping());
    log(now, "PING provider=" + provider_id + (sent ? "" : " link=down"));
}

std::vector<CacheKey> Broker::sweep_stale(UnixSeconds now) {
    std::lock_guard lock(mutex_);
    std::vector<CacheKey> evicted;
    std::set<std::string> to_ping;
    for (auto it = cache_.begin(); it != cache_.end();) {
        if (it->second.record.t_end() < now) {
            evicted.push_back(it->first);
            to_ping.insert(it->second.source_provider);
            log(now, "EVICT key=" + it->first.to_string() + " reason=expired");
            it = cache_.erase(it);
        } else {
            ++it;
        }
    }
    for (const auto& p : to_ping) ping_locked(p, now);

    std::vector<std::string> overdue;
    for (const auto& [provider, sent_at] : pending_pings_)
        if (now - sent_at > config_.availability_timeout_s) overdue.push_back(provider);
    for (const auto& p : overdue) deregister_locked(p, now, "no pong");
    return evicted;
}

void Broker::handle_pong(const std::string& provider_id, UnixSeconds now) {
    std::lock_guard lock(mutex_);
    auto it = providers_.find(provider_id);
    if (it == providers_.end()) return;
    it->second.entry.last_seen = now;
    if (pending_pings_.erase(provider_id)) log(now, "PONG provider=" + provider_id);
}

void Broker::detach_link(const std::string& provider_id) {
    std::lock_guard lock(mutex_);
    if (auto it = providers_.find(provider_id); it != providers_.end()) it->second.link = nullptr;
}

void Broker::drop_cache_of_locked(const std::string& provider_id, UnixSeconds now) {
    for (auto it = cache_.begin(); it != cache_.end();) {
        if (it->second.source_provider == provider_id) {
            log(now, "EVICT key=" + it->first.to_string() + " reason=deregistered");
            it = cache_.erase(it);
        } else {
            ++it;
        }
    }
}

void Broker::deregister_locked(const std::string& provider_id, UnixSeconds now, std::string_view why) {
    drop_cache_of_locked(provider_id, now);
    providers_.erase(provider_id);
    pending_pings_.erase(provider_id);
    log(now, "DEREGISTER provider=" + provider_id + " reason=" + std::string(why));
}

std::vector<RegistryEntry> Broker::registry() const {
    std::lock_guard lock(mutex_);
    std::vector<RegistryEntry> out;
    for (const auto& [id, p] : providers_) out.push_back(p.entry);
    return out;
}

std::vector<CacheEntry> Broker::cache() const {
    std::lock_guard lock(mutex_);
    std::vector<CacheEntry> out;
    for (const auto& [key, e] : cache_) out.push_back(e);
    return out;
}

std::size_t Broker::cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

std::size_t Broker::subscription_count() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [key, subs] : subscriptions_) n += subs.size();
    return n;
}

bool Broker::ping_pending(const std::string& provider_id) const {
    std::lock_guard lock(mutex_);
    return pending_pings_.contains(provider_id);
}

}  // namespace ctxchan
