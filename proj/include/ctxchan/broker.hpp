#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxchan/core_model.hpp"
#include "ctxchan/wire_protocol.hpp"

namespace ctxchan {

/// Cache address: one entity-scope pair.
struct CacheKey {
    EntityRef entity;
    std::string scope;

    std::string to_string() const;

    friend bool operator==(const CacheKey&, const CacheKey&) = default;
    friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
};

/// Outbound line delivery. Returns false if the line could not be delivered.
/// Sinks are invoked with the broker lock held and must not call back into the broker.
using LineSink = std::function<bool(std::string_view line)>;

/// Receives one line per registry/cache/subscription event.
using EventSink = std::function<void(std::string_view event)>;

struct BrokerConfig {
    UnixSeconds availability_timeout_s = 2;
    int max_consumer_failures = 3;
};

struct ScopeDeclaration {
    std::string name;
    std::vector<std::string> parameters;

    friend bool operator==(const ScopeDeclaration&, const ScopeDeclaration&) = default;
};

struct RegistryEntry {
    std::string provider_id;
    EntityRef entity;
    std::vector<ScopeDeclaration> scopes;
    UnixSeconds registered_at = 0;
    UnixSeconds last_seen = 0;

    const ScopeDeclaration* find_scope(std::string_view name) const;
};

struct CacheEntry {
    CacheKey key;
    ScopeRecord record;
    std::string payload;
    std::string source_provider;
    std::string line;  // the accepted 'U' message, verbatim
};

enum class QueryStatus { Hit, Miss, MissRefreshPending };

struct QueryResult {
    QueryStatus status = QueryStatus::Miss;
    std::optional<CacheEntry> entry;
};

/// Parses the scope field and payload of an advertisement.
/// Scope field: comma-separated names. Payload: empty, or "scope:p1,p2;scope:p3".
/// Returns nullopt when the declaration is malformed.
std::optional<std::vector<ScopeDeclaration>> parse_advertised_scopes(std::string_view scope_field,
                                                                     std::string_view payload);

/// Context broker state: provider registry, entity-scope cache and subscriptions.
///
/// Every public member is serialized on one internal mutex, so concurrent callers observe a
/// single total order of mutations. Time is passed in explicitly; the broker owns no clock.
class Broker {
public:
    explicit Broker(BrokerConfig config = {}, EventSink events = {});

    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    /// Registers or re-registers a provider. `link` is used for availability pings.
    wire::BrokerReply handle_advertisement(const wire::ContextMessage& m, UnixSeconds now,
                                           LineSink link = {});

    /// Replaces the cache entry for (entity, scope) and notifies subscribers.
    /// `raw_line` is forwarded verbatim to subscribers; when empty the message is re-encoded.
    wire::BrokerReply handle_update(const wire::ContextMessage& m, UnixSeconds now,
                                    std::string_view raw_line = {});

    /// Decodes a CTX1 line and dispatches on its flag. Undecodable input is NACKed.
    wire::BrokerReply handle_message_line(std::string_view line, UnixSeconds now, LineSink link = {});

    QueryResult query(const CacheKey& key, UnixSeconds now);

    /// Idempotent per (consumer, key).
    void subscribe(const std::string& consumer_id, const CacheKey& key, LineSink delivery);
    void unsubscribe_all(const std::string& consumer_id);

    /// Delivers `line` to every subscriber of `key`; returns the number of successful deliveries.
    std::size_t notify_subscribers(const CacheKey& key, std::string_view line);

    /// Evicts entries with t_end < now, pings their providers and deregisters providers whose
    /// pending ping is older than the availability timeout.
    std::vector<CacheKey> sweep_stale(UnixSeconds now);

    void handle_pong(const std::string& provider_id, UnixSeconds now);

    /// Forget the provider's outbound link (connection closed). Registration is kept.
    void detach_link(const std::string& provider_id);

    // Snapshots, for inspection and tests.
    std::vector<RegistryEntry> registry() const;
    std::vector<CacheEntry> cache() const;
    std::size_t cache_size() const;
    std::size_t subscription_count() const;
    bool ping_pending(const std::string& provider_id) const;

private:
    struct Provider {
        RegistryEntry entry;
        LineSink link;
    };
    struct Subscriber {
        std::string consumer_id;
        LineSink delivery;
    };

    std::size_t notify_locked(const CacheKey& key, std::string_view line);
    void ping_locked(const std::string& provider_id, UnixSeconds now);
    void deregister_locked(const std::string& provider_id, UnixSeconds now, std::string_view why);
    void drop_cache_of_locked(const std::string& provider_id, UnixSeconds now);
    void log(UnixSeconds now, const std::string& event) const;

    BrokerConfig config_;
    EventSink events_;
    mutable std::mutex mutex_;
    std::map<std::string, Provider> providers_;
    std::map<CacheKey, CacheEntry> cache_;
    std::map<CacheKey, std::vector<Subscriber>> subscriptions_;
    std::map<std::string, int> consumer_failures_;
    std::map<std::string, UnixSeconds> pending_pings_;  // provider -> ping sent at
};

}  // namespace ctxchan
