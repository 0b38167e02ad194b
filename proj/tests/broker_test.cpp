#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <thread>

#include "ctxchan/broker.hpp"
#include "support/broker_fixtures.hpp"

namespace ctxchan {
namespace {

using testing::advertisement;
using testing::key;
using testing::update;
using wire::BrokerReply;

bool is_ack(const BrokerReply& r) { return r.kind == BrokerReply::Kind::Ack; }

TEST(Advertisement, RegistersFreshProvider) {
    Broker b;
    EXPECT_TRUE(is_ack(b.handle_advertisement(advertisement("p1"), 100)));
    const auto reg = b.registry();
    ASSERT_EQ(reg.size(), 1u);
    EXPECT_EQ(reg[0].provider_id, "p1");
    EXPECT_EQ(reg[0].entity, EntityRef("sensor", "noisesensor1"));
    EXPECT_EQ(reg[0].registered_at, 100);
}

TEST(Advertisement, ReadvertisementReplacesEntry) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    EXPECT_TRUE(is_ack(b.handle_advertisement(advertisement("p1", "noisesensor1", "interference,localization"), 110)));
    const auto reg = b.registry();
    ASSERT_EQ(reg.size(), 1u);
    ASSERT_EQ(reg[0].scopes.size(), 2u);
    EXPECT_EQ(reg[0].scopes[1].name, "localization");
    EXPECT_EQ(reg[0].registered_at, 100);
    EXPECT_EQ(reg[0].last_seen, 110);
}

TEST(Advertisement, MalformedScopeListNacked) {
    Broker b;
    for (const char* scopes : {"", "a,,b", "a,a"}) {
        const auto r = b.handle_advertisement(advertisement("p1", "n1", scopes), 100);
        EXPECT_EQ(r, BrokerReply::nack("bad advertisement")) << scopes;
    }
    EXPECT_EQ(b.handle_advertisement(advertisement("p1", "n1", "a", "b:x"), 100).kind, BrokerReply::Kind::Nack);
    EXPECT_EQ(b.handle_advertisement(advertisement("p1", "n1", "a", "a:x,x"), 100).kind, BrokerReply::Kind::Nack);
    EXPECT_TRUE(b.registry().empty());
}

TEST(ScopeDeclarations, Parse) {
    auto s = parse_advertised_scopes("interference,localization", "interference:a,b;localization:x,y");
    ASSERT_TRUE(s);
    EXPECT_EQ((*s)[0].parameters, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ((*s)[1].parameters, (std::vector<std::string>{"x", "y"}));
    EXPECT_FALSE(parse_advertised_scopes("a", "a"));
    EXPECT_FALSE(parse_advertised_scopes("a", "a:x;a:y"));
}

TEST(Update, AcceptedUpdateCachedOnce) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    EXPECT_TRUE(is_ack(b.handle_update(update("p1", 100, 160), 100)));
    ASSERT_EQ(b.cache_size(), 1u);
    EXPECT_TRUE(is_ack(b.handle_update(update("p1", 105, 165, "0/2412/0/-80.0/2.0/3.0"), 105)));
    const auto cache = b.cache();
    ASSERT_EQ(cache.size(), 1u);
    EXPECT_EQ(cache[0].payload, "0/2412/0/-80.0/2.0/3.0");
    EXPECT_EQ(cache[0].record.t_begin(), 105);
    EXPECT_EQ(cache[0].source_provider, "p1");
}

TEST(Update, ParametersFollowAdvertisedNames) {
    Broker b;
    b.handle_advertisement(advertisement("p1", "noisesensor1", "interference",
                                         "interference:security,recommendation,switch,power,x,y"),
                           100);
    b.handle_update(update("p1", 100, 160), 100);
    const auto rec = b.cache().at(0).record;
    EXPECT_EQ(rec.parameter("recommendation"), "2452");
    EXPECT_EQ(rec.parameter("power"), "-63.0");
}

TEST(Update, Rejections) {
    Broker b;
    EXPECT_EQ(b.handle_update(update("ghost", 100, 160), 100), BrokerReply::nack("unknown provider"));
    b.handle_advertisement(advertisement("p1"), 100);
    EXPECT_EQ(b.handle_update(update("p1", 50, 99), 100), BrokerReply::nack("expired"));
    EXPECT_EQ(b.handle_update(update("p1", 100, 160, "x", "other"), 100), BrokerReply::nack("entity not advertised"));
    EXPECT_EQ(b.handle_update(update("p1", 100, 160, "x", "noisesensor1", "weather"), 100),
              BrokerReply::nack("scope not advertised"));
    EXPECT_EQ(b.handle_update(update("p1", 101, 160), 100), BrokerReply::nack("not yet valid"));
    EXPECT_EQ(b.cache_size(), 0u);
}

TEST(Update, UnparsableLineNeverAcked) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    for (const char* line : {"garbage", "CTX1|U|p1|sensor|noisesensor1|interference|100|160",
                             "CTX1|Q|p1|sensor|noisesensor1|interference|100|160|x",
                             "CTX1|U|p1|sensor|noisesensor1|interference|1a0|160|x"})
        EXPECT_EQ(b.handle_message_line(line, 100).kind, BrokerReply::Kind::Nack) << line;
    EXPECT_TRUE(is_ack(b.handle_message_line("CTX1|U|p1|sensor|noisesensor1|interference|100|160|x\n", 100)));
}

TEST(Query, HitMissAndExpiry) {
    Broker b;
    EXPECT_EQ(b.query(key(), 100).status, QueryStatus::Miss);
    b.handle_advertisement(advertisement("p1"), 100);
    b.handle_update(update("p1", 100, 160), 100);
    auto hit = b.query(key(), 150);
    ASSERT_EQ(hit.status, QueryStatus::Hit);
    EXPECT_EQ(hit.entry->payload, "1/2452/1/-63.0/2.0/3.0");
    auto miss = b.query(key(), 161);
    EXPECT_EQ(miss.status, QueryStatus::MissRefreshPending);
    EXPECT_EQ(b.cache_size(), 0u);
    EXPECT_TRUE(b.ping_pending("p1"));
}

TEST(Query, MissOnRegisteredButUncachedKeyPingsProvider) {
    Broker b;
    std::vector<std::string> sent;
    b.handle_advertisement(advertisement("p1"), 100, [&](std::string_view l) {
        sent.emplace_back(l);
        return true;
    });
    EXPECT_EQ(b.query(key(), 100).status, QueryStatus::MissRefreshPending);
    EXPECT_EQ(sent, (std::vector<std::string>{"PING\n"}));
    b.handle_pong("p1", 101);
    EXPECT_FALSE(b.ping_pending("p1"));
}

TEST(Subscription, DeliveryCounts) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    std::vector<std::string> a, c;
    b.subscribe("a", key(), [&](std::string_view l) {
        a.emplace_back(l);
        return true;
    });
    b.handle_update(update("p1", 100, 160), 100);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0], "CTX1|U|p1|sensor|noisesensor1|interference|100|160|1/2452/1/-63.0/2.0/3.0\n");

    b.subscribe("c", key(), [&](std::string_view l) {
        c.emplace_back(l);
        return true;
    });
    EXPECT_EQ(b.notify_subscribers(key(), "x\n"), 2u);
    EXPECT_EQ(b.notify_subscribers(key("other"), "x\n"), 0u);
}

TEST(Subscription, DuplicateSubscribeIsIdempotent) {
    Broker b;
    int n = 0;
    auto sink = [&](std::string_view) {
        ++n;
        return true;
    };
    b.subscribe("a", key(), sink);
    b.subscribe("a", key(), sink);
    EXPECT_EQ(b.subscription_count(), 1u);
    EXPECT_EQ(b.notify_subscribers(key(), "x\n"), 1u);
    EXPECT_EQ(n, 1);
}

TEST(Subscription, FailingConsumerDroppedWithoutBlockingOthers) {
    Broker b;
    int good = 0;
    b.subscribe("bad", key(), [](std::string_view) { return false; });
    b.subscribe("good", key(), [&](std::string_view) {
        ++good;
        return true;
    });
    for (int i = 0; i < 3; ++i) EXPECT_EQ(b.notify_subscribers(key(), "x\n"), 1u);
    EXPECT_EQ(b.subscription_count(), 1u);
    EXPECT_EQ(b.notify_subscribers(key(), "x\n"), 1u);
    EXPECT_EQ(good, 4);
}

TEST(Sweep, EvictsExpiredAndPingsProvider) {
    Broker b;
    std::vector<std::string> sent;
    b.handle_advertisement(advertisement("p1"), 100, [&](std::string_view l) {
        sent.emplace_back(l);
        return true;
    });
    b.handle_update(update("p1", 100, 109), 100);
    EXPECT_TRUE(b.sweep_stale(109).empty());
    const auto evicted = b.sweep_stale(110);
    ASSERT_EQ(evicted.size(), 1u);
    EXPECT_EQ(evicted[0], key());
    EXPECT_EQ(sent, (std::vector<std::string>{"PING\n"}));
    EXPECT_EQ(b.cache_size(), 0u);
}

TEST(Sweep, AllValidIsNoOp) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    b.handle_update(update("p1", 100, 200), 100);
    EXPECT_TRUE(b.sweep_stale(150).empty());
    EXPECT_EQ(b.cache_size(), 1u);
}

TEST(Sweep, SilentProviderDeregistered) {
    Broker b(BrokerConfig{.availability_timeout_s = 2});
    b.handle_advertisement(advertisement("p1"), 100, [](std::string_view) { return true; });
    b.handle_update(update("p1", 100, 109), 100);
    b.sweep_stale(110);
    b.sweep_stale(112);
    EXPECT_EQ(b.registry().size(), 1u);
    b.sweep_stale(113);
    EXPECT_TRUE(b.registry().empty());
}

TEST(Sweep, PongKeepsProviderRegistered) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100, [](std::string_view) { return true; });
    b.handle_update(update("p1", 100, 109), 100);
    b.sweep_stale(110);
    b.handle_pong("p1", 111);
    b.sweep_stale(120);
    EXPECT_EQ(b.registry().size(), 1u);
}

TEST(Invariants, CacheSourcesAlwaysRegistered) {
    Broker b;
    b.handle_advertisement(advertisement("p1"), 100);
    b.handle_advertisement(advertisement("p2", "noisesensor2"), 100);
    b.handle_update(update("p1", 100, 105), 100);
    b.handle_update(update("p2", 100, 200, "x", "noisesensor2"), 100);
    // p1 expires and never answers; p2 stays valid.
    b.sweep_stale(106);
    b.sweep_stale(200);
    for (const auto& e : b.cache()) {
        const auto reg = b.registry();
        EXPECT_TRUE(std::any_of(reg.begin(), reg.end(), [&](const auto& r) { return r.provider_id == e.source_provider; }));
    }
    EXPECT_EQ(b.registry().size(), 1u);
}

TEST(Invariants, ReadvertisingAwayFromScopeDropsItsEntry) {
    Broker b;
    b.handle_advertisement(advertisement("p1", "noisesensor1", "interference,localization"), 100);
    b.handle_update(update("p1", 100, 200, "x", "noisesensor1", "localization"), 100);
    b.handle_advertisement(advertisement("p1", "noisesensor1", "interference"), 101);
    EXPECT_EQ(b.cache_size(), 0u);
}

TEST(Concurrency, OneEntryPerKeyUnderConcurrentWriters) {
    Broker b;
    for (const char* p : {"p1", "p2", "p3"}) b.handle_advertisement(advertisement(p), 0);
    std::atomic<bool> reading{false}, done{false};
    std::atomic<std::size_t> worst{0};
    std::thread reader([&] {
        do {
            worst = std::max(worst.load(), testing::max_entries_per_key(b.cache()));
            reading = true;
        } while (!done);
        worst = std::max(worst.load(), testing::max_entries_per_key(b.cache()));
    });
    std::vector<std::thread> writers;
    for (const char* p : {"p1", "p2", "p3"})
        writers.emplace_back([&, p] {
            while (!reading) std::this_thread::yield();
            for (int i = 0; i < 300; ++i) ASSERT_TRUE(is_ack(b.handle_update(update(p, 0, 1000), 0)));
        });
    for (auto& w : writers) w.join();
    done = true;
    reader.join();
    EXPECT_EQ(worst.load(), 1u);
    EXPECT_EQ(b.cache_size(), 1u);
}

TEST(Events, OneLinePerEvent) {
    std::vector<std::string> events;
    Broker b({}, [&](std::string_view e) { events.emplace_back(e); });
    b.handle_advertisement(advertisement("p1"), 100);
    b.handle_update(update("p1", 100, 160), 100);
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0], "100 REGISTER provider=p1 entity=sensor/noisesensor1 scopes=interference");
    EXPECT_EQ(events[1], "100 UPDATE_ACK provider=p1 key=sensor/noisesensor1/interference ts_end=160");
}

}  // namespace
}  // namespace ctxchan
