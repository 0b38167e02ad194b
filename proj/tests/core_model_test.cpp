#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "ctxchan/core_model.hpp"

namespace ctxchan {
namespace {

TEST(CarrierFrequency, MatchesGrid) {
    EXPECT_EQ(carrier_frequency(1), 2412);
    EXPECT_EQ(carrier_frequency(9), 2452);
    EXPECT_EQ(carrier_frequency(13), 2472);
}

TEST(CarrierFrequency, StrictlyIncreasingWithConstantStep) {
    for (int n = 2; n <= 13; ++n) EXPECT_EQ(carrier_frequency(n) - carrier_frequency(n - 1), 5);
}

TEST(CarrierFrequency, RejectsOutOfRange) {
    EXPECT_THROW(carrier_frequency(0), DomainError);
    EXPECT_THROW(carrier_frequency(14), DomainError);
    EXPECT_THROW(ChannelId{-3}, DomainError);
}

// Nearest allowed carrier by exhaustive comparison, lower channel on ties.
std::optional<int> nearest_carrier_oracle(int f, const std::vector<int>& channels) {
    std::optional<int> best;
    for (int n : channels) {
        const int d = std::abs(f - (2407 + 5 * n));
        if (d > 10) continue;
        if (!best || d < std::abs(f - (2407 + 5 * *best))) best = n;
    }
    return best;
}

TEST(ChannelForFrequency, Examples) {
    const ChannelPlan plan;
    EXPECT_EQ(channel_for_frequency(2452, plan), ChannelId{9});
    EXPECT_EQ(channel_for_frequency(2457, plan), ChannelId{9});
    EXPECT_EQ(nearest_carrier_oracle(2457, {1, 5, 9, 13}), 9);
    EXPECT_FALSE(channel_for_frequency(2400, plan));
    EXPECT_FALSE(nearest_carrier_oracle(2400, {1, 5, 9, 13}));
}

TEST(ChannelForFrequency, AgreesWithOracleAcrossBand) {
    const ChannelPlan plan;
    for (int f = 2390; f <= 2500; ++f) {
        const auto got = channel_for_frequency(f, plan);
        const auto want = nearest_carrier_oracle(f, {1, 5, 9, 13});
        ASSERT_EQ(got.has_value(), want.has_value()) << f;
        if (got) EXPECT_EQ(got->number(), *want) << f;
    }
}

TEST(ChannelForFrequency, EquidistantGoesToLowerChannel) {
    const ChannelPlan plan;
    EXPECT_EQ(channel_for_frequency(carrier_frequency(3), plan), ChannelId{1});
    EXPECT_EQ(channel_for_frequency(carrier_frequency(7), plan), ChannelId{5});
}

TEST(ChannelForFrequency, InvertsCarrierFrequencyOnPlan) {
    const ChannelPlan plan({ChannelId{1}, ChannelId{6}, ChannelId{11}}, ChannelId{11});
    for (ChannelId c : plan.allowed()) EXPECT_EQ(channel_for_frequency(carrier_frequency(c), plan), c);
}

TEST(PowerUnits, Examples) {
    EXPECT_DOUBLE_EQ(dbm_to_mw(0.0), 1.0);
    EXPECT_DOUBLE_EQ(dbm_to_mw(20.0), 100.0);
    EXPECT_NEAR(dbm_to_mw(-40.0), 1e-4, 1e-18);
    EXPECT_DOUBLE_EQ(mw_to_dbm(100.0), 20.0);
}

TEST(PowerUnits, RoundTrip) {
    std::mt19937 gen(11);
    std::uniform_real_distribution<double> dbm(-120.0, 30.0);
    for (int i = 0; i < 10000; ++i) {
        const double p = dbm(gen);
        EXPECT_NEAR(mw_to_dbm(dbm_to_mw(p)), p, 1e-9);
        const double mw = dbm_to_mw(p);
        EXPECT_NEAR(dbm_to_mw(mw_to_dbm(mw)) / mw, 1.0, 1e-9);
    }
}

TEST(PowerUnits, NonPositiveMilliwattsRejected) {
    EXPECT_THROW(mw_to_dbm(0.0), DomainError);
    EXPECT_THROW(mw_to_dbm(-1.0), DomainError);
}

TEST(EntityRef, RejectsEmptyAndReservedDelimiters) {
    EXPECT_NO_THROW(EntityRef("sensor", "noisesensor1"));
    EXPECT_THROW(EntityRef("", "x"), DomainError);
    EXPECT_THROW(EntityRef("sensor", ""), DomainError);
    EXPECT_THROW(EntityRef("sen|sor", "x"), DomainError);
    EXPECT_THROW(EntityRef("sensor", "a/b"), DomainError);
    EXPECT_THROW(EntityRef("sensor", "a\nb"), DomainError);
}

TEST(ScopeRecord, ValidityWindow) {
    ScopeRecord r("interference", {{"power", "-63.0"}}, 100, 160);
    EXPECT_FALSE(r.valid_at(99));
    EXPECT_TRUE(r.valid_at(100));
    EXPECT_TRUE(r.valid_at(160));
    EXPECT_FALSE(r.valid_at(161));
    EXPECT_EQ(r.parameter("power"), "-63.0");
    EXPECT_FALSE(r.parameter("x"));
}

TEST(ScopeRecord, Invariants) {
    EXPECT_THROW(ScopeRecord("s", {}, 10, 9), DomainError);
    EXPECT_THROW(ScopeRecord("s", {{"a", "1"}, {"a", "2"}}, 0, 1), DomainError);
    EXPECT_THROW(ScopeRecord("s|x", {}, 0, 1), DomainError);
    EXPECT_THROW(ScopeRecord("s", {{"a/b", "1"}}, 0, 1), DomainError);
}

TEST(ChannelPlan, DefaultsAndInvariants) {
    const ChannelPlan plan;
    ASSERT_EQ(plan.allowed().size(), 4u);
    EXPECT_EQ(plan.security_channel(), ChannelId{13});
    EXPECT_EQ(plan.bandwidth_mhz(), 20);
    EXPECT_THROW(ChannelPlan({ChannelId{1}}, ChannelId{1}), DomainError);
    EXPECT_THROW(ChannelPlan({ChannelId{1}, ChannelId{5}}, ChannelId{9}), DomainError);
}

}  // namespace
}  // namespace ctxchan
