#include "smoothgp/deadlines.hpp"
#include "smoothgp/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace smoothgp;
using smoothgp::testing::random_timeline;

namespace {

TokenTimeline rel_timeline(std::vector<double> rel, double arrival = 0.0)
{
    TokenTimeline tl{"r", arrival, {}, true};
    for (double t : rel) tl.token_times.push_back(arrival + t);
    return tl;
}

} // namespace

TEST(Deadlines, ReadingSpeedMatchesBudgetTimesIndex)
{
    const auto d = deadlines_for(ReadingSpeed{0.05, 0.05}, rel_timeline({0.01, 0.02, 0.03}));
    ASSERT_EQ(d.size(), 3u);
    EXPECT_DOUBLE_EQ(d[0], 0.05);
    EXPECT_DOUBLE_EQ(d[1], 0.10);
    EXPECT_DOUBLE_EQ(d[2], 0.15);
}

TEST(Deadlines, ReadingSpeedFromRate)
{
    const auto p = ReadingSpeed::from_rate(20.0);
    EXPECT_DOUBLE_EQ(p.per_token_budget, 0.05);
    EXPECT_DOUBLE_EQ(p.first_token_allowance, 0.05);
    EXPECT_DOUBLE_EQ(ReadingSpeed::from_rate(20.0, 1.0).first_token_allowance, 1.0);
    EXPECT_THROW(ReadingSpeed::from_rate(0.0), std::invalid_argument);
}

TEST(Deadlines, EndToEndIsConstant)
{
    const auto d = deadlines_for(EndToEnd{10.0}, rel_timeline({1, 2, 3, 4}));
    EXPECT_EQ(d, (std::vector<double>{10, 10, 10, 10}));
}

TEST(Deadlines, TtftTbtChainsOffActualPreviousToken)
{
    const auto d = deadlines_for(TtftTbt{1.0, 0.2}, rel_timeline({0.5, 0.9, 2.0}));
    ASSERT_EQ(d.size(), 3u);
    EXPECT_DOUBLE_EQ(d[0], 1.0);
    EXPECT_DOUBLE_EQ(d[1], 0.7);
    EXPECT_DOUBLE_EQ(d[2], 1.1);
}

TEST(Deadlines, EmptyTimelineIsAnError)
{
    TokenTimeline empty{"e", 0.0, {}, true};
    try {
        deadlines_for(EndToEnd{1.0}, empty);
        FAIL();
    } catch (const std::invalid_argument &e) {
        EXPECT_STREQ(e.what(), "no output tokens");
    }
    EXPECT_THROW(meets_slo(empty, EndToEnd{1.0}), std::invalid_argument);
}

TEST(Deadlines, PendingDeadlineIsNextIndex)
{
    const auto tl = rel_timeline({0.01, 0.02});
    EXPECT_DOUBLE_EQ(pending_deadline(ReadingSpeed{0.05, 0.05}, tl), 0.15);
    EXPECT_DOUBLE_EQ(pending_deadline(TtftTbt{1.0, 0.2}, tl), 0.22);
    EXPECT_DOUBLE_EQ(pending_deadline(TtftTbt{1.0, 0.2}, TokenTimeline{"e", 0, {}, false}), 1.0);
    EXPECT_THROW(deadline_at(EndToEnd{1.0}, tl, 3), std::out_of_range);
}

TEST(Deadlines, NonPositiveBudgetsRejected)
{
    EXPECT_THROW(validate(DeadlinePolicy{TtftTbt{0.0, 1.0}}), std::invalid_argument);
    EXPECT_THROW(validate(DeadlinePolicy{TtftTbt{1.0, -1.0}}), std::invalid_argument);
    EXPECT_THROW(validate(DeadlinePolicy{EndToEnd{0.0}}), std::invalid_argument);
    EXPECT_THROW(validate(DeadlinePolicy{ReadingSpeed{0.05, 0.0}}), std::invalid_argument);
    EXPECT_NO_THROW(validate(DeadlinePolicy{ReadingSpeed{0.05, 0.05}}));
}

TEST(MeetsSlo, Examples)
{
    EXPECT_TRUE(meets_slo(rel_timeline({0.04, 0.09}), ReadingSpeed{0.05, 0.05}));
    EXPECT_FALSE(meets_slo(rel_timeline({0.06, 0.09}), ReadingSpeed{0.05, 0.05}));
    EXPECT_TRUE(meets_slo(rel_timeline({0.5}), EndToEnd{10.0}));
    // a token exactly on its deadline is on time
    EXPECT_TRUE(meets_slo(rel_timeline({0.05}), ReadingSpeed{0.05, 0.05}));
}

TEST(DeadlineProperties, IndexOnlyPoliciesIgnoreGenerationTimes)
{
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_timeline(gen, 20);
        auto b = random_timeline(gen, 20);
        for (const DeadlinePolicy p : {DeadlinePolicy{EndToEnd{3.0}}, DeadlinePolicy{ReadingSpeed{0.04, 0.3}}}) {
            EXPECT_EQ(deadlines_for(p, a), deadlines_for(p, b));
        }
        // TtftTbt deadline i depends only on token i-1
        const DeadlinePolicy tt = TtftTbt{0.5, 0.1};
        auto                 c  = a;
        c.token_times.back() += 5.0;
        auto da = deadlines_for(tt, a);
        auto dc = deadlines_for(tt, c);
        EXPECT_EQ(da, dc);
    }
}

TEST(DeadlineProperties, MeetsSloIffIdleLatencyZero)
{
    std::mt19937_64 gen(12);
    const DeadlinePolicy policies[] = {TtftTbt{0.6, 0.1}, EndToEnd{3.0}, ReadingSpeed{0.05, 0.8}};
    int met = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const auto tl = random_timeline(gen, 1 + trial % 30);
        for (const auto &p : policies) {
            const bool ok = meets_slo(tl, p);
            met += ok;
            EXPECT_EQ(ok, max_lateness(tl, p) <= 0.0);
            EXPECT_EQ(ok, user_idle_latency(tl, p) == 0.0);
        }
    }
    EXPECT_GT(met, 0); // both branches exercised
    EXPECT_LT(met, 900);
}

TEST(DeadlineProperties, DelayNeverRepairsAViolation)
{
    std::mt19937_64                        gen(13);
    std::uniform_real_distribution<double> delta(0.001, 2.0);
    const DeadlinePolicy                   policies[] = {EndToEnd{2.0}, ReadingSpeed{0.05, 0.6}};
    for (int trial = 0; trial < 300; ++trial) {
        auto       tl      = random_timeline(gen, 1 + trial % 25);
        auto       shifted = tl;
        const auto d       = delta(gen);
        for (auto &t : shifted.token_times) t += d;
        for (const auto &p : policies) {
            if (!meets_slo(tl, p)) { EXPECT_FALSE(meets_slo(shifted, p)); }
        }
    }
}
