#pragma once

#include "smoothgp/deadlines.hpp"
#include "smoothgp/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace smoothgp {

// ============================================================================
// Request-level latency metrics
// ============================================================================

inline Seconds ttft(const TokenTimeline &timeline)
{
    require_tokens(timeline);
    return timeline.token_times.front() - timeline.arrival;
}

/// Successive token gaps; empty for a single-token request.
inline std::vector<Seconds> tbt_series(const TokenTimeline &timeline)
{
    require_tokens(timeline);
    std::vector<Seconds> gaps;
    gaps.reserve(timeline.size() - 1);
    for (std::size_t i = 1; i < timeline.size(); ++i) {
        gaps.push_back(timeline.token_times[i] - timeline.token_times[i - 1]);
    }
    return gaps;
}

/// Mean time per output token, excluding the first: (t_n - t_1) / (n - 1).
inline Seconds tpot(const TokenTimeline &timeline)
{
    if (timeline.size() < 2) {
        throw std::invalid_argument("tpot undefined");
    }
    return (timeline.token_times.back() - timeline.token_times.front()) / static_cast<double>(timeline.size() - 1);
}

inline Seconds e2e_latency(const TokenTimeline &timeline)
{
    require_tokens(timeline);
    return timeline.token_times.back() - timeline.arrival;
}

// ============================================================================
// User idle latency and benefit
// ============================================================================

/// Signed maximum lateness max_i (t_i - d_i). Negative when every token is
/// early; used for diagnostics and for the meets_slo equivalence.
inline Seconds max_lateness(const TokenTimeline &timeline, const DeadlinePolicy &policy)
{
    require_tokens(timeline);
    Seconds worst = -std::numeric_limits<Seconds>::infinity();
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        worst = std::max(worst, timeline.relative(i) - deadline_at(policy, timeline, i));
    }
    return worst;
}

/// Longest the user sat with nothing left to read; never negative.
inline Seconds user_idle_latency(const TokenTimeline &timeline, const DeadlinePolicy &policy)
{
    return std::max(0.0, max_lateness(timeline, policy));
}

/// f(l) = scale * l
struct LinearSeconds
{
    double scale = 1.0;
};

/// f(l) = l / per_token_budget: idle seconds expressed as tokens' worth of
/// reading time, which keeps benefit in token units.
struct TokensEquivalent
{
    Seconds per_token_budget = 0.05;
};

/// f(l) = penalty_value once l exceeds threshold, 0 otherwise.
struct Indicator
{
    Seconds threshold     = 0.0;
    double  penalty_value = 0.0;
};

using PenaltyFn = std::variant<LinearSeconds, TokensEquivalent, Indicator>;

inline void validate(const PenaltyFn &fn)
{
    std::visit(
        [](const auto &f) {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, LinearSeconds>) {
                if (!(f.scale >= 0.0)) throw std::invalid_argument("penalty scale must be >= 0");
            } else if constexpr (std::is_same_v<F, TokensEquivalent>) {
                if (!(f.per_token_budget > 0.0)) throw std::invalid_argument("penalty per_token_budget must be > 0");
            } else {
                if (!(f.threshold >= 0.0)) throw std::invalid_argument("penalty threshold must be >= 0");
                if (!(f.penalty_value >= 0.0)) throw std::invalid_argument("penalty_value must be >= 0");
            }
        },
        fn);
}

inline double penalty(const PenaltyFn &fn, Seconds idle)
{
    if (idle <= 0.0) {
        return 0.0;
    }
    return std::visit(
        [idle](const auto &f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, LinearSeconds>) {
                return f.scale * idle;
            } else if constexpr (std::is_same_v<F, TokensEquivalent>) {
                return idle / f.per_token_budget;
            } else {
                return idle > f.threshold ? f.penalty_value : 0.0;
            }
        },
        fn);
}

struct BenefitParams
{
    double    alpha   = 5.0;
    PenaltyFn penalty = TokensEquivalent{};
};

inline void validate(const BenefitParams &params)
{
    if (!(params.alpha >= 0.0)) {
        throw std::invalid_argument("alpha must be >= 0");
    }
    validate(params.penalty);
}

/// n_r - alpha * f(l_r). Can be negative; no floor is applied.
inline double benefit(const TokenTimeline &timeline, const DeadlinePolicy &policy, const BenefitParams &params)
{
    const Seconds idle = user_idle_latency(timeline, policy);
    return static_cast<double>(timeline.size()) - params.alpha * penalty(params.penalty, idle);
}

// ============================================================================
// Window-level metrics
// ============================================================================

/// A serving interval [start, end) and the requests that arrived in it. Each
/// timeline holds only tokens produced before `end`; requests cut off by the
/// window edge have completed == false and may hold no tokens at all.
struct EvalWindow
{
    Seconds                    start = 0.0;
    Seconds                    end   = 0.0;
    std::vector<TokenTimeline> requests;

    Seconds length() const { return end - start; }
};

enum class GoodputUnit
{
    Tokens,   // sum of n_r over SLO-meeting requests
    Requests, // count of SLO-meeting requests
};

inline void require_window(const EvalWindow &window)
{
    if (!(window.end > window.start)) {
        throw std::invalid_argument("evaluation window has zero length");
    }
}

/// Checks window bounds, arrival membership and each timeline's ordering.
inline void validate(const EvalWindow &window)
{
    require_window(window);
    for (const auto &r : window.requests) {
        if (r.arrival < window.start || !(r.arrival < window.end)) {
            throw std::invalid_argument("request " + r.request_id + " arrives outside the evaluation window");
        }
        if (r.completed && r.empty()) {
            throw std::invalid_argument("request " + r.request_id + " is completed but has no tokens");
        }
        validate(r, false);
    }
}

/// SLO verdict inside a window. A completed request is judged on all of its
/// tokens. An in-flight request fails if any produced token was late or if the
/// deadline of its next token had already passed when the window closed.
inline bool met_in_window(const TokenTimeline &timeline, const DeadlinePolicy &policy, Seconds window_end)
{
    if (timeline.completed) {
        return meets_slo(timeline, policy);
    }
    if (!timeline.empty() && !meets_slo(timeline, policy)) {
        return false;
    }
    return timeline.arrival + pending_deadline(policy, timeline) >= window_end;
}

/// Benefit with the window's partial-credit rule: tokens not produced yet
/// neither count nor add lateness, so an empty in-flight request is worth 0.
inline double window_benefit(const TokenTimeline &timeline, const DeadlinePolicy &policy,
                             const BenefitParams &params)
{
    return timeline.empty() ? 0.0 : benefit(timeline, policy, params);
}

inline std::size_t total_tokens(const EvalWindow &window)
{
    std::size_t n = 0;
    for (const auto &r : window.requests) n += r.size();
    return n;
}

/// Tokens produced inside the window per second.
inline double throughput(const EvalWindow &window)
{
    require_window(window);
    return static_cast<double>(total_tokens(window)) / window.length();
}

/// Sum of 1(all tokens on time) * n_r over completed requests, divided by T.
inline double goodput(const EvalWindow &window, const DeadlinePolicy &policy,
                      GoodputUnit unit = GoodputUnit::Tokens)
{
    require_window(window);
    double numerator = 0.0;
    for (const auto &r : window.requests) {
        if (r.completed && meets_slo(r, policy)) {
            numerator += unit == GoodputUnit::Tokens ? static_cast<double>(r.size()) : 1.0;
        }
    }
    return numerator / window.length();
}

/// Sum of benefit over every request, SLO-violating ones included, over T.
inline double smooth_goodput(const EvalWindow &window, const DeadlinePolicy &policy, const BenefitParams &params)
{
    require_window(window);
    double total = 0.0;
    for (const auto &r : window.requests) {
        total += window_benefit(r, policy, params);
    }
    return total / window.length();
}

inline double slo_attainment(const EvalWindow &window, const DeadlinePolicy &policy)
{
    if (window.requests.empty()) {
        throw std::invalid_argument("slo_attainment: window holds no requests");
    }
    std::size_t met = 0;
    for (const auto &r : window.requests) {
        if (met_in_window(r, policy, window.end)) ++met;
    }
    return static_cast<double>(met) / static_cast<double>(window.requests.size());
}

/// 1-indexed nearest rank ceil(q*n), clamped to [1, n]. q*n is nudged down by
/// 1e-9 before ceil so that products such as 0.99*100 that land a rounding
/// error above an integer select the intended rank.
inline std::size_t nearest_rank(std::size_t n, double q)
{
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(rank, 1, n);
}

/// Nearest-rank percentile: the ceil(q*n)-th smallest value (1-indexed).
inline Seconds percentile(std::vector<Seconds> values, double q)
{
    if (values.empty()) {
        throw std::invalid_argument("percentile of empty list");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw std::invalid_argument("percentile q must be in [0, 1]");
    }
    const auto rank = nearest_rank(values.size(), q);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

// ============================================================================
// Report
// ============================================================================

struct RequestRecord
{
    std::string            request_id;
    Seconds                arrival   = 0.0;
    std::size_t            tokens    = 0;
    bool                   completed = true;
    std::optional<Seconds> ttft;
    std::optional<Seconds> tpot;
    std::optional<Seconds> e2e;
    std::optional<Seconds> max_tbt;
    std::optional<Seconds> max_lateness; // signed, before clamping
    Seconds                idle_latency = 0.0;
    double                 benefit      = 0.0;
    bool                   met_slo      = false;
};

struct PercentileTable
{
    Seconds p50 = 0.0;
    Seconds p90 = 0.0;
    Seconds p99 = 0.0;
};

struct MetricsReport
{
    Seconds                    window_start = 0.0;
    Seconds                    window_end   = 0.0;
    GoodputUnit                goodput_unit = GoodputUnit::Tokens;
    std::vector<RequestRecord> requests;

    std::size_t total_tokens   = 0;
    double      throughput     = 0.0; // tokens/s
    double      goodput        = 0.0;
    double      smooth_goodput = 0.0;
    double      slo_attainment = 0.0;
    double      mean_ttft      = 0.0; // over requests with >= 1 token
    double      mean_idle      = 0.0;

    std::optional<PercentileTable> ttft_pct;
    std::optional<PercentileTable> tbt_pct; // pooled over every gap of every request
};

inline PercentileTable percentile_table(const std::vector<Seconds> &values)
{
    return PercentileTable{percentile(values, 0.50), percentile(values, 0.90), percentile(values, 0.99)};
}

inline MetricsReport build_report(const EvalWindow &window, const DeadlinePolicy &policy,
                                  const BenefitParams &params, GoodputUnit unit = GoodputUnit::Tokens)
{
    validate(window);
    if (window.requests.empty()) {
        throw std::invalid_argument("build_report: window holds no requests");
    }
    validate(policy);
    validate(params);

    MetricsReport report;
    report.window_start = window.start;
    report.window_end   = window.end;
    report.goodput_unit = unit;
    report.requests.reserve(window.requests.size());

    std::vector<Seconds> ttfts;
    std::vector<Seconds> gaps;
    double               benefit_sum = 0.0;
    double               good_sum    = 0.0;
    double               idle_sum    = 0.0;
    std::size_t          met         = 0;

    for (const auto &tl : window.requests) {
        RequestRecord rec;
        rec.request_id = tl.request_id;
        rec.arrival    = tl.arrival;
        rec.tokens     = tl.size();
        rec.completed  = tl.completed;
        rec.met_slo    = met_in_window(tl, policy, window.end);
        rec.benefit    = window_benefit(tl, policy, params);
        if (!tl.empty()) {
            rec.ttft         = ttft(tl);
            rec.e2e          = e2e_latency(tl);
            rec.max_lateness = max_lateness(tl, policy);
            rec.idle_latency = std::max(0.0, *rec.max_lateness);
            if (tl.size() >= 2) {
                rec.tpot          = tpot(tl);
                const auto series = tbt_series(tl);
                rec.max_tbt       = *std::max_element(series.begin(), series.end());
                gaps.insert(gaps.end(), series.begin(), series.end());
            }
            ttfts.push_back(*rec.ttft);
        }

        report.total_tokens += rec.tokens;
        benefit_sum += rec.benefit;
        idle_sum += rec.idle_latency;
        if (rec.met_slo) ++met;
        if (tl.completed && !tl.empty() && meets_slo(tl, policy)) {
            good_sum += unit == GoodputUnit::Tokens ? static_cast<double>(rec.tokens) : 1.0;
        }
        report.requests.push_back(std::move(rec));
    }

    const double T        = window.length();
    const double n        = static_cast<double>(report.requests.size());
    report.throughput     = static_cast<double>(report.total_tokens) / T;
    report.goodput        = good_sum / T;
    report.smooth_goodput = benefit_sum / T;
    report.slo_attainment = static_cast<double>(met) / n;
    report.mean_idle      = idle_sum / n;
    if (!ttfts.empty()) {
        double s = 0.0;
        for (auto v : ttfts) s += v;
        report.mean_ttft = s / static_cast<double>(ttfts.size());
        report.ttft_pct  = percentile_table(ttfts);
    }
    if (!gaps.empty()) {
        report.tbt_pct = percentile_table(gaps);
    }
    return report;
}

} // namespace smoothgp
