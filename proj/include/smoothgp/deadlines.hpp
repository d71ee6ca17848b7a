#pragma once

#include "smoothgp/timeline.hpp"

#include <optional>
#include <stdexcept>
#include <type_traits>
#include <variant>
#include <vector>

namespace smoothgp {

// ----------------------------------------------------------------------------
// Deadline policies. Every SLO is expressed as a per-token deadline d_i,
// measured from the request's arrival, and a request meets its SLO iff every
// token i satisfies t_i <= d_i.
// ----------------------------------------------------------------------------

/// First token within `ttft_budget`; every later token within `tbt_budget`
/// of the previous token's actual time.
struct TtftTbt
{
    Seconds ttft_budget = 0.0;
    Seconds tbt_budget  = 0.0;
};

/// Every token (in effect the last one) within `e2e_budget` of arrival.
struct EndToEnd
{
    Seconds e2e_budget = 0.0;
};

/// Token i is due at first_token_allowance + per_token_budget * (i - 1),
/// i.e. paced at the user's consumption speed. With the allowance equal to
/// the per-token budget this is d_i = budget * i.
struct ReadingSpeed
{
    Seconds per_token_budget      = 0.0;
    Seconds first_token_allowance = 0.0;

    /// Builds the policy from a consumption speed in tokens/second. The
    /// allowance defaults to one token's worth of reading time.
    static ReadingSpeed from_rate(double tokens_per_second, std::optional<Seconds> allowance = std::nullopt)
    {
        if (!(tokens_per_second > 0.0)) {
            throw std::invalid_argument("tokens_per_second must be > 0");
        }
        const Seconds budget = 1.0 / tokens_per_second;
        return ReadingSpeed{budget, allowance.value_or(budget)};
    }
};

using DeadlinePolicy = std::variant<TtftTbt, EndToEnd, ReadingSpeed>;

inline void validate(const DeadlinePolicy &policy)
{
    auto positive = [](Seconds v, const char *what) {
        if (!(v > 0.0)) {
            throw std::invalid_argument(std::string(what) + " must be > 0");
        }
    };
    std::visit(
        [&](const auto &p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, TtftTbt>) {
                positive(p.ttft_budget, "ttft_budget");
                positive(p.tbt_budget, "tbt_budget");
            } else if constexpr (std::is_same_v<P, EndToEnd>) {
                positive(p.e2e_budget, "e2e_budget");
            } else {
                positive(p.per_token_budget, "per_token_budget");
                positive(p.first_token_allowance, "first_token_allowance");
            }
        },
        policy);
}

/// Deadline (relative to arrival) of token `index` (0-based). Valid for any
/// index <= timeline.size(), so it also yields the deadline of the next token
/// a still-running request has not produced yet.
inline Seconds deadline_at(const DeadlinePolicy &policy, const TokenTimeline &timeline, std::size_t index)
{
    if (index > timeline.size()) {
        throw std::out_of_range("deadline_at: index beyond the next pending token");
    }
    return std::visit(
        [&](const auto &p) -> Seconds {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, TtftTbt>) {
                return index == 0 ? p.ttft_budget : timeline.relative(index - 1) + p.tbt_budget;
            } else if constexpr (std::is_same_v<P, EndToEnd>) {
                return p.e2e_budget;
            } else {
                return p.first_token_allowance + p.per_token_budget * static_cast<double>(index);
            }
        },
        policy);
}

/// One deadline per generated token, relative to arrival.
inline std::vector<Seconds> deadlines_for(const DeadlinePolicy &policy, const TokenTimeline &timeline)
{
    require_tokens(timeline);
    std::vector<Seconds> out(timeline.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = deadline_at(policy, timeline, i);
    }
    return out;
}

/// Deadline of the first token not yet present in the timeline.
inline Seconds pending_deadline(const DeadlinePolicy &policy, const TokenTimeline &timeline)
{
    return deadline_at(policy, timeline, timeline.size());
}

inline bool meets_slo(const TokenTimeline &timeline, const DeadlinePolicy &policy)
{
    require_tokens(timeline);
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        if (timeline.relative(i) > deadline_at(policy, timeline, i)) {
            return false;
        }
    }
    return true;
}

} // namespace smoothgp
