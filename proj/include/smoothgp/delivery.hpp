#pragma once

#include "smoothgp/timeline.hpp"

#include <algorithm>
#include <stdexcept>
#include <variant>

namespace smoothgp {

/// Hold early tokens so consecutive deliveries are tbt_target apart.
struct TbtCap
{
    Seconds tbt_target = 0.05;
};

/// Same buffering rule, parameterised by a pacing rate instead of a TBT target.
struct FixedRate
{
    Seconds per_token_s = 0.05;
};

struct DelayConfig
{
    std::variant<TbtCap, FixedRate> mode = TbtCap{};
    // when set, the first token is also held for one cadence slot
    bool first_token_delayed = false;

    Seconds hold() const
    {
        return std::visit(
            [](const auto &m) {
                if constexpr (std::is_same_v<std::decay_t<decltype(m)>, TbtCap>) {
                    return m.tbt_target;
                } else {
                    return m.per_token_s;
                }
            },
            mode);
    }
};

inline void validate(const DelayConfig &cfg)
{
    if (!(cfg.hold() > 0.0)) {
        throw std::invalid_argument("output delay cadence must be > 0");
    }
}

/// Output-delay buffer between engine and client. A token generated before
/// the previous release + hold is held until exactly that instant; a token
/// generated later goes out immediately and the cadence restarts from it.
/// Delivery never precedes generation and never reorders tokens.
inline TokenTimeline apply_output_delay(const TokenTimeline &timeline, const DelayConfig &cfg)
{
    validate(cfg);
    TokenTimeline out = timeline;
    if (timeline.empty()) {
        return out;
    }
    const Seconds hold = cfg.hold();
    auto         &rel  = out.token_times;
    if (cfg.first_token_delayed) {
        rel[0] = timeline.token_times[0] + hold;
    }
    for (std::size_t i = 1; i < rel.size(); ++i) {
        const Seconds t    = timeline.token_times[i];
        const Seconds slot = rel[i - 1] + hold;
        rel[i]             = t <= slot ? slot : t;
    }
    return out;
}

} // namespace smoothgp
