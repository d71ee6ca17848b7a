#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothgp {

/// Wall-clock quantities are real-valued seconds throughout the library.
using Seconds = double;

/// Absolute per-token instants of one request. The same type carries either
/// generation instants (engine side) or delivery instants (client side);
/// every metric consumes whichever one it is handed.
struct TokenTimeline
{
    std::string          request_id;
    Seconds              arrival = 0.0;
    std::vector<Seconds> token_times;
    // false for requests still in flight when an evaluation window closed
    bool completed = true;

    std::size_t size() const { return token_times.size(); }
    bool        empty() const { return token_times.empty(); }

    /// Time of token `i` (0-based) measured from arrival.
    Seconds relative(std::size_t i) const { return token_times[i] - arrival; }
};

/// Throws std::invalid_argument unless timestamps increase and the first one
/// is not before arrival. Generation timelines are strictly increasing;
/// delivery timelines (strict == false) may release a burst at one instant.
inline void validate(const TokenTimeline &timeline, bool strict = true)
{
    if (!timeline.empty() && timeline.token_times.front() < timeline.arrival) {
        throw std::invalid_argument("request " + timeline.request_id + ": first token precedes arrival");
    }
    for (std::size_t i = 1; i < timeline.size(); ++i) {
        const bool ok = strict ? timeline.token_times[i] > timeline.token_times[i - 1]
                               : timeline.token_times[i] >= timeline.token_times[i - 1];
        if (!ok) {
            throw std::invalid_argument("request " + timeline.request_id + ": token times out of order at index " +
                                        std::to_string(i));
        }
    }
}

inline void require_tokens(const TokenTimeline &timeline)
{
    if (timeline.empty()) {
        throw std::invalid_argument("no output tokens");
    }
}

} // namespace smoothgp
