#pragma once

#include "smoothgp/timeline.hpp"
#include "smoothgp/workload.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace smoothgp {

/// Affine surrogate for the latency of one engine iteration:
///   base_s + prefill_per_token_s * prefill_tokens + decode_per_seq_s * decode_seqs
/// The defaults make one 512-token prefill cost about as much as 25 small
/// decode-only iterations.
struct CostModel
{
    Seconds base_s              = 0.010;
    Seconds prefill_per_token_s = 0.0005;
    Seconds decode_per_seq_s    = 0.0002;
};

struct EngineLimits
{
    std::uint32_t max_batch_tokens   = 4096;
    std::uint32_t max_running_seqs   = 64;
    std::uint64_t kv_capacity_tokens = 131072;
};

struct EngineConfig
{
    CostModel    cost;
    EngineLimits limits;
};

inline void validate(const EngineConfig &cfg)
{
    const auto &c = cfg.cost;
    if (!(c.base_s >= 0.0) || !(c.prefill_per_token_s >= 0.0) || !(c.decode_per_seq_s >= 0.0)) {
        throw std::invalid_argument("cost coefficients must be >= 0");
    }
    const auto &l = cfg.limits;
    if (l.max_batch_tokens < 1 || l.max_running_seqs < 1 || l.kv_capacity_tokens < 1) {
        throw std::invalid_argument("engine limits must be >= 1");
    }
}

inline Seconds iteration_time(std::uint64_t prefill_tokens, std::uint64_t decode_seqs, const EngineConfig &engine,
                              Seconds overhead_s = 0.0)
{
    const auto &c = engine.cost;
    return c.base_s + c.prefill_per_token_s * static_cast<double>(prefill_tokens) +
           c.decode_per_seq_s * static_cast<double>(decode_seqs) + overhead_s;
}

enum class Phase : std::uint8_t
{
    Waiting,
    Prefilling,
    Decoding,
    Finished,
};

inline const char *to_string(Phase p)
{
    switch (p) {
    case Phase::Waiting: return "waiting";
    case Phase::Prefilling: return "prefilling";
    case Phase::Decoding: return "decoding";
    case Phase::Finished: return "finished";
    }
    return "?";
}

/// Engine-side view of one request. `index` is the request's position in the
/// workload and is the identity used by batch plans.
struct RequestState
{
    std::size_t   index          = 0;
    Seconds       arrival        = 0.0;
    std::uint32_t prompt_len     = 1;
    std::uint32_t output_len     = 1;
    Phase         phase          = Phase::Waiting;
    std::uint32_t prefill_done   = 0;
    std::uint32_t tokens_emitted = 0;
    std::uint64_t kv_tokens      = 0;

    std::uint32_t remaining_output() const { return output_len - tokens_emitted; }
    std::uint32_t remaining_prompt() const { return prompt_len - prefill_done; }

    /// Admission reserves KV for the whole prompt plus every output token, so
    /// an admitted request can always run to completion without eviction.
    std::uint64_t kv_reservation() const { return std::uint64_t{prompt_len} + output_len; }
};

/// Read-only snapshot handed to a scheduler. `waiting` is FCFS order;
/// `running` holds admitted (prefilling or decoding) requests in admission
/// order.
struct QueueView
{
    Seconds                         now = 0.0;
    std::span<const RequestState>   requests;
    std::span<const std::size_t>    waiting;
    std::span<const std::size_t>    running;
    std::uint64_t                   kv_reserved = 0;

    const RequestState &at(std::size_t index) const { return requests[index]; }
};

class SimulationError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace smoothgp
