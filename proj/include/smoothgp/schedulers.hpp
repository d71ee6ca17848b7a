#pragma once

#include "smoothgp/engine.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

namespace smoothgp {

// ============================================================================
// Policies
// ============================================================================

/// Prefill-prioritizing: any waiting request that fits is prefilled in full,
/// stalling every running decode for that iteration.
struct VllmLike
{
};

/// Hybrid batches: all decodes plus one prompt chunk of at most chunk_tokens.
struct ChunkedPrefill
{
    std::uint32_t chunk_tokens       = 512;
    Seconds       chunk_overhead_s   = 0.0; // added to every batch carrying a chunk
};

/// Before a prefill, run `prepone_tokens` decode-only iterations for the
/// decoding requests and hold those tokens back, releasing the k-th at
/// generation + k * t_delay but never after the prefill completes.
/// Without t_delay the delay is prefill_duration / (prepone_tokens + 1).
struct DecodePrepone
{
    std::uint32_t          prepone_tokens = 2;
    std::optional<Seconds> t_delay;
};

using SchedulerPolicy = std::variant<VllmLike, ChunkedPrefill, DecodePrepone>;

inline void validate(const SchedulerPolicy &policy)
{
    if (const auto *c = std::get_if<ChunkedPrefill>(&policy)) {
        if (c->chunk_tokens < 1) throw std::invalid_argument("chunk_tokens must be >= 1");
        if (!(c->chunk_overhead_s >= 0.0)) throw std::invalid_argument("chunk_overhead_s must be >= 0");
    }
    if (const auto *p = std::get_if<DecodePrepone>(&policy)) {
        if (p->prepone_tokens < 1) throw std::invalid_argument("prepone_tokens must be >= 1");
        if (p->t_delay && !(*p->t_delay >= 0.0)) throw std::invalid_argument("t_delay must be >= 0");
    }
}

// ============================================================================
// Batch plans
// ============================================================================

struct PrefillItem
{
    std::size_t   request = 0;
    std::uint32_t tokens  = 0;

    bool operator==(const PrefillItem &) const = default;
};

/// The token a decode member produces in this iteration is delivered `delay`
/// after its generation, capped at the end of the enclosing schedule step.
struct DeferredRelease
{
    std::size_t request = 0;
    Seconds     delay   = 0.0;

    bool operator==(const DeferredRelease &) const = default;
};

struct BatchPlan
{
    std::vector<PrefillItem>     prefill;
    std::vector<std::size_t>     decode;
    std::vector<DeferredRelease> deferred;
    Seconds                      overhead_s = 0.0;

    bool empty() const { return prefill.empty() && decode.empty(); }

    std::uint64_t prefill_tokens() const
    {
        std::uint64_t n = 0;
        for (const auto &p : prefill) n += p.tokens;
        return n;
    }

    bool operator==(const BatchPlan &) const = default;
};

/// Consecutive iterations a scheduler commits to in one decision. Most
/// policies emit a single batch; decode prepone emits its decode iterations
/// and the prefill together.
using ScheduleStep = std::vector<BatchPlan>;

// ============================================================================
// Batch formation
// ============================================================================

namespace detail {

inline std::vector<std::size_t> decoding_members(const QueueView &q, const EngineConfig &engine)
{
    std::vector<std::size_t> out;
    for (auto idx : q.running) {
        if (q.at(idx).phase == Phase::Decoding && out.size() < engine.limits.max_batch_tokens) {
            out.push_back(idx);
        }
    }
    return out;
}

/// FCFS packing of full-prompt prefills: stops at the first waiting request
/// that would break the token budget, the running-sequence cap or the KV
/// capacity. `seqs_freed` / `kv_freed` account for requests that will have
/// finished before the prefill runs.
inline std::vector<PrefillItem> select_full_prefills(const QueueView &q, const EngineConfig &engine,
                                                     std::size_t seqs_freed = 0, std::uint64_t kv_freed = 0)
{
    std::vector<PrefillItem> out;
    std::uint64_t            tokens  = 0;
    std::size_t              running = q.running.size() - seqs_freed;
    std::uint64_t            kv      = q.kv_reserved - kv_freed;
    for (auto idx : q.waiting) {
        const auto &r = q.at(idx);
        if (tokens + r.prompt_len > engine.limits.max_batch_tokens) break;
        if (running + 1 > engine.limits.max_running_seqs) break;
        if (kv + r.kv_reservation() > engine.limits.kv_capacity_tokens) break;
        out.push_back({idx, r.prompt_len});
        tokens += r.prompt_len;
        running += 1;
        kv += r.kv_reservation();
    }
    return out;
}

} // namespace detail

/// Prefill first; when nothing waiting fits, one decode iteration for every
/// decoding request.
inline BatchPlan next_batch_vllm(const QueueView &q, const EngineConfig &engine)
{
    BatchPlan plan;
    plan.prefill = detail::select_full_prefills(q, engine);
    if (plan.prefill.empty()) {
        plan.decode = detail::decoding_members(q, engine);
    }
    return plan;
}

inline BatchPlan next_batch_chunked(const QueueView &q, const EngineConfig &engine, const ChunkedPrefill &policy)
{
    BatchPlan plan;
    plan.decode = detail::decoding_members(q, engine);

    const std::uint64_t room = engine.limits.max_batch_tokens - plan.decode.size();
    const auto          budget = static_cast<std::uint32_t>(std::min<std::uint64_t>(policy.chunk_tokens, room));
    if (budget == 0) {
        return plan;
    }

    std::optional<std::size_t> head;
    for (auto idx : q.running) {
        if (q.at(idx).phase == Phase::Prefilling) {
            head = idx;
            break;
        }
    }
    if (!head && !q.waiting.empty()) {
        const auto &r = q.at(q.waiting.front());
        if (q.running.size() + 1 <= engine.limits.max_running_seqs &&
            q.kv_reserved + r.kv_reservation() <= engine.limits.kv_capacity_tokens) {
            head = r.index;
        }
    }
    if (head) {
        plan.prefill.push_back({*head, std::min(budget, q.at(*head).remaining_prompt())});
        plan.overhead_s = policy.chunk_overhead_s;
    }
    return plan;
}

/// Prepone step: up to `prepone_tokens` decode-only iterations (each request
/// joins only while it still has tokens left), then the prefill batch vLLM
/// would have run. Falls back to a single vLLM batch when there is no prefill
/// to run or nothing is decoding.
inline ScheduleStep next_batch_prepone(const QueueView &q, const EngineConfig &engine, const DecodePrepone &policy)
{
    const auto decoding = detail::decoding_members(q, engine);
    const auto direct   = detail::select_full_prefills(q, engine);
    if (direct.empty() || decoding.empty()) {
        BatchPlan plan = next_batch_vllm(q, engine);
        return plan.empty() ? ScheduleStep{} : ScheduleStep{std::move(plan)};
    }

    std::uint32_t longest = 0;
    for (auto idx : decoding) longest = std::max(longest, q.at(idx).remaining_output());
    const std::uint32_t iterations = std::min(policy.prepone_tokens, longest);

    std::size_t   seqs_freed = 0;
    std::uint64_t kv_freed   = 0;
    for (auto idx : decoding) {
        const auto &r = q.at(idx);
        if (r.remaining_output() <= iterations) {
            ++seqs_freed;
            kv_freed += r.kv_reservation();
        }
    }

    BatchPlan prefill;
    prefill.prefill = detail::select_full_prefills(q, engine, seqs_freed, kv_freed);

    const Seconds delay = policy.t_delay.value_or(iteration_time(prefill.prefill_tokens(), 0, engine) /
                                                  static_cast<double>(policy.prepone_tokens + 1));

    ScheduleStep step;
    for (std::uint32_t k = 1; k <= iterations; ++k) {
        BatchPlan plan;
        for (auto idx : decoding) {
            if (q.at(idx).remaining_output() >= k) {
                plan.decode.push_back(idx);
                plan.deferred.push_back({idx, delay * k});
            }
        }
        step.push_back(std::move(plan));
    }
    step.push_back(std::move(prefill));
    return step;
}

inline ScheduleStep plan_step(const SchedulerPolicy &policy, const QueueView &q, const EngineConfig &engine)
{
    return std::visit(
        [&](const auto &p) -> ScheduleStep {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, DecodePrepone>) {
                return next_batch_prepone(q, engine, p);
            } else {
                BatchPlan plan;
                if constexpr (std::is_same_v<P, VllmLike>) {
                    plan = next_batch_vllm(q, engine);
                } else {
                    plan = next_batch_chunked(q, engine, p);
                }
                return plan.empty() ? ScheduleStep{} : ScheduleStep{std::move(plan)};
            }
        },
        policy);
}

} // namespace smoothgp
