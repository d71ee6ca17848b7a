#pragma once

#include "smoothgp/engine.hpp"
#include "smoothgp/schedulers.hpp"
#include "smoothgp/timeline.hpp"
#include "smoothgp/workload.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace smoothgp {

struct IterationRecord
{
    Seconds                  start          = 0.0;
    Seconds                  duration       = 0.0;
    std::uint64_t            prefill_tokens = 0;
    std::uint64_t            decode_seqs    = 0;
    Seconds                  overhead_s     = 0.0;
    std::vector<PrefillItem> prefill;
    std::vector<std::size_t> decode;

    Seconds end() const { return start + duration; }
};

struct QueueSample
{
    Seconds     time    = 0.0;
    std::size_t waiting = 0;
    std::size_t running = 0;
};

/// Generation instants plus delivery instants of one request. Release times
/// equal generation times except for tokens a scheduler chose to hold back.
struct RequestTrace
{
    RequestSpec          spec;
    std::vector<Seconds> token_times;
    std::vector<Seconds> release_times;
    bool                 completed = false;

    bool has_deferred_release() const { return release_times != token_times; }

    TokenTimeline generation() const { return {spec.request_id, spec.arrival, token_times, completed}; }
    TokenTimeline delivery() const { return {spec.request_id, spec.arrival, release_times, completed}; }
};

struct SimTrace
{
    std::vector<RequestTrace>    requests; // workload order
    std::vector<IterationRecord> iterations;
    std::vector<QueueSample>     queue;
    std::vector<ScheduleStep>    decisions; // replayable decision log
};

namespace detail {

/// Single-owner event loop state. Used both for live scheduling and for
/// replaying a recorded decision log.
class EventLoop
{
public:
    EventLoop(std::span<const RequestSpec> workload, const EngineConfig &engine) : workload_(workload), engine_(engine)
    {
        validate(engine);
        for (std::size_t i = 0; i < workload.size(); ++i) {
            validate(workload[i]);
            if (i > 0 && workload[i].arrival < workload[i - 1].arrival) {
                throw std::invalid_argument("workload must be sorted by arrival");
            }
        }
        states_.resize(workload.size());
        trace_.requests.resize(workload.size());
        for (std::size_t i = 0; i < workload.size(); ++i) {
            states_[i] = RequestState{i, workload[i].arrival, workload[i].prompt_len, workload[i].output_len};
            trace_.requests[i].spec = workload[i];
            trace_.requests[i].token_times.reserve(workload[i].output_len);
        }
        // ties on arrival are admitted in request_id order
        admission_order_.resize(workload.size());
        std::iota(admission_order_.begin(), admission_order_.end(), std::size_t{0});
        std::stable_sort(admission_order_.begin(), admission_order_.end(), [&](std::size_t a, std::size_t b) {
            if (workload[a].arrival != workload[b].arrival) return workload[a].arrival < workload[b].arrival;
            return workload[a].request_id < workload[b].request_id;
        });
    }

    bool done() const { return finished_ == workload_.size(); }
    bool idle() const { return waiting_.empty() && running_.empty(); }
    bool has_future_arrivals() const { return next_arrival_ < admission_order_.size(); }
    Seconds next_arrival_time() const { return workload_[admission_order_[next_arrival_]].arrival; }
    Seconds now() const { return now_; }

    void advance_to(Seconds t) { now_ = std::max(now_, t); }

    void admit_arrivals()
    {
        while (has_future_arrivals() && next_arrival_time() <= now_) {
            waiting_.push_back(admission_order_[next_arrival_++]);
        }
    }

    QueueView view() const { return QueueView{now_, states_, waiting_, running_, kv_reserved_}; }

    /// Executes every batch of a step back to back, then resolves deferred
    /// releases against the step's end.
    void execute(const ScheduleStep &step)
    {
        std::vector<std::pair<std::size_t, std::size_t>> held; // (request, token slot)
        for (const auto &plan : step) {
            check(plan);
            run_batch(plan, held);
        }
        for (auto [req, slot] : held) {
            auto &rt  = trace_.requests[req];
            auto &rel = rt.release_times[slot];
            rel       = std::max(rt.token_times[slot], std::min(rel, now_));
        }
        trace_.decisions.push_back(step);
    }

    /// Latest arrival among requests a step admits; replay must not start the
    /// step before them.
    Seconds admission_floor(const ScheduleStep &step) const
    {
        Seconds t = 0.0;
        for (const auto &plan : step) {
            for (const auto &p : plan.prefill) {
                if (p.request < states_.size() && states_[p.request].phase == Phase::Waiting) {
                    t = std::max(t, states_[p.request].arrival);
                }
            }
        }
        return t;
    }

    std::string stuck_diagnostic() const
    {
        std::string ids;
        for (auto idx : waiting_) {
            if (!ids.empty()) ids += ", ";
            ids += workload_[idx].request_id;
            if (ids.size() > 200) {
                ids += ", ...";
                break;
            }
        }
        return "no schedulable work and no future arrivals; waiting requests can never be admitted: " + ids;
    }

    SimTrace take() { return std::move(trace_); }

private:
    [[noreturn]] void reject(const std::string &why) const
    {
        throw SimulationError("scheduler produced an invalid batch at t=" + std::to_string(now_) + ": " + why);
    }

    void check(const BatchPlan &plan) const
    {
        if (plan.empty()) reject("empty batch");
        std::vector<char> seen(states_.size(), 0);
        auto              mark = [&](std::size_t idx) {
            if (idx >= states_.size()) reject("unknown request index " + std::to_string(idx));
            if (seen[idx]++) reject("request " + workload_[idx].request_id + " appears twice");
        };
        std::size_t   admitted = 0;
        std::uint64_t kv       = kv_reserved_;
        for (const auto &p : plan.prefill) {
            mark(p.request);
            const auto &r = states_[p.request];
            if (r.phase == Phase::Waiting) {
                if (r.arrival > now_) reject("request " + workload_[p.request].request_id + " has not arrived");
                ++admitted;
                kv += r.kv_reservation();
            } else if (r.phase != Phase::Prefilling) {
                reject("prefill for request " + workload_[p.request].request_id + " in phase " + to_string(r.phase));
            }
            if (p.tokens < 1 || p.tokens > r.remaining_prompt()) {
                reject("prefill span of " + std::to_string(p.tokens) + " tokens for request " +
                       workload_[p.request].request_id);
            }
        }
        for (auto idx : plan.decode) {
            mark(idx);
            if (states_[idx].phase != Phase::Decoding) {
                reject("decode for request " + workload_[idx].request_id + " in phase " +
                       to_string(states_[idx].phase));
            }
        }
        for (const auto &d : plan.deferred) {
            if (std::find(plan.decode.begin(), plan.decode.end(), d.request) == plan.decode.end()) {
                reject("deferred release for a request outside the decode set");
            }
            if (!(d.delay >= 0.0)) reject("negative release delay");
        }
        if (plan.prefill_tokens() + plan.decode.size() > engine_.limits.max_batch_tokens) {
            reject("batch exceeds max_batch_tokens");
        }
        if (running_.size() + admitted > engine_.limits.max_running_seqs) {
            reject("batch exceeds max_running_seqs");
        }
        if (kv > engine_.limits.kv_capacity_tokens) {
            reject("batch exceeds kv_capacity_tokens");
        }
        if (plan.overhead_s < 0.0) reject("negative overhead");
    }

    void emit(std::size_t idx, Seconds t)
    {
        auto &rt = trace_.requests[idx];
        rt.token_times.push_back(t);
        rt.release_times.push_back(t);
        auto &r = states_[idx];
        ++r.tokens_emitted;
        if (r.tokens_emitted == r.output_len) {
            r.phase      = Phase::Finished;
            rt.completed = true;
            kv_reserved_ -= r.kv_reservation();
            running_.erase(std::find(running_.begin(), running_.end(), idx));
            ++finished_;
        }
    }

    void run_batch(const BatchPlan &plan, std::vector<std::pair<std::size_t, std::size_t>> &held)
    {
        trace_.queue.push_back({now_, waiting_.size(), running_.size()});

        IterationRecord rec;
        rec.start          = now_;
        rec.prefill_tokens = plan.prefill_tokens();
        rec.decode_seqs    = plan.decode.size();
        rec.overhead_s     = plan.overhead_s;
        rec.duration       = iteration_time(rec.prefill_tokens, rec.decode_seqs, engine_, plan.overhead_s);
        rec.prefill        = plan.prefill;
        rec.decode         = plan.decode;
        if (!(rec.duration > 0.0)) {
            throw SimulationError("iteration with zero duration at t=" + std::to_string(now_) +
                                  "; give the cost model a positive base_s");
        }
        const Seconds end = rec.end();

        for (const auto &p : plan.prefill) {
            auto &r = states_[p.request];
            if (r.phase == Phase::Waiting) {
                waiting_.erase(std::find(waiting_.begin(), waiting_.end(), p.request));
                running_.push_back(p.request);
                kv_reserved_ += r.kv_reservation();
                r.phase = Phase::Prefilling;
            }
            r.prefill_done += p.tokens;
            r.kv_tokens += p.tokens;
        }
        for (auto idx : plan.decode) {
            ++states_[idx].kv_tokens;
            emit(idx, end);
        }
        for (const auto &d : plan.deferred) {
            auto &rt = trace_.requests[d.request];
            held.emplace_back(d.request, rt.token_times.size() - 1);
            rt.release_times.back() = rt.token_times.back() + d.delay;
        }
        // the prefill's last chunk produces the first output token
        for (const auto &p : plan.prefill) {
            auto &r = states_[p.request];
            if (r.prefill_done == r.prompt_len) {
                r.phase = Phase::Decoding;
                emit(p.request, end);
            }
        }

        trace_.iterations.push_back(std::move(rec));
        now_ = end;
    }

    std::span<const RequestSpec> workload_;
    EngineConfig                 engine_;
    std::vector<RequestState>    states_;
    std::vector<std::size_t>     admission_order_;
    std::size_t                  next_arrival_ = 0;
    std::vector<std::size_t>     waiting_;
    std::vector<std::size_t>     running_;
    std::uint64_t                kv_reserved_ = 0;
    std::size_t                  finished_    = 0;
    Seconds                      now_         = 0.0;
    SimTrace                     trace_;
};

} // namespace detail

/// Runs the workload to completion: admit arrivals, ask the scheduler for the
/// next step, advance the clock by each iteration's cost-model duration and
/// stamp the tokens it produced at the iteration's end.
inline SimTrace simulate(std::span<const RequestSpec> workload, const EngineConfig &engine,
                         const SchedulerPolicy &policy)
{
    validate(policy);
    detail::EventLoop loop(workload, engine);
    while (!loop.done()) {
        loop.admit_arrivals();
        if (loop.idle()) {
            loop.advance_to(loop.next_arrival_time());
            continue;
        }
        const ScheduleStep step = plan_step(policy, loop.view(), engine);
        if (step.empty()) {
            if (!loop.has_future_arrivals()) {
                throw SimulationError(loop.stuck_diagnostic());
            }
            loop.advance_to(loop.next_arrival_time());
            continue;
        }
        loop.execute(step);
    }
    return loop.take();
}

/// Re-executes a recorded decision log under a (possibly different) engine
/// cost model. Each step starts no earlier than the arrivals it admits.
inline SimTrace replay(std::span<const RequestSpec> workload, const EngineConfig &engine,
                       std::span<const ScheduleStep> decisions)
{
    detail::EventLoop loop(workload, engine);
    for (const auto &step : decisions) {
        loop.advance_to(loop.admission_floor(step));
        loop.admit_arrivals();
        loop.execute(step);
    }
    if (!loop.done()) {
        throw SimulationError("decision log ends before every request finished");
    }
    return loop.take();
}

} // namespace smoothgp
