#pragma once

#include "smoothgp/metrics.hpp"
#include "smoothgp/simulator.hpp"
#include "smoothgp/timeline.hpp"
#include "smoothgp/workload.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace smoothgp {

// ============================================================================
// Trace JSONL
//   {"request_id", "arrival_s", "token_times_s", ["delivery_times_s",]
//    "prompt_len", "completed"}
// ============================================================================

struct TraceRecord
{
    std::string                         request_id;
    Seconds                             arrival_s = 0.0;
    std::vector<Seconds>                token_times_s;
    std::optional<std::vector<Seconds>> delivery_times_s;
    std::uint32_t                       prompt_len = 0;
    bool                                completed  = true;

    TokenTimeline generation() const { return {request_id, arrival_s, token_times_s, completed}; }

    /// What the client saw: delivery instants when present, else generation.
    TokenTimeline delivered() const
    {
        return {request_id, arrival_s, delivery_times_s.value_or(token_times_s), completed};
    }

    bool operator==(const TraceRecord &) const = default;
};

inline std::vector<TraceRecord> to_records(const SimTrace &trace)
{
    std::vector<TraceRecord> out;
    out.reserve(trace.requests.size());
    for (const auto &r : trace.requests) {
        TraceRecord rec{r.spec.request_id, r.spec.arrival, r.token_times, std::nullopt, r.spec.prompt_len,
                        r.completed};
        if (r.has_deferred_release()) rec.delivery_times_s = r.release_times;
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::string to_jsonl_line(const TraceRecord &rec)
{
    nlohmann::ordered_json j;
    j["request_id"]    = rec.request_id;
    j["arrival_s"]     = rec.arrival_s;
    j["token_times_s"] = rec.token_times_s;
    if (rec.delivery_times_s) j["delivery_times_s"] = *rec.delivery_times_s;
    j["prompt_len"] = rec.prompt_len;
    j["completed"]  = rec.completed;
    return j.dump();
}

inline TraceRecord parse_trace_record(const nlohmann::json &j)
{
    TraceRecord rec;
    rec.request_id    = j.at("request_id").get<std::string>();
    rec.arrival_s     = j.at("arrival_s").get<double>();
    rec.token_times_s = j.at("token_times_s").get<std::vector<double>>();
    if (j.contains("delivery_times_s")) {
        rec.delivery_times_s = j.at("delivery_times_s").get<std::vector<double>>();
        if (rec.delivery_times_s->size() != rec.token_times_s.size()) {
            throw std::invalid_argument("delivery_times_s and token_times_s differ in length");
        }
    }
    rec.prompt_len = j.value("prompt_len", std::uint32_t{0});
    rec.completed  = j.value("completed", true);
    validate(rec.generation());
    validate(rec.delivered(), false);
    return rec;
}

inline void save_trace(const std::string &path, const std::vector<TraceRecord> &records)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto &r : records) out << to_jsonl_line(r) << '\n';
}

inline std::vector<TraceRecord> load_trace(const std::string &path)
{
    std::vector<TraceRecord> out;
    detail::for_each_jsonl(path, [&](const nlohmann::json &j) { out.push_back(parse_trace_record(j)); });
    return out;
}

// ============================================================================
// Evaluation windows over traces
// ============================================================================

enum class TimelineKind
{
    Generation,
    Delivery,
};

/// Requests arriving in [start, end), each cut to the tokens that happened
/// before `end`. A request that lost tokens to the cut is marked in flight.
inline EvalWindow make_window(const std::vector<TraceRecord> &records, Seconds start, Seconds end,
                              TimelineKind kind = TimelineKind::Delivery)
{
    EvalWindow w{start, end, {}};
    require_window(w);
    for (const auto &rec : records) {
        if (rec.arrival_s < start || !(rec.arrival_s < end)) continue;
        TokenTimeline tl  = kind == TimelineKind::Delivery ? rec.delivered() : rec.generation();
        auto          cut = std::lower_bound(tl.token_times.begin(), tl.token_times.end(), end);
        if (cut != tl.token_times.end()) {
            tl.token_times.erase(cut, tl.token_times.end());
            tl.completed = false;
        }
        w.requests.push_back(std::move(tl));
    }
    return w;
}

/// Whole-run window: every request, T from time 0 to the last token.
inline EvalWindow full_window(const std::vector<TraceRecord> &records, TimelineKind kind = TimelineKind::Delivery)
{
    Seconds last = 0.0;
    for (const auto &r : records) {
        const auto tl = kind == TimelineKind::Delivery ? r.delivered() : r.generation();
        if (!tl.empty()) last = std::max(last, tl.token_times.back());
        last = std::max(last, r.arrival_s);
    }
    // exclusive bound just past the final event
    return make_window(records, 0.0, std::nextafter(last, std::numeric_limits<Seconds>::infinity()), kind);
}

/// Steady-state window: drops the first and last `trim` fraction of the
/// arrival horizon [0, last arrival]. trim == 0 selects the whole run.
inline EvalWindow trimmed_window(const std::vector<TraceRecord> &records, double trim,
                                 TimelineKind kind = TimelineKind::Delivery)
{
    if (!(trim >= 0.0 && trim < 0.5)) throw std::invalid_argument("trim fraction must be in [0, 0.5)");
    if (trim == 0.0) return full_window(records, kind);
    Seconds horizon = 0.0;
    for (const auto &r : records) horizon = std::max(horizon, r.arrival_s);
    return make_window(records, trim * horizon, (1.0 - trim) * horizon, kind);
}

/// Engine output rate over [start, end): every generated token in the span,
/// whichever request it belongs to, divided by the span length.
inline double engine_throughput(const std::vector<TraceRecord> &records, Seconds start, Seconds end)
{
    if (!(end > start)) throw std::invalid_argument("evaluation window has zero length");
    std::size_t n = 0;
    for (const auto &rec : records) {
        const auto &t = rec.token_times_s;
        n += static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), end) -
                                      std::lower_bound(t.begin(), t.end(), start));
    }
    return static_cast<double>(n) / (end - start);
}

// ============================================================================
// CSV / JSON writers
// ============================================================================

namespace detail {

inline std::string num(double v) { return fmt::format("{}", v); }

inline std::string opt_num(const std::optional<double> &v) { return v ? num(*v) : std::string{}; }

inline nlohmann::ordered_json opt_json(const std::optional<double> &v)
{
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::ofstream open_out(const std::string &path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

} // namespace detail

/// One row per iteration; batch membership columns make the log auditable.
inline void save_iterations_csv(const std::string &path, const SimTrace &trace)
{
    auto out = detail::open_out(path);
    out << "start_s,duration_s,prefill_tokens,decode_seqs,overhead_s,prefill_items,decode_ids\n";
    for (const auto &it : trace.iterations) {
        std::string prefill;
        for (const auto &p : it.prefill) {
            if (!prefill.empty()) prefill += ';';
            prefill += trace.requests[p.request].spec.request_id + ":" + std::to_string(p.tokens);
        }
        std::string decode;
        for (auto idx : it.decode) {
            if (!decode.empty()) decode += ';';
            decode += trace.requests[idx].spec.request_id;
        }
        out << detail::num(it.start) << ',' << detail::num(it.duration) << ',' << it.prefill_tokens << ','
            << it.decode_seqs << ',' << detail::num(it.overhead_s) << ',' << prefill << ',' << decode << '\n';
    }
}

inline const char *to_string(GoodputUnit unit) { return unit == GoodputUnit::Tokens ? "tokens" : "requests"; }

inline nlohmann::ordered_json report_to_json(const MetricsReport &report)
{
    nlohmann::ordered_json j;
    j["window_start_s"] = report.window_start;
    j["window_end_s"]   = report.window_end;
    j["goodput_unit"]   = to_string(report.goodput_unit);

    auto pct = [](const std::optional<PercentileTable> &t) {
        if (!t) return nlohmann::ordered_json(nullptr);
        nlohmann::ordered_json p;
        p["p50"] = t->p50;
        p["p90"] = t->p90;
        p["p99"] = t->p99;
        return p;
    };
    nlohmann::ordered_json agg;
    agg["requests"]            = report.requests.size();
    agg["total_tokens"]        = report.total_tokens;
    agg["throughput_tok_s"]    = report.throughput;
    agg["goodput"]             = report.goodput;
    agg["smooth_goodput"]      = report.smooth_goodput;
    agg["slo_attainment"]      = report.slo_attainment;
    agg["mean_ttft_s"]         = report.mean_ttft;
    agg["mean_idle_latency_s"] = report.mean_idle;
    agg["ttft_percentiles_s"]  = pct(report.ttft_pct);
    agg["tbt_percentiles_s"]   = pct(report.tbt_pct);
    j["aggregates"]            = agg;

    auto rows = nlohmann::ordered_json::array();
    for (const auto &r : report.requests) {
        nlohmann::ordered_json o;
        o["request_id"]     = r.request_id;
        o["arrival_s"]      = r.arrival;
        o["tokens"]         = r.tokens;
        o["completed"]      = r.completed;
        o["ttft_s"]         = detail::opt_json(r.ttft);
        o["tpot_s"]         = detail::opt_json(r.tpot);
        o["e2e_s"]          = detail::opt_json(r.e2e);
        o["max_tbt_s"]      = detail::opt_json(r.max_tbt);
        o["max_lateness_s"] = detail::opt_json(r.max_lateness);
        o["idle_latency_s"] = r.idle_latency;
        o["benefit"]        = r.benefit;
        o["met_slo"]        = r.met_slo;
        rows.push_back(std::move(o));
    }
    j["requests"] = std::move(rows);
    return j;
}

inline void save_report_json(const std::string &path, const MetricsReport &report)
{
    auto out = detail::open_out(path);
    out << report_to_json(report).dump(2) << '\n';
}

/// Flat CSV: one row per request, then "#agg,<name>,<value>" rows.
inline void save_report_csv(const std::string &path, const MetricsReport &report)
{
    auto out = detail::open_out(path);
    out << "request_id,arrival_s,tokens,completed,ttft_s,tpot_s,e2e_s,max_tbt_s,max_lateness_s,idle_latency_s,"
           "benefit,met_slo\n";
    for (const auto &r : report.requests) {
        out << r.request_id << ',' << detail::num(r.arrival) << ',' << r.tokens << ',' << (r.completed ? 1 : 0)
            << ',' << detail::opt_num(r.ttft) << ',' << detail::opt_num(r.tpot) << ',' << detail::opt_num(r.e2e)
            << ',' << detail::opt_num(r.max_tbt) << ',' << detail::opt_num(r.max_lateness) << ','
            << detail::num(r.idle_latency) << ',' << detail::num(r.benefit) << ',' << (r.met_slo ? 1 : 0) << '\n';
    }
    auto agg = [&](const char *name, const std::string &value) { out << "#agg," << name << ',' << value << '\n'; };
    agg("window_start_s", detail::num(report.window_start));
    agg("window_end_s", detail::num(report.window_end));
    agg("requests", std::to_string(report.requests.size()));
    agg("total_tokens", std::to_string(report.total_tokens));
    agg("throughput_tok_s", detail::num(report.throughput));
    agg("goodput", detail::num(report.goodput));
    agg("goodput_unit", to_string(report.goodput_unit));
    agg("smooth_goodput", detail::num(report.smooth_goodput));
    agg("slo_attainment", detail::num(report.slo_attainment));
    agg("mean_ttft_s", detail::num(report.mean_ttft));
    agg("mean_idle_latency_s", detail::num(report.mean_idle));
    if (report.ttft_pct) {
        agg("ttft_p50_s", detail::num(report.ttft_pct->p50));
        agg("ttft_p90_s", detail::num(report.ttft_pct->p90));
        agg("ttft_p99_s", detail::num(report.ttft_pct->p99));
    }
    if (report.tbt_pct) {
        agg("tbt_p50_s", detail::num(report.tbt_pct->p50));
        agg("tbt_p90_s", detail::num(report.tbt_pct->p90));
        agg("tbt_p99_s", detail::num(report.tbt_pct->p99));
    }
}

} // namespace smoothgp
