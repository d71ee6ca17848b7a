#pragma once

#include "smoothgp/config.hpp"
#include "smoothgp/delivery.hpp"
#include "smoothgp/metrics.hpp"
#include "smoothgp/simulator.hpp"
#include "smoothgp/trace_io.hpp"
#include "smoothgp/workload.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace smoothgp {

// ============================================================================
// Single cell: one (variant, rate) simulation plus its metrics
// ============================================================================

struct CellOutput
{
    std::string              variant;
    double                   rate = 0.0;
    SimTrace                 sim;
    std::vector<TraceRecord> records; // delivery transform already applied
    EvalWindow               window;
    MetricsReport            report;
    double                   engine_throughput = 0.0;
};

/// Applies the output-delay buffer on top of whatever delivery instants the
/// record already carries (scheduler-held releases included).
inline void apply_delivery(std::vector<TraceRecord> &records, const DelayConfig &cfg)
{
    for (auto &rec : records) {
        rec.delivery_times_s = apply_output_delay(rec.delivered(), cfg).token_times;
    }
}

inline EvalWindow cell_window(const ExperimentConfig &cfg, const std::vector<TraceRecord> &records)
{
    if (cfg.window) return make_window(records, cfg.window->first, cfg.window->second);
    return trimmed_window(records, cfg.trim_fraction);
}

inline CellOutput run_cell(const ExperimentConfig &cfg, const Variant &variant, double rate,
                           const std::vector<RequestSpec> &workload)
{
    CellOutput out;
    out.variant = variant.name;
    out.rate    = rate;
    out.sim     = simulate(workload, cfg.engine, variant.scheduler);
    out.records = to_records(out.sim);
    if (variant.delivery) apply_delivery(out.records, *variant.delivery);
    out.window = cell_window(cfg, out.records);
    out.report = build_report(out.window, cfg.deadline, cfg.benefit, cfg.goodput_unit);
    out.engine_throughput = engine_throughput(out.records, out.window.start, out.window.end);
    return out;
}

inline CellOutput run_cell(const ExperimentConfig &cfg, const Variant &variant, double rate)
{
    return run_cell(cfg, variant, rate, generate(cfg.workload_at(rate)));
}

// ============================================================================
// Sweep summary
// ============================================================================

struct SummaryRow
{
    std::string            variant;
    double                 rate           = 0.0;
    std::size_t            requests       = 0;
    double                 throughput     = 0.0; // engine output inside the window
    double                 window_throughput = 0.0; // tokens of the window's requests
    double                 goodput        = 0.0;
    double                 smooth_goodput = 0.0;
    double                 slo_attainment = 0.0;
    std::optional<Seconds> p99_tbt;
    Seconds                mean_ttft = 0.0;
    Seconds                mean_idle = 0.0;
    std::string            error; // non-empty when the cell failed
};

struct SweepResult
{
    std::vector<SummaryRow>  rows; // rate-major, variants in config order
    std::vector<std::string> artifacts;
};

inline SummaryRow summarize(const std::string &variant, double rate, const MetricsReport &r,
                            std::optional<double> engine_tput = std::nullopt)
{
    SummaryRow row;
    row.variant           = variant;
    row.rate              = rate;
    row.requests          = r.requests.size();
    row.throughput        = engine_tput.value_or(r.throughput);
    row.window_throughput = r.throughput;
    row.goodput        = r.goodput;
    row.smooth_goodput = r.smooth_goodput;
    row.slo_attainment = r.slo_attainment;
    if (r.tbt_pct) row.p99_tbt = r.tbt_pct->p99;
    row.mean_ttft = r.mean_ttft;
    row.mean_idle = r.mean_idle;
    return row;
}

inline std::string summary_csv(const std::vector<SummaryRow> &rows)
{
    std::string out = "variant,rate,requests,throughput_tok_s,window_throughput_tok_s,goodput,smooth_goodput,slo_attainment,p99_tbt_s,"
                      "mean_ttft_s,mean_idle_latency_s,error\n";
    for (const auto &r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.variant, r.rate, r.requests, r.throughput,
                           r.window_throughput, r.goodput,
                           r.smooth_goodput, r.slo_attainment, r.p99_tbt ? fmt::format("{}", *r.p99_tbt) : "",
                           r.mean_ttft, r.mean_idle, err);
    }
    return out;
}

// ============================================================================
// Plot-ready tables
// ============================================================================

/// Per-token generation, delivery and deadline times relative to arrival
/// (token-vs-time plots).
inline void save_token_timeline_csv(const std::string &path, const std::vector<TraceRecord> &records,
                                    const DeadlinePolicy &policy)
{
    auto out = detail::open_out(path);
    out << "request_id,token_index,generated_rel_s,delivered_rel_s,deadline_rel_s\n";
    for (const auto &rec : records) {
        const auto delivered = rec.delivered();
        for (std::size_t i = 0; i < rec.token_times_s.size(); ++i) {
            out << rec.request_id << ',' << (i + 1) << ',' << detail::num(rec.token_times_s[i] - rec.arrival_s) << ','
                << detail::num(delivered.token_times[i] - rec.arrival_s) << ','
                << detail::num(deadline_at(policy, delivered, i)) << '\n';
        }
    }
}

/// Empirical TBT CDF of the window's requests for both timelines, sampled at
/// up to 1000 evenly spaced quantiles.
inline void save_tbt_cdf_csv(const std::string &path, const std::vector<TraceRecord> &records, const EvalWindow &window)
{
    auto out = detail::open_out(path);
    out << "timeline,tbt_s,cdf\n";
    for (auto kind : {TimelineKind::Generation, TimelineKind::Delivery}) {
        const auto           w = make_window(records, window.start, window.end, kind);
        std::vector<Seconds> gaps;
        for (const auto &tl : w.requests) {
            if (tl.size() < 2) continue;
            const auto s = tbt_series(tl);
            gaps.insert(gaps.end(), s.begin(), s.end());
        }
        if (gaps.empty()) continue;
        std::sort(gaps.begin(), gaps.end());
        const std::size_t m = std::min<std::size_t>(gaps.size(), 1000);
        for (std::size_t k = 1; k <= m; ++k) {
            const double q = static_cast<double>(k) / static_cast<double>(m);
            out << (kind == TimelineKind::Generation ? "generated" : "delivered") << ','
                << detail::num(gaps[nearest_rank(gaps.size(), q) - 1])
                << ',' << detail::num(q) << '\n';
        }
    }
}

// ============================================================================
// Experiment orchestration
// ============================================================================

namespace detail {

inline std::string sanitize(const std::string &s)
{
    std::string out;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_' || c == '.';
        out += ok ? c : '_';
    }
    return out;
}

inline std::string rate_tag(double rate) { return "rate" + fmt::format("{}", rate); }

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn &&fn)
{
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
}

inline void write_text(const std::filesystem::path &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

} // namespace detail

/// Writes a manifest listing every artifact and the resolved config.
inline void write_manifest(const std::filesystem::path &dir, const std::string &command, const ExperimentConfig &cfg,
                           const std::vector<std::string> &artifacts)
{
    nlohmann::ordered_json m;
    m["command"]   = command;
    m["config"]    = to_json(cfg);
    m["artifacts"] = artifacts;
    detail::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

/// Per-cell artifacts under <dir>/cells/<variant>_<rate>/. Returns paths
/// relative to `dir`.
inline std::vector<std::string> write_cell(const std::filesystem::path &dir, const ExperimentConfig &cfg,
                                           const CellOutput &cell)
{
    namespace fs         = std::filesystem;
    const fs::path rel   = fs::path("cells") / (detail::sanitize(cell.variant) + "_" + detail::rate_tag(cell.rate));
    const fs::path where = dir / rel;
    fs::create_directories(where);
    std::vector<std::string> files{"trace.jsonl", "iterations.csv", "report.json", "report.csv"};
    save_trace((where / "trace.jsonl").string(), cell.records);
    save_iterations_csv((where / "iterations.csv").string(), cell.sim);
    save_report_json((where / "report.json").string(), cell.report);
    save_report_csv((where / "report.csv").string(), cell.report);
    if (cfg.emit_tables) {
        save_token_timeline_csv((where / "token_timeline.csv").string(), cell.records, cfg.deadline);
        save_tbt_cdf_csv((where / "tbt_cdf.csv").string(), cell.records, cell.window);
        files.push_back("token_timeline.csv");
        files.push_back("tbt_cdf.csv");
    }
    std::vector<std::string> out;
    for (const auto &f : files) out.push_back((rel / f).generic_string());
    return out;
}

/// Every (variant, rate) cell: generate the rate's workload once so all
/// variants see identical arrivals, simulate, deliver, evaluate. A failing
/// cell becomes an error row; the others still run. With `out_dir` set,
/// per-cell artifacts, workloads, summary.csv and manifest.json are written.
inline SweepResult run_experiment(const ExperimentConfig &cfg,
                                  const std::optional<std::filesystem::path> &out_dir = std::nullopt,
                                  const std::string &command = "sweep")
{
    namespace fs = std::filesystem;
    validate(cfg);
    if (out_dir) fs::create_directories(*out_dir);

    const std::size_t                     nrates = cfg.rates.size();
    const std::size_t                     nvars  = cfg.variants.size();
    std::vector<std::vector<RequestSpec>> workloads(nrates);
    std::vector<std::string>              workload_errors(nrates);
    detail::parallel_for(nrates, cfg.threads, [&](std::size_t i) {
        try {
            workloads[i] = generate(cfg.workload_at(cfg.rates[i]));
        } catch (const std::exception &e) {
            workload_errors[i] = e.what();
        }
    });

    SweepResult result;
    if (out_dir) {
        fs::create_directories(*out_dir / "workloads");
        for (std::size_t i = 0; i < nrates; ++i) {
            if (!workload_errors[i].empty()) continue;
            const auto rel = fs::path("workloads") / (detail::rate_tag(cfg.rates[i]) + ".jsonl");
            save_workload((*out_dir / rel).string(), workloads[i]);
            result.artifacts.push_back(rel.generic_string());
        }
    }

    std::vector<SummaryRow>               rows(nrates * nvars);
    std::vector<std::vector<std::string>> cell_files(nrates * nvars);
    detail::parallel_for(nrates * nvars, cfg.threads, [&](std::size_t k) {
        const std::size_t ri = k / nvars;
        const auto       &v  = cfg.variants[k % nvars];
        rows[k].variant      = v.name;
        rows[k].rate         = cfg.rates[ri];
        try {
            if (!workload_errors[ri].empty()) throw std::runtime_error(workload_errors[ri]);
            const auto cell = run_cell(cfg, v, cfg.rates[ri], workloads[ri]);
            rows[k]         = summarize(v.name, cfg.rates[ri], cell.report, cell.engine_throughput);
            if (out_dir) cell_files[k] = write_cell(*out_dir, cfg, cell);
        } catch (const std::exception &e) {
            rows[k].error = e.what();
        }
    });

    result.rows = std::move(rows);
    for (auto &files : cell_files) result.artifacts.insert(result.artifacts.end(), files.begin(), files.end());
    if (out_dir) {
        detail::write_text(*out_dir / "summary.csv", summary_csv(result.rows));
        result.artifacts.push_back("summary.csv");
        write_manifest(*out_dir, command, cfg, result.artifacts);
    }
    return result;
}

// ============================================================================
// Capacity search
// ============================================================================

class CapacityError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct CapacityProbe
{
    double rate       = 0.0;
    double attainment = 0.0;
};

struct CapacityResult
{
    double                     rate      = 0.0;
    double                     threshold = 0.0;
    std::vector<CapacityProbe> probes;
};

/// SLO attainment of the first variant at `rate`, from a full simulation.
inline double attainment_at(const ExperimentConfig &cfg, double rate)
{
    return run_cell(cfg, cfg.variants.front(), rate).report.slo_attainment;
}

/// Largest rate in [min_rate, max_rate] whose attainment stays >= threshold,
/// found by bisection down to the configured resolution.
inline CapacityResult capacity_search(const ExperimentConfig &cfg, double threshold)
{
    validate(cfg);
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in (0, 1]");
    CapacityResult res;
    res.threshold = threshold;
    auto probe    = [&](double rate) {
        const double a = attainment_at(cfg, rate);
        res.probes.push_back({rate, a});
        return a;
    };

    double lo = cfg.capacity.min_rate;
    double hi = cfg.capacity.max_rate;
    if (probe(lo) < threshold) {
        throw CapacityError(fmt::format("infeasible bracket: attainment {} at min_rate {} is below threshold {}",
                                        res.probes.back().attainment, lo, threshold));
    }
    if (probe(hi) >= threshold) {
        res.rate = hi;
        return res;
    }
    while (hi - lo > cfg.capacity.resolution) {
        const double mid = 0.5 * (lo + hi);
        (probe(mid) >= threshold ? lo : hi) = mid;
    }
    res.rate = lo;
    return res;
}

inline nlohmann::ordered_json to_json(const CapacityResult &res)
{
    nlohmann::ordered_json j;
    j["capacity_rate"] = res.rate;
    j["threshold"]     = res.threshold;
    auto probes        = nlohmann::ordered_json::array();
    for (const auto &p : res.probes) probes.push_back({{"rate", p.rate}, {"attainment", p.attainment}});
    j["probes"] = probes;
    return j;
}

} // namespace smoothgp
