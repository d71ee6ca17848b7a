// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

#include "smoothgp/config.hpp"
#include "smoothgp/delivery.hpp"
#include "smoothgp/experiment.hpp"
#include "smoothgp/metrics.hpp"
#include "smoothgp/simulator.hpp"
#include "smoothgp/trace_io.hpp"
#include "smoothgp/workload.hpp"
#include "test_util.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>

using namespace smoothgp;
using smoothgp::testing::fixture;
using smoothgp::testing::random_timeline;
using smoothgp::testing::read_file;
using smoothgp::testing::scratch_dir;

namespace {

// ---------------------------------------------------------------------------
// harness
// ---------------------------------------------------------------------------

struct Check
{
    bool        ok = true;
    std::string detail;

    void expect(bool cond, const std::string &what)
    {
        if (!cond && ok) detail = what; // keep the first failure
        ok = ok && cond;
    }
};

bool close_rel(double a, double b, double rel = 1e-9)
{
    if (a == b) return true;
    return std::fabs(a - b) <= rel * std::max({std::fabs(a), std::fabs(b), 1e-300});
}

// ---------------------------------------------------------------------------
// brute-force oracle: straight loops over raw timestamps
// ---------------------------------------------------------------------------

namespace oracle {

double deadline(const DeadlinePolicy &p, const std::vector<double> &rel, std::size_t i)
{
    if (const auto *tt = std::get_if<TtftTbt>(&p)) return i == 0 ? tt->ttft_budget : rel[i - 1] + tt->tbt_budget;
    if (const auto *e = std::get_if<EndToEnd>(&p)) return e->e2e_budget;
    const auto &rs = std::get<ReadingSpeed>(p);
    return rs.first_token_allowance + rs.per_token_budget * static_cast<double>(i);
}

std::vector<double> rel(const TokenTimeline &t)
{
    std::vector<double> r;
    for (double x : t.token_times) r.push_back(x - t.arrival);
    return r;
}

double idle(const TokenTimeline &t, const DeadlinePolicy &p)
{
    const auto r     = rel(t);
    double     worst = -INFINITY;
    for (std::size_t i = 0; i < r.size(); ++i) worst = std::max(worst, r[i] - deadline(p, r, i));
    return worst > 0.0 ? worst : 0.0;
}

bool meets(const TokenTimeline &t, const DeadlinePolicy &p)
{
    const auto r = rel(t);
    for (std::size_t i = 0; i < r.size(); ++i)
        if (r[i] > deadline(p, r, i)) return false;
    return true;
}

double benefit(const TokenTimeline &t, const DeadlinePolicy &p, double alpha, double budget)
{
    if (t.token_times.empty()) return 0.0;
    return static_cast<double>(t.token_times.size()) - alpha * (idle(t, p) / budget);
}

} // namespace oracle

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

Check metric_oracle()
{
    Check                                  c;
    std::mt19937_64                        gen(2024);
    std::uniform_int_distribution<int>     len(1, 80);
    std::uniform_real_distribution<double> arr(0.0, 30.0);
    const DeadlinePolicy policies[] = {TtftTbt{0.5, 0.1}, EndToEnd{4.0}, ReadingSpeed{0.05, 0.05},
                                       ReadingSpeed{0.04, 0.8}};
    const double         alpha = 5.0, budget = 0.05;
    const BenefitParams  params{alpha, TokensEquivalent{budget}};

    EvalWindow w{0.0, 40.0, {}};
    for (int k = 0; k < 200; ++k) {
        auto t = random_timeline(gen, static_cast<std::size_t>(len(gen)), arr(gen), fmt::format("t{}", k));
        const auto r = oracle::rel(t);
        c.expect(close_rel(ttft(t), t.token_times[0] - t.arrival), "ttft");
        c.expect(close_rel(e2e_latency(t), t.token_times.back() - t.arrival), "e2e");
        const auto s = tbt_series(t);
        c.expect(s.size() == t.size() - 1, "tbt length");
        for (std::size_t i = 0; i < s.size(); ++i)
            c.expect(close_rel(s[i], t.token_times[i + 1] - t.token_times[i]), "tbt value");
        if (t.size() >= 2) {
            c.expect(close_rel(tpot(t), (t.token_times.back() - t.token_times.front()) /
                                            static_cast<double>(t.size() - 1)),
                     "tpot");
        }
        for (const auto &p : policies) {
            c.expect(close_rel(user_idle_latency(t, p), oracle::idle(t, p)), "idle latency");
            c.expect(meets_slo(t, p) == oracle::meets(t, p), "meets_slo");
            c.expect(close_rel(benefit(t, p, params), oracle::benefit(t, p, alpha, budget)), "benefit");
        }
        // every 7th request is cut off mid-stream to exercise in-flight accounting
        if (k % 7 == 0 && t.size() > 2) {
            t.token_times.resize(t.size() / 2);
            t.completed = false;
        }
        if (t.arrival < w.end && (t.token_times.empty() || t.token_times.back() < w.end)) w.requests.push_back(t);
    }
    for (const auto &p : policies) {
        std::size_t tokens = 0, good_tokens = 0, good_reqs = 0, met = 0;
        double      bsum   = 0.0;
        for (const auto &t : w.requests) {
            tokens += t.size();
            bsum += oracle::benefit(t, p, alpha, budget);
            if (t.completed && oracle::meets(t, p)) {
                good_tokens += t.size();
                ++good_reqs;
            }
            bool in_time = oracle::meets(t, p);
            if (!t.completed) in_time = in_time && t.arrival + oracle::deadline(p, oracle::rel(t), t.size()) >= w.end;
            met += in_time;
        }
        const double T = w.end - w.start;
        c.expect(total_tokens(w) == tokens, "token count");
        c.expect(close_rel(throughput(w), static_cast<double>(tokens) / T), "throughput");
        c.expect(close_rel(goodput(w, p), static_cast<double>(good_tokens) / T), "goodput");
        c.expect(close_rel(goodput(w, p, GoodputUnit::Requests), static_cast<double>(good_reqs) / T), "goodput req");
        c.expect(close_rel(smooth_goodput(w, p, params), bsum / T), "smooth goodput");
        c.expect(close_rel(slo_attainment(w, p), static_cast<double>(met) / static_cast<double>(w.requests.size())),
                 "slo attainment");
    }
    c.detail = c.ok ? fmt::format("200 timelines x 4 policies, {} windowed requests", w.requests.size()) : c.detail;
    return c;
}

Check smooth_identities()
{
    Check           c;
    std::mt19937_64 gen(7);
    const DeadlinePolicy policies[] = {ReadingSpeed{0.05, 0.5}, TtftTbt{0.6, 0.12}, EndToEnd{3.0}};
    for (int k = 0; k < 50; ++k) {
        EvalWindow w{0.0, 25.0, {}}, early{0.0, 25.0, {}};
        for (int j = 0; j < 10; ++j) {
            w.requests.push_back(random_timeline(gen, 1 + (k * 7 + j) % 50, 2.0 * j));
            // strictly inside every policy's deadlines: first at +0.01, then every 0.01
            TokenTimeline e{"e", 2.0 * j, {}, true};
            for (int i = 0; i < 1 + (k + j) % 40; ++i) e.token_times.push_back(2.0 * j + 0.01 * (i + 1));
            early.requests.push_back(e);
        }
        for (const auto &p : policies) {
            c.expect(close_rel(smooth_goodput(w, p, {0.0, TokensEquivalent{0.05}}), throughput(w)), "alpha=0 identity");
            for (double a : {0.0, 1.0, 5.0, 50.0}) {
                for (const PenaltyFn f : {PenaltyFn{TokensEquivalent{0.05}}, PenaltyFn{LinearSeconds{2.0}},
                                          PenaltyFn{Indicator{0.1, 3.0}}}) {
                    c.expect(close_rel(smooth_goodput(early, p, {a, f}), throughput(early)), "all-early identity");
                }
            }
            double prev = INFINITY;
            for (double a = 0.0; a <= 20.0; a += 0.5) {
                const double s = smooth_goodput(w, p, {a, TokensEquivalent{0.05}});
                c.expect(s <= prev, "monotone in alpha");
                prev = s;
            }
        }
    }
    if (c.ok) c.detail = "50 windows x 3 policies";
    return c;
}

Check stall_reproduction()
{
    Check                          c;
    const std::vector<RequestSpec> w{{"A", 0.0, 10, 40}, {"B", 0.05, 300, 5}};
    EngineConfig                   e;
    e.cost = {0.01, 0.001, 0.002};

    // A's stall: its token gap minus the duration of the iteration that produced the token
    auto max_stall = [&](const SimTrace &t) {
        double worst = 0.0;
        for (std::size_t i = 1; i < t.requests[0].token_times.size(); ++i) {
            const double tk = t.requests[0].token_times[i];
            for (const auto &it : t.iterations) {
                if (std::fabs(it.end() - tk) < 1e-12) worst = std::max(worst, tk - t.requests[0].token_times[i - 1] - it.duration);
            }
        }
        return worst;
    };
    auto max_gap = [](const SimTrace &t) {
        double g = 0.0;
        const auto &a = t.requests[0].token_times;
        for (std::size_t i = 1; i < a.size(); ++i) g = std::max(g, a[i] - a[i - 1]);
        return g;
    };

    const auto   v       = simulate(w, e, VllmLike{});
    const double prefill = iteration_time(300, 0, e);
    c.expect(std::fabs(max_stall(v) - prefill) <= 1e-9, fmt::format("vllm stall {} vs prefill {}", max_stall(v), prefill));
    int stalls = 0;
    const auto &a = v.requests[0].token_times;
    for (std::size_t i = 1; i < a.size(); ++i) stalls += (a[i] - a[i - 1]) > prefill;
    c.expect(stalls == 1, "exactly one stalled gap under vllm");

    const auto   ch    = simulate(w, e, ChunkedPrefill{100, 0.0});
    const double bound = e.cost.prefill_per_token_s * 300.0 / 3.0 + e.cost.base_s + e.cost.decode_per_seq_s * 1.0;
    c.expect(max_gap(ch) <= bound + 1e-12, fmt::format("chunked max gap {} > bound {}", max_gap(ch), bound));

    const auto             pp  = simulate(w, e, DecodePrepone{2, std::nullopt});
    const IterationRecord *pre = nullptr;
    for (const auto &it : pp.iterations)
        if (!it.prefill.empty() && it.prefill[0].request == 1) pre = &it;
    c.expect(pre != nullptr, "B prefill iteration present");
    if (pre) {
        const auto         &ra = pp.requests[0];
        std::vector<double> releases;
        for (std::size_t k = 0; k < ra.token_times.size(); ++k) {
            if (ra.release_times[k] != ra.token_times[k]) releases.push_back(ra.release_times[k]);
        }
        c.expect(releases.size() == 2, "two deferred releases");
        for (double r : releases) c.expect(r > pre->start && r < pre->end(), "release strictly inside B's prefill");
        if (releases.size() == 2) c.expect(releases[0] < releases[1], "staggered releases");
    }
    if (c.ok) {
        c.detail = fmt::format("vllm stall {:.6f}s = prefill {:.6f}s; chunked max gap {:.6f}s <= {:.6f}s", max_stall(v),
                               prefill, max_gap(ch), bound);
    }
    return c;
}

Check output_delay_indictment()
{
    Check               c;
    const TtftTbt       tt{1.0, 0.1};
    const ReadingSpeed  rs{0.05, 1.0};
    const DelayConfig   dc{TbtCap{0.05}, false}; // hold <= tbt budget
    const EngineConfig  e;
    double              min_margin = INFINITY;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const double rate = 2.0 + 0.1 * static_cast<double>(seed % 10);
        const auto   wl   = generate(WorkloadConfig{rate, 200, seed, SyntheticSource{}});
        auto         recs = to_records(simulate(wl, e, VllmLike{}));
        auto         held = recs;
        apply_delivery(held, dc);
        const auto gw = full_window(recs, TimelineKind::Generation);
        const auto dw = full_window(held, TimelineKind::Delivery);

        c.expect(slo_attainment(dw, tt) >= slo_attainment(gw, tt), fmt::format("seed {}: attainment dropped", seed));
        std::vector<double> g, d;
        for (std::size_t i = 0; i < gw.requests.size(); ++i) {
            const auto &a = gw.requests[i];
            const auto &b = dw.requests[i];
            c.expect(ttft(a) == ttft(b), "ttft changed");
            c.expect(user_idle_latency(b, rs) >= user_idle_latency(a, rs), "idle latency reduced");
            const auto sa = tbt_series(a), sb = tbt_series(b);
            g.insert(g.end(), sa.begin(), sa.end());
            d.insert(d.end(), sb.begin(), sb.end());
        }
        const double pg = percentile(g, 0.99), pd = percentile(d, 0.99);
        c.expect(pd <= pg, fmt::format("seed {}: p99 delivered {} > generated {}", seed, pd, pg));
        min_margin = std::min(min_margin, pg - pd);
    }
    if (c.ok) c.detail = fmt::format("20 traces, hold 0.05s <= tbt 0.1s, min p99 margin {:.4f}s", min_margin);
    return c;
}

Check sweep_shapes()
{
    Check            c;
    ExperimentConfig cfg; // default engine, deadline, benefit
    cfg.rates = {1.0, 2.0, 3.0, 4.0, 6.0, 9.0};
    const auto res = run_experiment(cfg);
    const auto &r  = res.rows;
    for (const auto &row : r) c.expect(row.error.empty(), row.error);
    if (!c.ok) return c;
    for (std::size_t i = 1; i < r.size(); ++i)
        c.expect(r[i].throughput >= 0.95 * r[i - 1].throughput, "throughput drops beyond the band");
    const double a = r[4].throughput, b = r[5].throughput;
    c.expect(std::fabs(a - b) <= 0.05 * std::max(a, b), fmt::format("no plateau: {} vs {}", a, b));
    c.expect(r.back().mean_ttft >= 10.0 * r.front().mean_ttft, "ttft growth < 10x");
    double best = -INFINITY;
    for (std::size_t i = 1; i + 1 < r.size(); ++i) best = std::max(best, r[i].smooth_goodput);
    c.expect(best > r.front().smooth_goodput && best > r.back().smooth_goodput, "smooth goodput has no interior peak");
    if (c.ok) {
        std::string tput, sg;
        for (const auto &row : r) {
            tput += fmt::format(" {:.0f}", row.throughput);
            sg += fmt::format(" {:.0f}", row.smooth_goodput);
        }
        c.detail = fmt::format("throughput[{} ], ttft x{:.0f}, smooth goodput[{} ]", tput,
                               r.back().mean_ttft / r.front().mean_ttft, sg);
    }
    return c;
}

Check determinism()
{
    Check            c;
    ExperimentConfig cfg;
    cfg.count    = 300;
    cfg.rates    = {2.0, 5.0};
    cfg.variants = {Variant{"vllm", VllmLike{}, std::nullopt}, Variant{"prepone", DecodePrepone{2, std::nullopt}, std::nullopt},
                    Variant{"delay", VllmLike{}, DelayConfig{TbtCap{0.05}, false}}};
    const auto d1 = scratch_dir("accept_det_a");
    const auto d2 = scratch_dir("accept_det_b");
    const auto r1 = run_experiment(cfg, d1);
    run_experiment(cfg, d2);
    for (const auto &a : r1.artifacts) c.expect(read_file(d1 / a) == read_file(d2 / a), "differs: " + a);

    for (const auto &a : r1.artifacts) {
        const auto path = (d1 / a).string();
        if (a.rfind("workloads/", 0) == 0) {
            const auto w = load_workload(path);
            save_workload(path + ".rt", w);
            c.expect(load_workload(path + ".rt") == w && read_file(path + ".rt") == read_file(path), "workload round trip");
        } else if (a.find("trace.jsonl") != std::string::npos) {
            const auto t = load_trace(path);
            save_trace(path + ".rt", t);
            c.expect(load_trace(path + ".rt") == t && read_file(path + ".rt") == read_file(path), "trace round trip");
        }
    }
    if (c.ok) c.detail = fmt::format("{} artifacts byte-identical across runs", r1.artifacts.size());
    return c;
}

Check capacity()
{
    Check      c;
    const auto cfg = load_experiment(fixture("capacity_config.json"));
    const auto res = capacity_search(cfg, cfg.capacity.threshold);
    const auto at  = attainment_at(cfg, res.rate);
    const auto up  = attainment_at(cfg, res.rate + 0.1);
    c.expect(at >= cfg.capacity.threshold, fmt::format("attainment({}) = {}", res.rate, at));
    c.expect(up < cfg.capacity.threshold, fmt::format("attainment({}) = {}", res.rate + 0.1, up));
    if (c.ok) {
        c.detail = fmt::format("r* = {:.4f} req/s, attainment {:.4f} vs {:.4f} at r*+0.1, {} probes", res.rate, at, up,
                               res.probes.size());
    }
    return c;
}

} // namespace

int main()
{
    struct Criterion
    {
        const char            *id;
        const char            *name;
        double                 limit_s;
        std::function<Check()> run;
    };
    const Criterion criteria[] = {
        {"AC1", "metric oracle equivalence", 5.0, metric_oracle},
        {"AC2", "smooth-goodput identities", 5.0, smooth_identities},
        {"AC3", "stall reproduction", 1.0, stall_reproduction},
        {"AC4", "output-delay indictment", 10.0, output_delay_indictment},
        {"AC5", "rate-sweep shapes", 60.0, sweep_shapes},
        {"AC6", "determinism and round-trips", 10.0, determinism},
        {"AC7", "capacity search", 60.0, capacity},
    };
    int failures = 0;
    for (const auto &cr : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Check      c;
        try {
            c = cr.run();
        } catch (const std::exception &e) {
            c.ok     = false;
            c.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > cr.limit_s) {
            c.ok     = false;
            c.detail = fmt::format("runtime {:.2f}s exceeds {:.0f}s; {}", secs, cr.limit_s, c.detail);
        }
        failures += !c.ok;
        std::cout << (c.ok ? "[PASS] " : "[FAIL] ") << cr.id << ' ' << cr.name << " (" << fmt::format("{:.2f}s", secs)
                  << "): " << c.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
