// smoothgp command-line driver: simulate, sweep, metrics, capacity, delay, workload.

#include "smoothgp/config.hpp"
#include "smoothgp/delivery.hpp"
#include "smoothgp/experiment.hpp"
#include "smoothgp/trace_io.hpp"
#include "smoothgp/workload.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace smoothgp;

namespace {

struct Common
{
    std::string                  config;
    std::string                  out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t>   count;
    std::optional<unsigned>      threads;
};

void add_common(CLI::App *cmd, Common &c, bool config_required)
{
    auto *opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--out", c.out, "output directory (default: config output_dir)");
    cmd->add_option("--seed", c.seed, "override the workload seed");
    cmd->add_option("--count", c.count, "override the number of requests");
    cmd->add_option("--threads", c.threads, "worker threads for sweep cells (0: all cores)");
}

ExperimentConfig resolve(const Common &c)
{
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.count) cfg.count = *c.count;
    if (c.threads) cfg.threads = *c.threads;
    if (!c.out.empty()) cfg.output_dir = c.out;
    validate(cfg);
    return cfg;
}

fs::path prepare_out(const ExperimentConfig &cfg)
{
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    return dir;
}

void print_rows(const std::vector<SummaryRow> &rows)
{
    std::cout << summary_csv(rows);
}

int fail(const std::string &kind, const std::string &message, int code)
{
    nlohmann::ordered_json j;
    j["error"] = {{"type", kind}, {"message", message}};
    std::cerr << j.dump() << '\n';
    return code;
}

EvalWindow window_for(const ExperimentConfig &cfg, const std::vector<TraceRecord> &records)
{
    return cell_window(cfg, records);
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Token-timeline serving simulator and smooth-goodput evaluator"};
    app.require_subcommand(1);

    // simulate
    Common                sim_opts;
    std::optional<double> sim_rate;
    auto                 *sim = app.add_subcommand("simulate", "run every variant at a single rate");
    add_common(sim, sim_opts, true);
    sim->add_option("--rate", sim_rate, "arrival rate (req/s); default: first configured rate");

    // sweep
    Common sweep_opts;
    auto  *sweep = app.add_subcommand("sweep", "run every variant at every configured rate");
    add_common(sweep, sweep_opts, true);

    // metrics
    Common      met_opts;
    std::string met_trace;
    std::string met_timeline = "delivery";
    auto       *met          = app.add_subcommand("metrics", "evaluate an existing trace");
    add_common(met, met_opts, false);
    met->add_option("--trace", met_trace, "trace JSONL")->required()->check(CLI::ExistingFile);
    met->add_option("--timeline", met_timeline, "which instants to evaluate")
        ->check(CLI::IsMember({"delivery", "generation"}));

    // capacity
    Common                cap_opts;
    std::optional<double> cap_threshold;
    auto                 *cap = app.add_subcommand("capacity", "bisect for the highest rate meeting an attainment threshold");
    add_common(cap, cap_opts, true);
    cap->add_option("--threshold", cap_threshold, "SLO attainment threshold in (0, 1]");

    // delay
    Common      del_opts;
    std::string del_trace;
    double      del_hold = 0.05;
    std::string del_mode = "tbt_cap";
    bool        del_first = false;
    auto       *del       = app.add_subcommand("delay", "apply the output-delay buffer to an existing trace");
    add_common(del, del_opts, false);
    del->add_option("--trace", del_trace, "trace JSONL")->required()->check(CLI::ExistingFile);
    del->add_option("--hold", del_hold, "hold period in seconds");
    del->add_option("--mode", del_mode, "tbt_cap or fixed_rate")->check(CLI::IsMember({"tbt_cap", "fixed_rate"}));
    del->add_flag("--first-token-delayed", del_first, "also hold the first token");

    // workload
    Common                wl_opts;
    std::optional<double> wl_rate;
    auto                 *wl = app.add_subcommand("workload", "generate and save a workload file");
    add_common(wl, wl_opts, false);
    wl->add_option("--rate", wl_rate, "arrival rate (req/s); default: first configured rate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (*sim) {
            auto cfg = resolve(sim_opts);
            cfg.rates = {sim_rate.value_or(cfg.rates.front())};
            validate(cfg);
            const auto res = run_experiment(cfg, prepare_out(cfg), "simulate");
            print_rows(res.rows);
            for (const auto &r : res.rows) {
                if (!r.error.empty()) return fail("simulation", r.variant + ": " + r.error, 1);
            }
        } else if (*sweep) {
            const auto cfg = resolve(sweep_opts);
            const auto res = run_experiment(cfg, prepare_out(cfg), "sweep");
            print_rows(res.rows);
            for (const auto &r : res.rows) {
                if (!r.error.empty()) return fail("simulation", "one or more cells failed; see summary.csv", 1);
            }
        } else if (*met) {
            const auto cfg     = resolve(met_opts);
            const auto dir     = prepare_out(cfg);
            const auto records = load_trace(met_trace);
            const auto kind    = met_timeline == "generation" ? TimelineKind::Generation : TimelineKind::Delivery;
            const auto w       = cfg.window ? make_window(records, cfg.window->first, cfg.window->second, kind)
                                            : (cfg.trim_fraction == 0.0 ? full_window(records, kind)
                                                                        : trimmed_window(records, cfg.trim_fraction, kind));
            const auto report  = build_report(w, cfg.deadline, cfg.benefit, cfg.goodput_unit);
            save_report_json((dir / "report.json").string(), report);
            save_report_csv((dir / "report.csv").string(), report);
            save_token_timeline_csv((dir / "token_timeline.csv").string(), records, cfg.deadline);
            save_tbt_cdf_csv((dir / "tbt_cdf.csv").string(), records, w);
            write_manifest(dir, "metrics", cfg, {"report.json", "report.csv", "token_timeline.csv", "tbt_cdf.csv"});
            std::cout << report_to_json(report)["aggregates"].dump(2) << '\n';
        } else if (*cap) {
            const auto cfg = resolve(cap_opts);
            const auto dir = prepare_out(cfg);
            try {
                const auto res = capacity_search(cfg, cap_threshold.value_or(cfg.capacity.threshold));
                detail::write_text(dir / "capacity.json", to_json(res).dump(2) + "\n");
                write_manifest(dir, "capacity", cfg, {"capacity.json"});
                std::cout << to_json(res).dump(2) << '\n';
            } catch (const CapacityError &e) {
                return fail("capacity", e.what(), 1);
            }
        } else if (*del) {
            const auto  cfg     = resolve(del_opts);
            const auto  dir     = prepare_out(cfg);
            auto        records = load_trace(del_trace);
            DelayConfig dc;
            if (del_mode == "tbt_cap") dc.mode = TbtCap{del_hold};
            else dc.mode = FixedRate{del_hold};
            dc.first_token_delayed = del_first;
            validate(dc);
            const auto before = build_report(window_for(cfg, records), cfg.deadline, cfg.benefit, cfg.goodput_unit);
            apply_delivery(records, dc);
            const auto w     = window_for(cfg, records);
            const auto after = build_report(w, cfg.deadline, cfg.benefit, cfg.goodput_unit);
            save_trace((dir / "trace.jsonl").string(), records);
            save_report_json((dir / "report_before.json").string(), before);
            save_report_json((dir / "report.json").string(), after);
            save_report_csv((dir / "report.csv").string(), after);
            save_token_timeline_csv((dir / "token_timeline.csv").string(), records, cfg.deadline);
            save_tbt_cdf_csv((dir / "tbt_cdf.csv").string(), records, w);
            write_manifest(dir, "delay", cfg,
                           {"trace.jsonl", "report_before.json", "report.json", "report.csv", "token_timeline.csv",
                            "tbt_cdf.csv"});
            std::cout << summary_csv({summarize("before", 0.0, before), summarize("after", 0.0, after)});
        } else if (*wl) {
            const auto  cfg  = resolve(wl_opts);
            const auto  dir  = prepare_out(cfg);
            const auto  rate = wl_rate.value_or(cfg.rates.front());
            std::vector<std::string> warnings;
            const auto  reqs = generate(cfg.workload_at(rate), &warnings);
            save_workload((dir / "workload.jsonl").string(), reqs);
            write_manifest(dir, "workload", cfg, {"workload.jsonl"});
            for (const auto &w : warnings) std::cerr << "warning: " << w << '\n';
            std::cout << reqs.size() << " requests written\n";
        }
    } catch (const ConfigError &e) {
        return fail("config", e.what(), 2);
    } catch (const SimulationError &e) {
        return fail("simulation", e.what(), 1);
    } catch (const std::invalid_argument &e) {
        return fail("invalid_input", e.what(), 1);
    } catch (const std::exception &e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
