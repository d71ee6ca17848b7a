#pragma once

#include "smoothgp/deadlines.hpp"
#include "smoothgp/delivery.hpp"
#include "smoothgp/engine.hpp"
#include "smoothgp/metrics.hpp"
#include "smoothgp/schedulers.hpp"
#include "smoothgp/workload.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace smoothgp {

/// Raised for malformed or inconsistent experiment configs.
class ConfigError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

struct Variant
{
    std::string                name;
    SchedulerPolicy            scheduler = VllmLike{};
    std::optional<DelayConfig> delivery; // nullopt: deliver at generation/release time
};

struct CapacityConfig
{
    double min_rate   = 0.5;
    double max_rate   = 10.0;
    double resolution = 0.05;
    double threshold  = 0.9;
};

struct ExperimentConfig
{
    std::size_t          count = 1000;
    LengthSource         lengths;
    EngineConfig         engine;
    std::vector<Variant> variants{Variant{"vllm_like", VllmLike{}, std::nullopt}};
    DeadlinePolicy       deadline = ReadingSpeed::from_rate(20.0);
    BenefitParams        benefit{5.0, TokensEquivalent{0.05}};
    GoodputUnit          goodput_unit = GoodputUnit::Tokens;
    std::vector<double>  rates{1.0};
    std::uint64_t        seed          = 0;
    double               trim_fraction = 0.05;
    // explicit [start, end) overrides trimming
    std::optional<std::pair<Seconds, Seconds>> window;
    CapacityConfig                              capacity;
    std::string                                 output_dir = "out";
    unsigned                                    threads    = 0; // 0: hardware concurrency
    bool                                        emit_tables = true;

    WorkloadConfig workload_at(double rate) const { return WorkloadConfig{rate, count, seed, lengths}; }
};

inline void validate(const ExperimentConfig &cfg)
{
    try {
        if (cfg.variants.empty()) throw ConfigError("at least one variant is required");
        if (cfg.rates.empty()) throw ConfigError("rates must not be empty");
        for (std::size_t i = 0; i < cfg.rates.size(); ++i) {
            if (!(cfg.rates[i] > 0.0)) throw ConfigError("rates must be positive");
            if (i > 0 && cfg.rates[i] < cfg.rates[i - 1]) throw ConfigError("rates must be sorted ascending");
        }
        if (cfg.count < 1) throw ConfigError("count must be >= 1");
        if (!(cfg.trim_fraction >= 0.0 && cfg.trim_fraction < 0.5)) {
            throw ConfigError("trim_fraction must be in [0, 0.5)");
        }
        if (cfg.window && !(cfg.window->second > cfg.window->first)) {
            throw ConfigError("window end must be after window start");
        }
        const auto &c = cfg.capacity;
        if (!(c.min_rate > 0.0 && c.max_rate > c.min_rate)) throw ConfigError("capacity bracket must be 0 < min < max");
        if (!(c.resolution > 0.0)) throw ConfigError("capacity resolution must be > 0");
        if (!(c.threshold > 0.0 && c.threshold <= 1.0)) throw ConfigError("capacity threshold must be in (0, 1]");
        validate(cfg.engine);
        validate(cfg.deadline);
        validate(cfg.benefit);
        for (const auto &v : cfg.variants) {
            if (v.name.empty()) throw ConfigError("variant names must be non-empty");
            validate(v.scheduler);
            if (v.delivery) validate(*v.delivery);
        }
        validate(cfg.workload_at(cfg.rates.front()));
    } catch (const ConfigError &) {
        throw;
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
}

// ============================================================================
// JSON <-> config
// ============================================================================

namespace config_detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline std::string type_of(const json &j, const char *what)
{
    if (!j.is_object() || !j.contains("type")) throw ConfigError(std::string(what) + " needs a \"type\" field");
    return j.at("type").get<std::string>();
}

[[noreturn]] inline void unknown(const char *what, const std::string &type)
{
    throw ConfigError(std::string("unknown ") + what + " type \"" + type + "\"");
}

inline LengthDist parse_dist(const json &j)
{
    const auto t = type_of(j, "length distribution");
    if (t == "constant") return ConstantLength{j.at("value").get<std::uint32_t>()};
    if (t == "uniform") return UniformLength{j.at("min").get<std::uint32_t>(), j.at("max").get<std::uint32_t>()};
    if (t == "lognormal") {
        LogNormalLength d;
        d.mean  = j.at("mean").get<double>();
        d.sigma = j.value("sigma", d.sigma);
        d.max   = j.value("max", d.max);
        return d;
    }
    unknown("length distribution", t);
}

inline ojson dist_json(const LengthDist &d)
{
    return std::visit(
        [](const auto &x) -> ojson {
            using D = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<D, ConstantLength>) {
                return {{"type", "constant"}, {"value", x.value}};
            } else if constexpr (std::is_same_v<D, UniformLength>) {
                return {{"type", "uniform"}, {"min", x.min}, {"max", x.max}};
            } else {
                return {{"type", "lognormal"}, {"mean", x.mean}, {"sigma", x.sigma}, {"max", x.max}};
            }
        },
        d);
}

inline std::string resolve_path(const std::string &p, const std::filesystem::path &base)
{
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.lexically_normal().string();
}

inline LengthSource parse_source(const json &j, const std::filesystem::path &base)
{
    const auto t = type_of(j, "length_source");
    if (t == "synthetic") {
        SyntheticSource s;
        if (j.contains("prompt")) s.prompt = parse_dist(j.at("prompt"));
        if (j.contains("output")) s.output = parse_dist(j.at("output"));
        return s;
    }
    if (t == "dataset") return DatasetSource{resolve_path(j.at("path").get<std::string>(), base)};
    if (t == "concatenated") {
        return ConcatenatedSource{resolve_path(j.at("path").get<std::string>(), base),
                                  j.value("target_mean_prompt_len", 1600.0)};
    }
    unknown("length_source", t);
}

inline ojson source_json(const LengthSource &src)
{
    return std::visit(
        [](const auto &s) -> ojson {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, SyntheticSource>) {
                return {{"type", "synthetic"}, {"prompt", dist_json(s.prompt)}, {"output", dist_json(s.output)}};
            } else if constexpr (std::is_same_v<S, DatasetSource>) {
                return {{"type", "dataset"}, {"path", s.path}};
            } else {
                return {{"type", "concatenated"}, {"path", s.path}, {"target_mean_prompt_len", s.target_mean_prompt_len}};
            }
        },
        src);
}

inline EngineConfig parse_engine(const json &j)
{
    EngineConfig e;
    e.cost.base_s                = j.value("base_s", e.cost.base_s);
    e.cost.prefill_per_token_s   = j.value("prefill_per_token_s", e.cost.prefill_per_token_s);
    e.cost.decode_per_seq_s      = j.value("decode_per_seq_s", e.cost.decode_per_seq_s);
    e.limits.max_batch_tokens    = j.value("max_batch_tokens", e.limits.max_batch_tokens);
    e.limits.max_running_seqs    = j.value("max_running_seqs", e.limits.max_running_seqs);
    e.limits.kv_capacity_tokens  = j.value("kv_capacity_tokens", e.limits.kv_capacity_tokens);
    return e;
}

inline ojson engine_json(const EngineConfig &e)
{
    return {{"base_s", e.cost.base_s},
            {"prefill_per_token_s", e.cost.prefill_per_token_s},
            {"decode_per_seq_s", e.cost.decode_per_seq_s},
            {"max_batch_tokens", e.limits.max_batch_tokens},
            {"max_running_seqs", e.limits.max_running_seqs},
            {"kv_capacity_tokens", e.limits.kv_capacity_tokens}};
}

inline SchedulerPolicy parse_scheduler(const json &j)
{
    const auto t = type_of(j, "scheduler");
    if (t == "vllm_like") return VllmLike{};
    if (t == "chunked_prefill") {
        ChunkedPrefill c;
        c.chunk_tokens     = j.value("chunk_tokens", c.chunk_tokens);
        c.chunk_overhead_s = j.value("chunk_overhead_s", c.chunk_overhead_s);
        return c;
    }
    if (t == "decode_prepone") {
        DecodePrepone p;
        p.prepone_tokens = j.value("prepone_tokens", p.prepone_tokens);
        if (j.contains("t_delay_s") && !(j.at("t_delay_s").is_string() && j.at("t_delay_s") == "auto")) {
            p.t_delay = j.at("t_delay_s").get<double>();
        }
        return p;
    }
    unknown("scheduler", t);
}

inline ojson scheduler_json(const SchedulerPolicy &policy)
{
    return std::visit(
        [](const auto &p) -> ojson {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, VllmLike>) {
                return {{"type", "vllm_like"}};
            } else if constexpr (std::is_same_v<P, ChunkedPrefill>) {
                return {{"type", "chunked_prefill"}, {"chunk_tokens", p.chunk_tokens},
                        {"chunk_overhead_s", p.chunk_overhead_s}};
            } else {
                ojson t_delay = p.t_delay ? ojson(*p.t_delay) : ojson("auto");
                return {{"type", "decode_prepone"}, {"prepone_tokens", p.prepone_tokens}, {"t_delay_s", t_delay}};
            }
        },
        policy);
}

inline std::optional<DelayConfig> parse_delivery(const json &j)
{
    const auto t = type_of(j, "delivery");
    if (t == "none") return std::nullopt;
    DelayConfig d;
    d.first_token_delayed = j.value("first_token_delayed", false);
    if (t == "tbt_cap") {
        d.mode = TbtCap{j.at("tbt_target_s").get<double>()};
    } else if (t == "fixed_rate") {
        d.mode = FixedRate{j.at("per_token_s").get<double>()};
    } else {
        unknown("delivery", t);
    }
    return d;
}

inline ojson delivery_json(const std::optional<DelayConfig> &d)
{
    if (!d) return {{"type", "none"}};
    ojson out;
    if (const auto *cap = std::get_if<TbtCap>(&d->mode)) {
        out = {{"type", "tbt_cap"}, {"tbt_target_s", cap->tbt_target}};
    } else {
        out = {{"type", "fixed_rate"}, {"per_token_s", std::get<FixedRate>(d->mode).per_token_s}};
    }
    out["first_token_delayed"] = d->first_token_delayed;
    return out;
}

} // namespace config_detail

inline DeadlinePolicy parse_deadline(const nlohmann::json &j)
{
    const auto t = config_detail::type_of(j, "deadline");
    if (t == "reading_speed") {
        if (j.contains("per_token_budget_s")) {
            const double b = j.at("per_token_budget_s").get<double>();
            return ReadingSpeed{b, j.value("first_token_allowance_s", b)};
        }
        std::optional<Seconds> allowance;
        if (j.contains("first_token_allowance_s")) allowance = j.at("first_token_allowance_s").get<double>();
        return ReadingSpeed::from_rate(j.at("tokens_per_second").get<double>(), allowance);
    }
    if (t == "ttft_tbt") return TtftTbt{j.at("ttft_s").get<double>(), j.at("tbt_s").get<double>()};
    if (t == "e2e") return EndToEnd{j.at("e2e_s").get<double>()};
    config_detail::unknown("deadline", t);
}

inline nlohmann::ordered_json deadline_json(const DeadlinePolicy &policy)
{
    using ojson = nlohmann::ordered_json;
    return std::visit(
        [](const auto &p) -> ojson {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, TtftTbt>) {
                return {{"type", "ttft_tbt"}, {"ttft_s", p.ttft_budget}, {"tbt_s", p.tbt_budget}};
            } else if constexpr (std::is_same_v<P, EndToEnd>) {
                return {{"type", "e2e"}, {"e2e_s", p.e2e_budget}};
            } else {
                return {{"type", "reading_speed"}, {"per_token_budget_s", p.per_token_budget},
                        {"first_token_allowance_s", p.first_token_allowance}};
            }
        },
        policy);
}

/// Penalty function from JSON. Without an explicit per_token_budget_s the
/// tokens_equivalent form borrows the reading-speed deadline's budget.
inline PenaltyFn parse_penalty(const nlohmann::json &j, const DeadlinePolicy &deadline)
{
    const auto t = config_detail::type_of(j, "penalty");
    if (t == "tokens_equivalent") {
        Seconds budget = TokensEquivalent{}.per_token_budget;
        if (const auto *rs = std::get_if<ReadingSpeed>(&deadline)) budget = rs->per_token_budget;
        return TokensEquivalent{j.value("per_token_budget_s", budget)};
    }
    if (t == "linear") return LinearSeconds{j.value("scale", 1.0)};
    if (t == "indicator") return Indicator{j.at("threshold_s").get<double>(), j.at("penalty").get<double>()};
    config_detail::unknown("penalty", t);
}

inline nlohmann::ordered_json penalty_json(const PenaltyFn &fn)
{
    using ojson = nlohmann::ordered_json;
    return std::visit(
        [](const auto &f) -> ojson {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, LinearSeconds>) {
                return {{"type", "linear"}, {"scale", f.scale}};
            } else if constexpr (std::is_same_v<F, TokensEquivalent>) {
                return {{"type", "tokens_equivalent"}, {"per_token_budget_s", f.per_token_budget}};
            } else {
                return {{"type", "indicator"}, {"threshold_s", f.threshold}, {"penalty", f.penalty_value}};
            }
        },
        fn);
}

/// Parses an experiment document. Relative dataset paths resolve against
/// `base_dir` (the config file's directory when loaded from disk).
inline ExperimentConfig parse_experiment(const nlohmann::json &j, const std::filesystem::path &base_dir = {})
{
    using namespace config_detail;
    ExperimentConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("workload")) {
            const auto &w = j.at("workload");
            cfg.count     = w.value("count", cfg.count);
            if (w.contains("seed")) cfg.seed = w.at("seed").get<std::uint64_t>();
            if (w.contains("length_source")) cfg.lengths = parse_source(w.at("length_source"), base_dir);
            if (w.contains("rate")) cfg.rates = {w.at("rate").get<double>()};
        }
        if (j.contains("engine")) cfg.engine = parse_engine(j.at("engine"));
        if (j.contains("variants")) {
            cfg.variants.clear();
            for (const auto &v : j.at("variants")) {
                Variant var;
                var.scheduler = v.contains("scheduler") ? parse_scheduler(v.at("scheduler")) : SchedulerPolicy{VllmLike{}};
                if (v.contains("delivery")) var.delivery = parse_delivery(v.at("delivery"));
                var.name = v.value("name", std::string{});
                if (var.name.empty()) var.name = scheduler_json(var.scheduler).at("type").get<std::string>();
                cfg.variants.push_back(std::move(var));
            }
        }
        if (j.contains("deadline")) cfg.deadline = parse_deadline(j.at("deadline"));
        if (j.contains("benefit")) {
            const auto &b     = j.at("benefit");
            cfg.benefit.alpha = b.value("alpha", cfg.benefit.alpha);
            cfg.benefit.penalty =
                parse_penalty(b.contains("penalty") ? b.at("penalty") : json{{"type", "tokens_equivalent"}}, cfg.deadline);
        } else {
            cfg.benefit.penalty = parse_penalty(json{{"type", "tokens_equivalent"}}, cfg.deadline);
        }
        if (j.contains("goodput_unit")) {
            const auto u = j.at("goodput_unit").get<std::string>();
            if (u == "tokens") cfg.goodput_unit = GoodputUnit::Tokens;
            else if (u == "requests") cfg.goodput_unit = GoodputUnit::Requests;
            else throw ConfigError("goodput_unit must be \"tokens\" or \"requests\"");
        }
        if (j.contains("rates")) cfg.rates = j.at("rates").get<std::vector<double>>();
        if (j.contains("rate")) cfg.rates = {j.at("rate").get<double>()};
        cfg.trim_fraction = j.value("trim_fraction", cfg.trim_fraction);
        if (j.contains("window")) {
            const auto &w = j.at("window");
            cfg.window    = std::pair{w.at("start_s").get<double>(), w.at("end_s").get<double>()};
        }
        if (j.contains("capacity")) {
            const auto &c           = j.at("capacity");
            cfg.capacity.min_rate   = c.value("min_rate", cfg.capacity.min_rate);
            cfg.capacity.max_rate   = c.value("max_rate", cfg.capacity.max_rate);
            cfg.capacity.resolution = c.value("resolution", cfg.capacity.resolution);
            cfg.capacity.threshold  = c.value("threshold", cfg.capacity.threshold);
        }
        cfg.output_dir  = j.value("output_dir", cfg.output_dir);
        cfg.threads     = j.value("threads", cfg.threads);
        cfg.emit_tables = j.value("emit_tables", cfg.emit_tables);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment(const std::string &path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_experiment(j, std::filesystem::path(path).parent_path());
}

/// Fully resolved config, every default spelled out.
inline nlohmann::ordered_json to_json(const ExperimentConfig &cfg)
{
    using namespace config_detail;
    ojson j;
    j["seed"]     = cfg.seed;
    j["workload"] = {{"count", cfg.count}, {"length_source", source_json(cfg.lengths)}};
    j["engine"]   = engine_json(cfg.engine);
    auto vars     = ojson::array();
    for (const auto &v : cfg.variants) {
        vars.push_back({{"name", v.name}, {"scheduler", scheduler_json(v.scheduler)}, {"delivery", delivery_json(v.delivery)}});
    }
    j["variants"]      = vars;
    j["deadline"]      = deadline_json(cfg.deadline);
    j["benefit"]       = {{"alpha", cfg.benefit.alpha}, {"penalty", penalty_json(cfg.benefit.penalty)}};
    j["goodput_unit"]  = cfg.goodput_unit == GoodputUnit::Tokens ? "tokens" : "requests";
    j["rates"]         = cfg.rates;
    j["trim_fraction"] = cfg.trim_fraction;
    if (cfg.window) j["window"] = {{"start_s", cfg.window->first}, {"end_s", cfg.window->second}};
    j["capacity"] = {{"min_rate", cfg.capacity.min_rate},
                     {"max_rate", cfg.capacity.max_rate},
                     {"resolution", cfg.capacity.resolution},
                     {"threshold", cfg.capacity.threshold}};
    j["output_dir"]  = cfg.output_dir;
    j["threads"]     = cfg.threads;
    j["emit_tables"] = cfg.emit_tables;
    return j;
}

} // namespace smoothgp
