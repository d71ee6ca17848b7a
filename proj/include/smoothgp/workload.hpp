#pragma once

#include "smoothgp/timeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace smoothgp {

struct RequestSpec
{
    std::string   request_id;
    Seconds       arrival    = 0.0; // from run start
    std::uint32_t prompt_len = 1;
    std::uint32_t output_len = 1;

    bool operator==(const RequestSpec &) const = default;
};

inline void validate(const RequestSpec &spec)
{
    if (spec.prompt_len < 1 || spec.output_len < 1) {
        throw std::invalid_argument("request " + spec.request_id + ": prompt_len and output_len must be >= 1");
    }
    if (!(spec.arrival >= 0.0)) {
        throw std::invalid_argument("request " + spec.request_id + ": arrival must be >= 0");
    }
}

/// Seeded random stream. Variates are derived from the raw 64-bit engine
/// output by explicit inverse transforms so workloads are identical across
/// standard library implementations.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    double standard_normal()
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer on [lo, hi].
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi)
    {
        const auto span = static_cast<double>(hi - lo + 1);
        return lo + std::min(hi - lo, static_cast<std::uint64_t>(uniform() * span));
    }

private:
    std::mt19937_64 engine_;
};

// ----------------------------------------------------------------------------
// Length distributions
// ----------------------------------------------------------------------------

struct ConstantLength
{
    std::uint32_t value = 1;
};

struct UniformLength
{
    std::uint32_t min = 1;
    std::uint32_t max = 1;
};

/// Log-normal with the given arithmetic mean and log-space sigma, rounded to
/// the nearest integer and clamped to [1, max].
struct LogNormalLength
{
    double        mean  = 256.0;
    double        sigma = 0.5;
    std::uint32_t max   = 32768;
};

using LengthDist = std::variant<ConstantLength, UniformLength, LogNormalLength>;

inline void validate(const LengthDist &dist)
{
    std::visit(
        [](const auto &d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, ConstantLength>) {
                if (d.value < 1) throw std::invalid_argument("constant length must be >= 1");
            } else if constexpr (std::is_same_v<D, UniformLength>) {
                if (d.min < 1 || d.max < d.min) throw std::invalid_argument("uniform length needs 1 <= min <= max");
            } else {
                if (!(d.mean >= 1.0) || !(d.sigma >= 0.0) || d.max < 1) {
                    throw std::invalid_argument("lognormal length needs mean >= 1, sigma >= 0, max >= 1");
                }
            }
        },
        dist);
}

inline std::uint32_t sample_length(const LengthDist &dist, Rng &rng)
{
    return std::visit(
        [&rng](const auto &d) -> std::uint32_t {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, ConstantLength>) {
                return d.value;
            } else if constexpr (std::is_same_v<D, UniformLength>) {
                return static_cast<std::uint32_t>(rng.uniform_int(d.min, d.max));
            } else {
                const double mu = std::log(d.mean) - 0.5 * d.sigma * d.sigma;
                const double x  = std::exp(mu + d.sigma * rng.standard_normal());
                return static_cast<std::uint32_t>(std::clamp(std::round(x), 1.0, static_cast<double>(d.max)));
            }
        },
        dist);
}

// ----------------------------------------------------------------------------
// Dataset length files: JSONL of {"prompt_len": int, "output_len": int}
// ----------------------------------------------------------------------------

struct LengthPair
{
    std::uint32_t prompt_len = 1;
    std::uint32_t output_len = 1;

    bool operator==(const LengthPair &) const = default;
};

namespace detail {

inline std::uint32_t positive_length(const nlohmann::json &obj, const char *key)
{
    const auto &v = obj.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        throw std::invalid_argument(std::string(key) + " must be an integer >= 1");
    }
    return v.get<std::uint32_t>();
}

template <class Fn>
void for_each_jsonl(const std::string &path, Fn &&fn)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(nlohmann::json::parse(line));
        } catch (const std::exception &e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline std::string make_request_id(std::size_t index)
{
    std::string digits = std::to_string(index);
    if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
    return "req-" + digits;
}

} // namespace detail

inline std::vector<LengthPair> load_dataset(const std::string &path)
{
    std::vector<LengthPair> items;
    detail::for_each_jsonl(path, [&](const nlohmann::json &obj) {
        items.push_back({detail::positive_length(obj, "prompt_len"), detail::positive_length(obj, "output_len")});
    });
    if (items.empty()) {
        throw std::runtime_error("dataset " + path + " is empty");
    }
    return items;
}

/// Builds `count` long prompts by drawing dataset items uniformly with
/// replacement and summing their prompt lengths until the running total first
/// reaches `target_mean`. The output length is the last drawn item's.
/// When every item is already longer than 4x the target a warning is appended
/// and items pass through one at a time.
inline std::vector<LengthPair> concatenate_to_length(const std::vector<LengthPair> &records, double target_mean,
                                                     std::size_t count, std::uint64_t seed,
                                                     std::vector<std::string> *warnings = nullptr)
{
    if (records.empty()) {
        throw std::invalid_argument("concatenate_to_length: empty dataset");
    }
    if (!(target_mean >= 1.0)) {
        throw std::invalid_argument("concatenate_to_length: target must be >= 1 token");
    }
    const bool all_long = std::all_of(records.begin(), records.end(),
                                      [&](const LengthPair &p) { return p.prompt_len > 4.0 * target_mean; });
    if (all_long && warnings != nullptr) {
        warnings->push_back("every dataset item exceeds 4x the concatenation target; items pass through unconcatenated");
    }

    Rng                     rng(seed);
    std::vector<LengthPair> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t total = 0;
        LengthPair    last{};
        do {
            last = records[rng.uniform_int(0, records.size() - 1)];
            total += last.prompt_len;
        } while (static_cast<double>(total) < target_mean);
        const auto clamped = static_cast<std::uint32_t>(std::min<std::uint64_t>(total, UINT32_MAX));
        out.push_back({clamped, last.output_len});
    }
    return out;
}

// ----------------------------------------------------------------------------
// Workload generation
// ----------------------------------------------------------------------------

struct SyntheticSource
{
    LengthDist prompt = LogNormalLength{256.0, 0.6, 4096};
    LengthDist output = LogNormalLength{192.0, 0.6, 2048};
};

struct DatasetSource
{
    std::string path;
};

struct ConcatenatedSource
{
    std::string path;
    double      target_mean_prompt_len = 1600.0;
};

using LengthSource = std::variant<SyntheticSource, DatasetSource, ConcatenatedSource>;

struct WorkloadConfig
{
    double        rate  = 1.0; // requests/second
    std::size_t   count = 1;
    std::uint64_t seed  = 0;
    LengthSource  lengths;
};

inline void validate(const WorkloadConfig &cfg)
{
    if (!(cfg.rate > 0.0)) throw std::invalid_argument("workload rate must be > 0");
    if (cfg.count < 1) throw std::invalid_argument("workload count must be >= 1");
    if (const auto *s = std::get_if<SyntheticSource>(&cfg.lengths)) {
        validate(s->prompt);
        validate(s->output);
    }
}

/// Poisson arrivals (i.i.d. exponential gaps with mean 1/rate) plus lengths
/// from the configured source. Arrivals and lengths come from two independent
/// streams derived from the seed, so changing only the rate rescales the
/// arrival times and leaves every length untouched.
inline std::vector<RequestSpec> generate(const WorkloadConfig &cfg, std::vector<std::string> *warnings = nullptr)
{
    validate(cfg);
    Rng arrivals(cfg.seed);
    Rng lengths(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    std::vector<LengthPair> pairs;
    pairs.reserve(cfg.count);
    std::visit(
        [&](const auto &src) {
            using S = std::decay_t<decltype(src)>;
            if constexpr (std::is_same_v<S, SyntheticSource>) {
                for (std::size_t i = 0; i < cfg.count; ++i) {
                    const auto p = sample_length(src.prompt, lengths);
                    const auto o = sample_length(src.output, lengths);
                    pairs.push_back({p, o});
                }
            } else if constexpr (std::is_same_v<S, DatasetSource>) {
                const auto items = load_dataset(src.path);
                for (std::size_t i = 0; i < cfg.count; ++i) {
                    pairs.push_back(items[lengths.uniform_int(0, items.size() - 1)]);
                }
            } else {
                const auto items = load_dataset(src.path);
                pairs = concatenate_to_length(items, src.target_mean_prompt_len, cfg.count,
                                              cfg.seed ^ 0xD1B54A32D192ED03ULL, warnings);
            }
        },
        cfg.lengths);

    std::vector<RequestSpec> specs;
    specs.reserve(cfg.count);
    Seconds clock = 0.0;
    for (std::size_t i = 0; i < cfg.count; ++i) {
        clock += arrivals.exponential(cfg.rate);
        specs.push_back({detail::make_request_id(i), clock, pairs[i].prompt_len, pairs[i].output_len});
    }
    return specs;
}

// ----------------------------------------------------------------------------
// Workload files: JSONL of {"request_id", "arrival_s", "prompt_len", "output_len"}
// ----------------------------------------------------------------------------

inline std::string to_jsonl_line(const RequestSpec &spec)
{
    nlohmann::ordered_json j;
    j["request_id"] = spec.request_id;
    j["arrival_s"]  = spec.arrival;
    j["prompt_len"] = spec.prompt_len;
    j["output_len"] = spec.output_len;
    return j.dump();
}

inline void save_workload(const std::string &path, const std::vector<RequestSpec> &specs)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    for (const auto &s : specs) out << to_jsonl_line(s) << '\n';
}

/// Loads a workload file; errors carry the offending line number. The result
/// is checked to be sorted by arrival.
inline std::vector<RequestSpec> load_workload(const std::string &path)
{
    std::vector<RequestSpec> specs;
    detail::for_each_jsonl(path, [&](const nlohmann::json &obj) {
        RequestSpec s;
        s.request_id = obj.at("request_id").get<std::string>();
        s.arrival    = obj.at("arrival_s").get<double>();
        s.prompt_len = detail::positive_length(obj, "prompt_len");
        s.output_len = detail::positive_length(obj, "output_len");
        validate(s);
        if (!specs.empty() && s.arrival < specs.back().arrival) {
            throw std::invalid_argument("arrivals not sorted");
        }
        specs.push_back(std::move(s));
    });
    return specs;
}

} // namespace smoothgp
