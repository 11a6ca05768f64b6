#pragma once

// Decode-retention benchmark: compress with a fuser, greedy-decode with the
// same CTC decoder, score token error rate, and estimate downstream cost.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "ctc.hpp"
#include "ctc_decoder.hpp"
#include "frameio.hpp"
#include "fusion.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace fls {

struct CostModel {
    double fixed_overhead = 0.0;
    double coeff_linear = 1.0;
    double coeff_quadratic = 1.0 / 750.0;  // attention term equals the linear term at a full window

    void validate() const {
        require(fixed_overhead >= 0.0 && coeff_linear >= 0.0 && coeff_quadratic >= 0.0, "cost coefficients must be >= 0");
        require(fixed_overhead > 0.0 || coeff_linear > 0.0 || coeff_quadratic > 0.0, "cost model needs a positive coefficient");
    }
};

inline double estimate_cost(std::size_t frames, const CostModel& model) {
    const double t = static_cast<double>(frames);
    return model.fixed_overhead + model.coeff_linear * t + model.coeff_quadratic * t * t;
}

/// Reported TFLOPs at L = 750, 400, 200, 100 for the 7B model; printed for
/// comparison only.
struct ReferenceCost {
    std::size_t target;
    double tflops;
};
inline constexpr ReferenceCost kReferenceTflops[] = {{750, 9.79}, {400, 8.54}, {200, 5.64}, {100, 4.17}};

/// Target length, either absolute ("400") or a fraction of each input ("T/4", "T").
struct TargetSpec {
    std::size_t value = 1;
    bool relative = false;

    std::size_t resolve(std::size_t length) const {
        if (!relative) return value;
        return std::max<std::size_t>(1, length / value);
    }
    std::string label() const {
        if (!relative) return std::to_string(value);
        return value == 1 ? "T" : "T/" + std::to_string(value);
    }
    friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

inline TargetSpec parse_target(const std::string& s) {
    try {
        if (s == "T") return {1, true};
        if (s.rfind("T/", 0) == 0) {
            const auto v = std::stoull(s.substr(2));
            require(v >= 1, "relative target divisor must be >= 1");
            return {static_cast<std::size_t>(v), true};
        }
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos == s.size() && v >= 1) return {static_cast<std::size_t>(v), false};
    } catch (const std::logic_error&) {
    }
    fail(ErrorKind::invalid_argument, "bad target length '" + s + "' (expected N, T or T/N)");
}

struct RetentionResult {
    double error_rate = 0.0;
    std::size_t output_length = 0;
    LabelSequence hypothesis;
};

/// Compresses seq with fuser to L (densities from dec), greedy-decodes the
/// condensed frames with dec, and scores against label.
inline RetentionResult retention(const CtcDecoder& dec, const FrameSequence& seq, const LabelSequence& label, FuserKind fuser,
                                 std::size_t target, std::uint64_t seed = 0) {
    const auto density = content_density(decoder_forward(dec, seq));
    const auto condensed = apply_fuser(fuser, seq, density, target, seed);
    auto hyp = decode_sequence(dec, condensed.sequence);
    const double rate = error_rate(hyp, label);
    return {rate, condensed.length(), std::move(hyp)};
}

inline double retention_cer(const CtcDecoder& dec, const FrameSequence& seq, const LabelSequence& label, FuserKind fuser,
                            std::size_t target, std::uint64_t seed = 0) {
    return retention(dec, seq, label, fuser, target, seed).error_rate;
}

struct BenchConfig {
    CostModel cost;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct BenchRow {
    std::string fuser;
    std::string target;
    double mean_cer = 0.0;
    double mean_compression = 0.0;  // T / output length
    double mean_output_length = 0.0;
    double mean_cost = 0.0;
    double wall_ms_per_sequence = 0.0;
    std::size_t sequences = 0;
};

struct SequenceTrace {
    std::string fuser;
    std::string target;
    std::string id;
    std::size_t input_length = 0;
    std::size_t output_length = 0;
    double cer = 0.0;
    LabelSequence hypothesis;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::vector<SequenceTrace> traces;
    std::optional<std::string> failure;

    const BenchRow* find(std::string_view fuser, std::string_view target) const {
        for (const auto& r : rows)
            if (r.fuser == fuser && r.target == target) return &r;
        return nullptr;
    }
};

/// Evaluates every (fuser, target) cell over the dataset in fixed
/// (fuser, target, sequence) order. Errors stop the grid; rows completed so far
/// are kept and the failure is recorded.
inline BenchReport run_grid(const Dataset& data, const CtcDecoder& dec, const std::vector<FuserKind>& fusers,
                            const std::vector<TargetSpec>& targets, const BenchConfig& cfg) {
    cfg.cost.validate();
    BenchReport report;
    std::vector<DensityVector> densities(data.size());
    try {
        parallel_for(data.size(), cfg.threads,
                     [&](std::size_t i) { densities[i] = content_density(decoder_forward(dec, data.sequences[i])); });
    } catch (const std::exception& e) {
        report.failure = e.what();
        return report;
    }
    const std::uint64_t random_root = derive_seed(cfg.seed, "random-baseline");
    for (auto fuser : fusers) {
        for (const auto& target : targets) {
            std::vector<SequenceTrace> cell(data.size());
            const auto start = std::chrono::steady_clock::now();
            try {
                parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
                    const auto& seq = data.sequences[i];
                    const auto L = target.resolve(seq.length());
                    const auto condensed = apply_fuser(fuser, seq, densities[i], L, splitmix64(random_root + i));
                    auto hyp = decode_sequence(dec, condensed.sequence);
                    cell[i] = {std::string(fuser_name(fuser)), target.label(), seq.id, seq.length(), condensed.length(),
                               error_rate(hyp, data.labels[i]), std::move(hyp)};
                });
            } catch (const std::exception& e) {
                report.failure = std::string(fuser_name(fuser)) + " at " + target.label() + ": " + e.what();
                return report;
            }
            const double elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            BenchRow row{std::string(fuser_name(fuser)), target.label(), 0, 0, 0, 0, 0, data.size()};
            for (const auto& tr : cell) {
                row.mean_cer += tr.cer;
                row.mean_compression += static_cast<double>(tr.input_length) / static_cast<double>(tr.output_length);
                row.mean_output_length += static_cast<double>(tr.output_length);
                row.mean_cost += estimate_cost(tr.output_length, cfg.cost);
            }
            const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
            row.mean_cer /= n;
            row.mean_compression /= n;
            row.mean_output_length /= n;
            row.mean_cost /= n;
            row.wall_ms_per_sequence = elapsed_ms / n;
            report.rows.push_back(row);
            for (auto& tr : cell) report.traces.push_back(std::move(tr));
        }
    }
    return report;
}

/// Root seed of the shipped benchmark configuration.
inline constexpr std::uint64_t kDefaultSeed = 42;

/// The "default" grid: generate, split, train the decoder, then evaluate every
/// fuser at T, T/2, T/4 and T/8 on the held-out split.
struct SyntheticBenchSetup {
    SyntheticSpec data;
    double dev_fraction = 0.25;
    TrainConfig train;
    std::vector<FuserKind> fusers{FuserKind::density, FuserKind::single_shot, FuserKind::mostsim, FuserKind::avgpool,
                                  FuserKind::random};
    std::vector<TargetSpec> targets{{1, true}, {2, true}, {4, true}, {8, true}};
};

inline SyntheticBenchSetup default_bench_setup(std::uint64_t seed = kDefaultSeed) {
    SyntheticBenchSetup s;
    s.data.seed = seed;
    s.data.num_sequences = 400;
    s.train.seed = seed;
    return s;
}

struct SyntheticBenchResult {
    CtcDecoder decoder;
    Dataset eval;
    std::vector<TrainLogEntry> log;
    double dev_error_rate = 0.0;
    BenchReport report;
};

inline SyntheticBenchResult run_synthetic_bench(const SyntheticBenchSetup& setup, const BenchConfig& cfg) {
    require(setup.dev_fraction > 0.0 && setup.dev_fraction < 1.0, "dev fraction must be in (0, 1)");
    const auto all = generate_synthetic(setup.data);
    const auto n_train = static_cast<std::size_t>(static_cast<double>(all.size()) * (1.0 - setup.dev_fraction));
    require(n_train >= 1 && n_train < all.size(), "too few sequences for a train/dev split");
    const auto train = slice_dataset(all, 0, n_train);
    SyntheticBenchResult out;
    out.eval = slice_dataset(all, n_train, all.size());
    auto tc = setup.train;
    tc.threads = cfg.threads;
    auto trained = train_ctc_decoder(train, tc, &out.eval);
    out.decoder = std::move(trained.decoder);
    out.log = std::move(trained.log);
    out.dev_error_rate = *out.log.back().dev_error_rate;
    out.report = run_grid(out.eval, out.decoder, setup.fusers, setup.targets, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// Report files. Wall-clock is left out unless asked for, so equal seeds give
// byte-identical reports.

inline std::string report_jsonl(const BenchReport& report, bool include_timing = false) {
    std::string out;
    for (const auto& r : report.rows) {
        nlohmann::json j = {{"fuser", r.fuser},
                            {"L", r.target},
                            {"mean_cer", r.mean_cer},
                            {"mean_compression", r.mean_compression},
                            {"mean_output_length", r.mean_output_length},
                            {"mean_cost", r.mean_cost},
                            {"sequences", r.sequences}};
        if (include_timing) j["wall_ms_per_sequence"] = r.wall_ms_per_sequence;
        out += j.dump() + "\n";
    }
    if (report.failure) out += nlohmann::json{{"failure", *report.failure}}.dump() + "\n";
    return out;
}

inline std::string traces_jsonl(const BenchReport& report) {
    std::string out;
    for (const auto& t : report.traces)
        out += nlohmann::json{{"fuser", t.fuser},           {"L", t.target},   {"id", t.id},
                              {"input_length", t.input_length}, {"output_length", t.output_length},
                              {"cer", t.cer},                {"hypothesis", t.hypothesis}}
                   .dump() +
               "\n";
    return out;
}

inline std::string report_csv(const BenchReport& report, bool include_timing = false) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "fuser,L,mean_cer,mean_compression,mean_output_length,mean_cost,sequences";
    if (include_timing) ss << ",wall_ms_per_sequence";
    ss << "\n";
    for (const auto& r : report.rows) {
        ss << r.fuser << ',' << r.target << ',' << r.mean_cer << ',' << r.mean_compression << ',' << r.mean_output_length << ','
           << r.mean_cost << ',' << r.sequences;
        if (include_timing) ss << ',' << r.wall_ms_per_sequence;
        ss << "\n";
    }
    if (report.failure) ss << "# failure: " << *report.failure << "\n";
    return ss.str();
}

/// One gnuplot data block per fuser: mean output length vs. mean CER.
inline std::string report_gnuplot(const BenchReport& report) {
    std::ostringstream ss;
    ss.precision(17);
    std::string current;
    for (const auto& r : report.rows) {
        if (r.fuser != current) {
            if (!current.empty()) ss << "\n\n";
            ss << "# " << r.fuser << "\n# mean_output_length mean_cer\n";
            current = r.fuser;
        }
        ss << r.mean_output_length << ' ' << r.mean_cer << "\n";
    }
    return ss.str();
}

/// Proxy cost at each reference L next to the reported TFLOPs.
inline std::string cost_trend_table(const CostModel& model) {
    std::ostringstream ss;
    ss << "L      proxy_cost    reported_TFLOPs (not reproduced)\n";
    for (const auto& ref : kReferenceTflops) {
        ss.width(6);
        ss << std::left << ref.target << ' ';
        ss.width(13);
        ss << estimate_cost(ref.target, model) << ' ' << ref.tflops << "\n";
    }
    ss << "ratio L=750/L=100: proxy " << estimate_cost(750, model) / estimate_cost(100, model) << ", reported "
       << kReferenceTflops[0].tflops / kReferenceTflops[3].tflops << "\n";
    return ss.str();
}

}  // namespace fls
