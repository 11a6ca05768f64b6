// fls: dataset generation, CTC training, density inspection, compression,
// decoding, oracle checks and the retention benchmark in one binary.
//
// Exit codes: 0 ok, 2 usage / invalid argument, 3 I/O or format, 4 numerical.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fls/fls.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct Globals {
    std::uint64_t seed = 42;
    unsigned threads = 1;
    bool json_out = false;
    int verbosity = 0;
};

void emit(const Globals& g, const json& summary, const std::string& text) {
    if (g.json_out)
        std::cout << summary.dump() << "\n";
    else
        std::cout << text;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fls::fail(fls::ErrorKind::io, "cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::string stem_of(const fs::path& p) {
    auto s = p.filename().string();
    if (auto pos = s.rfind(".fsq"); pos != std::string::npos && pos + 4 == s.size()) s.resize(pos);
    return s;
}

// --------------------------------------------------------------------------

struct GenArgs {
    fls::SyntheticSpec spec;
    fs::path out;
};

int run_gen(const Globals& g, GenArgs a) {
    a.spec.seed = g.seed;
    a.spec.validate();
    const auto set = fls::generate_synthetic(a.spec);
    fls::write_dataset(set, a.out);
    std::size_t frames = 0, tokens = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        frames += set.sequences[i].length();
        tokens += set.labels[i].size();
    }
    json s = {{"command", "gen"}, {"sequences", set.size()}, {"frames", frames}, {"tokens", tokens},
              {"manifest", (a.out / "manifest.jsonl").string()}};
    emit(g, s,
         "wrote " + std::to_string(set.size()) + " sequences (" + std::to_string(frames) + " frames, " + std::to_string(tokens) +
             " tokens) to " + a.out.string() + "\n");
    return 0;
}

struct TrainArgs {
    fs::path data, dev, out;
    fls::TrainConfig cfg;
};

int run_train(const Globals& g, TrainArgs a) {
    a.cfg.seed = g.seed;
    a.cfg.threads = g.threads;
    const auto train = fls::load_dataset(a.data);
    std::optional<fls::Dataset> dev;
    if (!a.dev.empty()) dev = fls::load_dataset(a.dev);
    const auto result = fls::train_ctc_decoder(train, a.cfg, dev ? &*dev : nullptr);
    ensure_dir(a.out);
    fls::save_checkpoint(result.decoder, a.out / "decoder.ctd");
    fls::detail::write_file(a.out / "train_log.jsonl", fls::train_log_to_jsonl(result.log));
    const auto& last = result.log.back();
    json s = {{"command", "train-ctc"}, {"steps", a.cfg.steps}, {"final_loss", last.loss},
              {"checkpoint", (a.out / "decoder.ctd").string()}};
    std::string text = "trained " + std::to_string(a.cfg.steps) + " steps, final loss " + std::to_string(last.loss);
    if (last.dev_error_rate) {
        s["dev_cer"] = *last.dev_error_rate;
        text += ", dev CER " + std::to_string(*last.dev_error_rate);
    }
    emit(g, s, text + "\n");
    return 0;
}

struct DensityArgs {
    fs::path decoder, input, out;
};

int run_density(const Globals& g, const DensityArgs& a) {
    const auto dec = fls::load_checkpoint(a.decoder);
    const auto seq = fls::read_fseq(a.input);
    const auto density = fls::content_density(fls::decoder_forward(dec, seq));
    ensure_dir(a.out);
    const auto path = a.out / (stem_of(a.input) + ".density.json");
    fls::detail::write_file(path, json{{"id", seq.id}, {"density", density}}.dump() + "\n");
    double mean = 0.0;
    for (double d : density) mean += d;
    mean /= static_cast<double>(density.size());
    emit(g, {{"command", "density"}, {"frames", density.size()}, {"mean_density", mean}, {"output", path.string()}},
         std::to_string(density.size()) + " frames, mean density " + std::to_string(mean) + " -> " + path.string() + "\n");
    return 0;
}

struct CompressArgs {
    fs::path decoder, input, out;
    std::string fuser = "density";
    std::string target;
    fls::WindowConfig window;
    std::size_t project_dim = 0;
};

int run_compress(const Globals& g, const CompressArgs& a) {
    const auto kind = fls::parse_fuser(a.fuser);
    const bool needs_density = kind == fls::FuserKind::density || kind == fls::FuserKind::single_shot;
    if (needs_density && a.decoder.empty()) fls::fail(fls::ErrorKind::invalid_argument, "--fuser " + a.fuser + " requires --decoder");
    const auto target = a.target.empty() ? fls::TargetSpec{a.window.window_frames, false} : fls::parse_target(a.target);

    auto seq = fls::read_fseq(a.input);
    seq.id = stem_of(a.input);
    if (a.project_dim > 0)
        seq = fls::chunk_and_encode(seq, a.window,
                                    fls::random_projection_hook(seq.dim(), a.project_dim, fls::derive_seed(g.seed, "encoder")), g.threads);
    fls::DensityVector density;
    if (!a.decoder.empty()) density = fls::content_density(fls::decoder_forward(fls::load_checkpoint(a.decoder), seq));
    const auto L = target.resolve(seq.length());
    const auto condensed = fls::apply_fuser(kind, seq, density, L, fls::derive_seed(g.seed, "random-baseline"));

    ensure_dir(a.out);
    const auto base = stem_of(a.input);
    fls::write_fseq(condensed.sequence, a.out / (base + ".fsq"));
    fls::detail::write_file(a.out / (base + ".fusion.json"), fls::condensed_sidecar_json(condensed, kind, seq.length(), L));
    emit(g,
         {{"command", "compress"}, {"fuser", a.fuser}, {"input_length", seq.length()}, {"output_length", condensed.length()},
          {"iterations", condensed.iterations}},
         a.fuser + ": " + std::to_string(seq.length()) + " -> " + std::to_string(condensed.length()) + " frames in " +
             std::to_string(condensed.iterations) + " iterations\n");
    return 0;
}

struct DecodeArgs {
    fs::path decoder, input, data, out;
};

int run_decode(const Globals& g, const DecodeArgs& a) {
    if (a.input.empty() == a.data.empty()) fls::fail(fls::ErrorKind::invalid_argument, "decode needs exactly one of --input or --data");
    const auto dec = fls::load_checkpoint(a.decoder);
    std::string lines;
    json summary = {{"command", "decode"}};
    if (!a.input.empty()) {
        const auto seq = fls::read_fseq(a.input);
        const auto hyp = fls::decode_sequence(dec, seq);
        lines = json{{"id", stem_of(a.input)}, {"hypothesis", hyp}}.dump() + "\n";
        summary["sequences"] = 1;
    } else {
        const auto set = fls::load_dataset(a.data);
        std::vector<fls::LabelSequence> hyps(set.size());
        fls::parallel_for(set.size(), g.threads, [&](std::size_t i) { hyps[i] = fls::decode_sequence(dec, set.sequences[i]); });
        double total = 0.0;
        for (std::size_t i = 0; i < set.size(); ++i) {
            const double cer = fls::error_rate(hyps[i], set.labels[i]);
            total += cer;
            lines += json{{"id", set.sequences[i].id}, {"hypothesis", hyps[i]}, {"reference", set.labels[i]}, {"cer", cer}}.dump() + "\n";
        }
        summary["sequences"] = set.size();
        summary["mean_cer"] = total / static_cast<double>(std::max<std::size_t>(1, set.size()));
    }
    ensure_dir(a.out);
    fls::detail::write_file(a.out / "decode.jsonl", lines);
    std::string text = "decoded " + summary["sequences"].dump() + " sequence(s)";
    if (summary.contains("mean_cer")) text += ", mean CER " + summary["mean_cer"].dump();
    emit(g, summary, text + "\n");
    return 0;
}

struct PlanArgs {
    fs::path data, out;
    fls::WindowConfig window;
    std::size_t epochs = 1;
};

int run_plan(const Globals& g, const PlanArgs& a) {
    a.window.validate();
    const auto manifest = fls::parse_manifest(fls::read_jsonl(a.data), a.data.string());
    std::vector<std::string> ids;
    for (const auto& e : manifest.entries) ids.push_back(stem_of(e.sequence_path));
    const auto plan = fls::dct_batch_plan(ids, a.window, g.seed, a.epochs);
    ensure_dir(a.out);
    fls::detail::write_file(a.out / "plan.jsonl", fls::plan_to_jsonl(plan));
    emit(g, {{"command", "plan"}, {"entries", plan.size()}}, "wrote " + std::to_string(plan.size()) + " plan entries\n");
    return 0;
}

struct BenchArgs {
    std::string grid = "default";
    fs::path data, decoder, out;
    std::vector<std::string> fusers;
    std::vector<std::string> targets;
    std::size_t n = 400;
    double dev_fraction = 0.25;
    fls::TrainConfig train;
    fls::CostModel cost;
    bool timing = false;
};

int run_bench(const Globals& g, BenchArgs a) {
    if (a.grid != "default") fls::fail(fls::ErrorKind::invalid_argument, "unknown --grid '" + a.grid + "' (only 'default')");
    if (a.data.empty() != a.decoder.empty()) fls::fail(fls::ErrorKind::invalid_argument, "--data and --decoder must be given together");
    if (a.fusers.empty()) a.fusers = {"density", "single-shot", "mostsim", "avgpool", "random"};
    if (a.targets.empty()) a.targets = {"T", "T/2", "T/4", "T/8"};
    std::vector<fls::FuserKind> kinds;
    for (const auto& f : a.fusers) kinds.push_back(fls::parse_fuser(f));
    std::vector<fls::TargetSpec> targets;
    for (const auto& t : a.targets) targets.push_back(fls::parse_target(t));
    a.cost.validate();
    fls::require(a.dev_fraction > 0.0 && a.dev_fraction < 1.0, "--dev-fraction must be in (0, 1)");
    fls::require(a.n >= 2, "--n must be >= 2");

    ensure_dir(a.out);
    json summary = {{"command", "bench"}};
    fls::BenchReport report;
    const fls::BenchConfig cfg{a.cost, g.seed, g.threads};
    if (!a.data.empty()) {
        report = fls::run_grid(fls::load_dataset(a.data), fls::load_checkpoint(a.decoder), kinds, targets, cfg);
    } else {
        auto setup = fls::default_bench_setup(g.seed);
        setup.data.num_sequences = a.n;
        setup.dev_fraction = a.dev_fraction;
        setup.train = a.train;
        setup.train.seed = g.seed;
        setup.fusers = kinds;
        setup.targets = targets;
        auto result = fls::run_synthetic_bench(setup, cfg);
        fls::save_checkpoint(result.decoder, a.out / "decoder.ctd");
        fls::detail::write_file(a.out / "train_log.jsonl", fls::train_log_to_jsonl(result.log));
        summary["dev_cer"] = result.dev_error_rate;
        report = std::move(result.report);
    }
    fls::detail::write_file(a.out / "report.jsonl", fls::report_jsonl(report, a.timing));
    fls::detail::write_file(a.out / "report.csv", fls::report_csv(report, a.timing));
    fls::detail::write_file(a.out / "report.dat", fls::report_gnuplot(report));
    fls::detail::write_file(a.out / "traces.jsonl", fls::traces_jsonl(report));
    const auto trend = fls::cost_trend_table(a.cost);
    fls::detail::write_file(a.out / "cost_trend.txt", trend);

    json rows = json::array();
    std::string text;
    if (summary.contains("dev_cer")) text += "decoder dev CER " + summary["dev_cer"].dump() + "\n";
    text += "fuser        L     mean_cer  compression\n";
    for (const auto& r : report.rows) {
        rows.push_back({{"fuser", r.fuser}, {"L", r.target}, {"mean_cer", r.mean_cer}, {"mean_compression", r.mean_compression}});
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-12s %-5s %.4f    %.2f\n", r.fuser.c_str(), r.target.c_str(), r.mean_cer, r.mean_compression);
        text += buf;
    }
    summary["rows"] = rows;
    text += "\n" + trend;
    if (report.failure) {
        summary["failure"] = *report.failure;
        text += "grid stopped: " + *report.failure + "\n";
    }
    emit(g, summary, text);
    return report.failure ? kExitNumerical : 0;
}

struct OracleArgs {
    std::string suite = "all";
    fls::OracleOptions opt;
    std::size_t grad_instances = 100;
    std::size_t grad_max_T = 6;
    fs::path out;
};

int run_oracle(const Globals& g, OracleArgs a) {
    if (a.suite != "all" && a.suite != "ctc" && a.suite != "grad" && a.suite != "select")
        fls::fail(fls::ErrorKind::invalid_argument, "unknown --suite '" + a.suite + "' (ctc, grad, select, all)");
    a.opt.seed = g.seed;
    std::vector<fls::OracleResult> results;
    if (a.suite == "all" || a.suite == "ctc") results.push_back(fls::oracle_ctc_suite(a.opt));
    if (a.suite == "all" || a.suite == "grad") {
        auto o = a.opt;
        o.instances = a.grad_instances;
        o.max_T = std::min(a.opt.max_T, a.grad_max_T);
        o.max_vocab = std::max(a.opt.max_vocab, 4);
        results.push_back(fls::oracle_grad_suite(o));
    }
    if (a.suite == "all" || a.suite == "select") results.push_back(fls::oracle_select_suite(a.opt));

    bool ok = true;
    json arr = json::array();
    std::string text;
    for (const auto& r : results) {
        ok = ok && r.passed;
        json j = {{"suite", r.suite}, {"instances", r.instances}, {"max_error", r.max_error}, {"tolerance", r.tolerance}, {"passed", r.passed}};
        if (r.suite == "grad") j["max_row_sum"] = r.max_row_sum;
        arr.push_back(j);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-7s %-4s instances=%zu max_error=%.3e tolerance=%.1e\n", r.suite.c_str(),
                      r.passed ? "PASS" : "FAIL", r.instances, r.max_error, r.tolerance);
        text += buf;
    }
    const json summary = {{"command", "oracle"}, {"passed", ok}, {"suites", arr}};
    if (!a.out.empty()) {
        ensure_dir(a.out);
        fls::detail::write_file(a.out / "oracle.json", summary.dump(2) + "\n");
    }
    emit(g, summary, text);
    return ok ? 0 : kExitNumerical;
}

void add_window_options(CLI::App* sub, fls::WindowConfig& w) {
    sub->add_option("--window-frames", w.window_frames, "Speech window in frames")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--chunk-frames", w.chunk_frames, "Encoder chunk size in frames")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--target-lengths", w.target_lengths, "Target length set for dynamic compression")->check(CLI::PositiveNumber);
}

void add_train_options(CLI::App* sub, fls::TrainConfig& c) {
    sub->add_option("--steps", c.steps, "Optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--batch", c.batch_size, "Sequences per batch")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--hidden", c.hidden_dim, "Hidden width")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--lr", c.learning_rate, "Peak learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--blank-bias", c.blank_bias_init, "Initial blank logit bias")->capture_default_str();
    sub->add_option("--output-init-scale", c.output_init_scale, "Multiplier on initial output weights")->capture_default_str();
    sub->add_option("--log-every", c.log_every, "Steps between log rows")->check(CLI::PositiveNumber)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fls: content-density frame fusion toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI config file; flags override it");
    Globals g;
    app.add_option("--seed", g.seed, "Root seed for every named random stream")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker thread cap")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--json", g.json_out, "Print a JSON summary on stdout");
    app.add_flag("-v,--verbose", g.verbosity, "Verbosity");

    int code = 0;
    std::function<int()> action;

    GenArgs gen;
    auto* s_gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    s_gen->add_option("--vocab", gen.spec.vocab_size, "Token vocabulary size")->check(CLI::PositiveNumber)->capture_default_str();
    s_gen->add_option("--dim", gen.spec.embed_dim, "Frame dimension")->check(CLI::PositiveNumber)->capture_default_str();
    s_gen->add_option("--n", gen.spec.num_sequences, "Number of sequences")->capture_default_str();
    s_gen->add_option("--frames-min", gen.spec.frames_per_token_min, "Min frames per token")->check(CLI::PositiveNumber)->capture_default_str();
    s_gen->add_option("--frames-max", gen.spec.frames_per_token_max, "Max frames per token")->check(CLI::PositiveNumber)->capture_default_str();
    s_gen->add_option("--noise", gen.spec.noise_stddev, "Frame noise stddev")->check(CLI::NonNegativeNumber)->capture_default_str();
    s_gen->add_option("--silence", gen.spec.silence_prob, "Silence insertion probability")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
    s_gen->add_option("--tokens-min", gen.spec.tokens_min, "Min tokens per sequence")->capture_default_str();
    s_gen->add_option("--tokens-max", gen.spec.tokens_max, "Max tokens per sequence")->capture_default_str();
    s_gen->add_option("-o,--out", gen.out, "Output directory")->required();
    s_gen->callback([&] { action = [&] { return run_gen(g, gen); }; });

    TrainArgs train;
    auto* s_train = app.add_subcommand("train-ctc", "Train the CTC decoder");
    s_train->add_option("--data", train.data, "Training manifest")->required();
    s_train->add_option("--dev", train.dev, "Dev manifest for CER logging");
    add_train_options(s_train, train.cfg);
    s_train->add_option("-o,--out", train.out, "Output directory")->required();
    s_train->callback([&] { action = [&] { return run_train(g, train); }; });

    DensityArgs dens;
    auto* s_dens = app.add_subcommand("density", "Content density of one sequence");
    s_dens->add_option("--decoder", dens.decoder, "Decoder checkpoint")->required();
    s_dens->add_option("--input", dens.input, "Input .fsq file")->required();
    s_dens->add_option("-o,--out", dens.out, "Output directory")->required();
    s_dens->callback([&] { action = [&] { return run_density(g, dens); }; });

    CompressArgs comp;
    auto* s_comp = app.add_subcommand("compress", "Compress one sequence with a fuser");
    s_comp->add_option("--input", comp.input, "Input .fsq file")->required();
    s_comp->add_option("--decoder", comp.decoder, "Decoder checkpoint (densities)");
    s_comp->add_option("--fuser", comp.fuser, "identity, density, single-shot, mostsim, avgpool or random")->capture_default_str();
    s_comp->add_option("--L", comp.target, "Target length: N, T or T/N (default: window frames)");
    s_comp->add_option("--project-dim", comp.project_dim, "Chunk-encode through a random projection to this width first");
    add_window_options(s_comp, comp.window);
    s_comp->add_option("-o,--out", comp.out, "Output directory")->required();
    s_comp->callback([&] { action = [&] { return run_compress(g, comp); }; });

    DecodeArgs decode;
    auto* s_dec = app.add_subcommand("decode", "Greedy CTC decode");
    s_dec->add_option("--decoder", decode.decoder, "Decoder checkpoint")->required();
    s_dec->add_option("--input", decode.input, "Input .fsq file");
    s_dec->add_option("--data", decode.data, "Manifest; scores CER against labels");
    s_dec->add_option("-o,--out", decode.out, "Output directory")->required();
    s_dec->callback([&] { action = [&] { return run_decode(g, decode); }; });

    PlanArgs plan;
    auto* s_plan = app.add_subcommand("plan", "Sample per-sequence target lengths for dynamic compression");
    s_plan->add_option("--data", plan.data, "Manifest")->required();
    s_plan->add_option("--epochs", plan.epochs, "Epochs to plan")->check(CLI::PositiveNumber)->capture_default_str();
    add_window_options(s_plan, plan.window);
    s_plan->add_option("-o,--out", plan.out, "Output directory")->required();
    s_plan->callback([&] { action = [&] { return run_plan(g, plan); }; });

    BenchArgs bench;
    auto* s_bench = app.add_subcommand("bench", "Decode-retention benchmark grid");
    s_bench->add_option("--grid", bench.grid, "Grid preset")->capture_default_str();
    s_bench->add_option("--data", bench.data, "Evaluation manifest (skips generation and training)");
    s_bench->add_option("--decoder", bench.decoder, "Decoder checkpoint for --data");
    s_bench->add_option("--fusers", bench.fusers, "Fusers to evaluate");
    s_bench->add_option("--targets", bench.targets, "Target lengths (N, T, T/N)");
    s_bench->add_option("--n", bench.n, "Generated sequences (train + dev)")->check(CLI::Range(2, 1000000))->capture_default_str();
    s_bench->add_option("--dev-fraction", bench.dev_fraction, "Held-out fraction")->capture_default_str();
    add_train_options(s_bench, bench.train);
    s_bench->add_option("--cost-fixed", bench.cost.fixed_overhead, "Cost model constant term")->capture_default_str();
    s_bench->add_option("--cost-linear", bench.cost.coeff_linear, "Cost model linear coefficient")->capture_default_str();
    s_bench->add_option("--cost-quadratic", bench.cost.coeff_quadratic, "Cost model quadratic coefficient")->capture_default_str();
    s_bench->add_flag("--timing", bench.timing, "Include wall-clock columns (breaks byte-identical reruns)");
    s_bench->add_option("-o,--out", bench.out, "Output directory")->required();
    s_bench->callback([&] { action = [&] { return run_bench(g, bench); }; });

    OracleArgs oracle;
    auto* s_or = app.add_subcommand("oracle", "Run the self-check suites");
    s_or->add_option("--suite", oracle.suite, "ctc, grad, select or all")->capture_default_str();
    s_or->add_option("--max-T", oracle.opt.max_T, "Largest T for the CTC suites")->check(CLI::Range(1, 12))->capture_default_str();
    s_or->add_option("--instances", oracle.opt.instances, "Instances for the ctc and select suites")->capture_default_str();
    s_or->add_option("--grad-instances", oracle.grad_instances, "Instances for the grad suite")->capture_default_str();
    s_or->add_option("-o,--out", oracle.out, "Optional output directory for oracle.json");
    s_or->callback([&] { action = [&] { return run_oracle(g, oracle); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        code = action();
    } catch (const fls::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case fls::ErrorKind::invalid_argument: return kExitUsage;
            case fls::ErrorKind::io:
            case fls::ErrorKind::format: return kExitIo;
            case fls::ErrorKind::numerical: return kExitNumerical;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return code;
}
