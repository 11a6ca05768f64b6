#pragma once

// Frame-sequence data model, the FSQ1 binary format, JSONL manifests, and the
// seeded synthetic generator that stands in for encoder output.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "random.hpp"

namespace fls {

struct FrameSequence {
    Matrix<float> frames;  // T x D
    double frame_rate_hz = 25.0;
    std::string id;

    std::size_t length() const noexcept { return frames.rows(); }
    std::size_t dim() const noexcept { return frames.cols(); }
};

inline bool all_finite(const Matrix<float>& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); });
}

inline void validate(const FrameSequence& seq) {
    require(seq.length() >= 1, "frame sequence must have at least one frame");
    require(seq.dim() >= 1, "frame sequence must have dimension >= 1");
    require(seq.frame_rate_hz > 0.0, "frame rate must be positive");
    if (!all_finite(seq.frames)) fail(ErrorKind::numerical, "frame sequence '" + seq.id + "' contains non-finite values");
}

// ---------------------------------------------------------------------------
// FSQ1: "FSQ1", T u32le, D u32le, T*D f32le row-major.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::string encode_fseq(const FrameSequence& seq) {
    validate(seq);
    std::string out;
    out.reserve(12 + 4 * seq.frames.data().size());
    out.append("FSQ1");
    detail::put_u32(out, static_cast<std::uint32_t>(seq.length()));
    detail::put_u32(out, static_cast<std::uint32_t>(seq.dim()));
    for (float v : seq.frames.data()) detail::put_f32(out, v);
    return out;
}

inline FrameSequence decode_fseq(const std::string& bytes, const std::string& id = {}) {
    if (bytes.size() < 12) fail(ErrorKind::format, "FSQ1 header truncated: expected 12 bytes, got " + std::to_string(bytes.size()));
    if (bytes.compare(0, 4, "FSQ1") != 0) fail(ErrorKind::format, "bad magic '" + bytes.substr(0, 4) + "', expected 'FSQ1'");
    const std::uint64_t rows = detail::get_u32(bytes.data() + 4);
    const std::uint64_t cols = detail::get_u32(bytes.data() + 8);
    const std::uint64_t expected = 12 + 4 * rows * cols;
    if (bytes.size() < expected)
        fail(ErrorKind::format, "truncated FSQ1 payload: expected " + std::to_string(expected) + " bytes, got " +
                                    std::to_string(bytes.size()));
    if (bytes.size() > expected)
        fail(ErrorKind::format, "trailing bytes after FSQ1 payload: expected " + std::to_string(expected) + " bytes, got " +
                                    std::to_string(bytes.size()));
    FrameSequence seq;
    seq.id = id;
    seq.frames = Matrix<float>(rows, cols);
    const char* p = bytes.data() + 12;
    for (auto& v : seq.frames.data()) {
        v = detail::get_f32(p);
        p += 4;
    }
    if (rows == 0 || cols == 0) fail(ErrorKind::format, "FSQ1 file declares an empty matrix");
    if (!all_finite(seq.frames)) fail(ErrorKind::format, "FSQ1 payload contains non-finite values");
    return seq;
}

inline void write_fseq(const FrameSequence& seq, const std::filesystem::path& path) {
    detail::write_file(path, encode_fseq(seq));  // encode validates before anything is written
}

inline FrameSequence read_fseq(const std::filesystem::path& path) {
    return decode_fseq(detail::read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Synthetic ASR-proxy data.

struct SyntheticSpec {
    std::int32_t vocab_size = 8;
    std::size_t embed_dim = 16;
    std::size_t frames_per_token_min = 6;
    std::size_t frames_per_token_max = 12;
    double noise_stddev = 0.0;
    double silence_prob = 0.3;
    std::size_t num_sequences = 200;
    std::size_t tokens_min = 4;
    std::size_t tokens_max = 12;
    std::uint64_t seed = 42;

    void validate() const {
        require(vocab_size >= 1, "vocab size must be >= 1");
        require(embed_dim >= 1, "embedding dimension must be >= 1");
        require(frames_per_token_min >= 1, "frames per token minimum must be >= 1");
        require(frames_per_token_max >= frames_per_token_min, "frames per token range is empty");
        require(noise_stddev >= 0.0 && std::isfinite(noise_stddev), "noise stddev must be >= 0");
        require(silence_prob >= 0.0 && silence_prob < 1.0, "silence probability must be in [0, 1)");
        require(tokens_max >= tokens_min, "tokens per sequence range is empty");
    }
};

/// Stddev of the near-zero frames inserted as silence.
inline constexpr double kSilenceStddev = 0.01;

/// Per-sequence generator trace: frames emitted per token and silence frames
/// inserted after each token (the last entry is always 0).
struct GenTrace {
    std::vector<std::uint32_t> emissions;
    std::vector<std::uint32_t> silence_after;

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (auto e : emissions) n += e;
        for (auto s : silence_after) n += s;
        return n;
    }
};

struct ManifestEntry {
    std::string sequence_path;  // relative to the manifest directory
    std::string label_path;
    std::size_t duration_frames = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::int32_t vocab_size = 0;
    std::uint64_t seed = 0;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<FrameSequence> sequences;
    std::vector<LabelSequence> labels;
    std::vector<GenTrace> traces;  // empty when loaded from files without traces

    std::size_t size() const noexcept { return sequences.size(); }
};

/// Unit-norm anchor embedding per token id; row v-1 holds e_v.
inline Matrix<float> anchor_embeddings(std::int32_t vocab_size, std::size_t dim, std::uint64_t seed) {
    Matrix<float> anchors(static_cast<std::size_t>(vocab_size), dim);
    Rng rng(derive_seed(seed, "anchors"));
    std::vector<double> tmp(dim);
    for (std::size_t v = 0; v < anchors.rows(); ++v) {
        double norm = 0.0;
        for (auto& x : tmp) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (std::size_t d = 0; d < dim; ++d) anchors(v, d) = static_cast<float>(tmp[d] / norm);
    }
    return anchors;
}

/// Renders one token list into frames. Draws emission counts, noise and silence from rng.
inline FrameSequence synthesize_sequence(const LabelSequence& tokens, const SyntheticSpec& spec,
                                         const Matrix<float>& anchors, Rng& rng, GenTrace* trace = nullptr) {
    std::vector<float> data;
    GenTrace local;
    const std::size_t dim = spec.embed_dim;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto v = tokens[i];
        require(v >= 1 && v <= spec.vocab_size, "token id out of range");
        const auto k = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(spec.frames_per_token_min),
                                                            static_cast<std::int64_t>(spec.frames_per_token_max)));
        for (std::size_t f = 0; f < k; ++f)
            for (std::size_t d = 0; d < dim; ++d)
                data.push_back(static_cast<float>(anchors(static_cast<std::size_t>(v - 1), d) +
                                                  (spec.noise_stddev > 0.0 ? spec.noise_stddev * rng.normal() : 0.0)));
        local.emissions.push_back(static_cast<std::uint32_t>(k));
        std::uint32_t silence = 0;
        if (i + 1 < tokens.size() && spec.silence_prob > 0.0 && rng.uniform01() < spec.silence_prob) {
            silence = static_cast<std::uint32_t>(rng.between(1, 3));
            for (std::uint32_t f = 0; f < silence; ++f)
                for (std::size_t d = 0; d < dim; ++d) data.push_back(static_cast<float>(kSilenceStddev * rng.normal()));
        }
        local.silence_after.push_back(silence);
    }
    if (tokens.empty()) {
        // an empty transcript still yields one silence frame so T >= 1 holds
        for (std::size_t d = 0; d < dim; ++d) data.push_back(static_cast<float>(kSilenceStddev * rng.normal()));
        local.silence_after.push_back(1);
    }
    FrameSequence seq;
    const std::size_t rows = data.size() / dim;
    seq.frames = Matrix<float>(rows, dim, std::move(data));
    if (trace) *trace = std::move(local);
    return seq;
}

inline std::string sequence_name(std::size_t i) {
    std::ostringstream ss;
    ss << "seq_" << std::setw(5) << std::setfill('0') << i;
    return ss.str();
}

/// Token lists never repeat a token back to back (when V >= 2): a framewise
/// decoder cannot separate two identical anchors without a blank between them.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto anchors = anchor_embeddings(spec.vocab_size, spec.embed_dim, spec.seed);
    Rng rng(derive_seed(spec.seed, "generator"));
    Dataset set;
    set.manifest.vocab_size = spec.vocab_size;
    set.manifest.seed = spec.seed;
    for (std::size_t i = 0; i < spec.num_sequences; ++i) {
        const auto n = static_cast<std::size_t>(
            rng.between(static_cast<std::int64_t>(spec.tokens_min), static_cast<std::int64_t>(spec.tokens_max)));
        LabelSequence tokens;
        for (std::size_t t = 0; t < n; ++t) {
            std::int32_t v;
            if (spec.vocab_size == 1) {
                v = 1;
            } else if (tokens.empty()) {
                v = 1 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
            } else {
                v = 1 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.vocab_size - 1)));
                if (v >= tokens.back()) ++v;
            }
            tokens.push_back(v);
        }
        GenTrace trace;
        auto seq = synthesize_sequence(tokens, spec, anchors, rng, &trace);
        seq.id = sequence_name(i);
        set.manifest.entries.push_back({seq.id + ".fsq", seq.id + ".lab.jsonl", seq.length()});
        set.sequences.push_back(std::move(seq));
        set.labels.push_back(std::move(tokens));
        set.traces.push_back(std::move(trace));
    }
    return set;
}

/// Entries [begin, end) of a dataset as a new dataset (splits share anchors).
inline Dataset slice_dataset(const Dataset& set, std::size_t begin, std::size_t end) {
    require(begin <= end && end <= set.size(), "dataset slice out of range");
    Dataset out;
    out.manifest.vocab_size = set.manifest.vocab_size;
    out.manifest.seed = set.manifest.seed;
    const auto b = static_cast<std::ptrdiff_t>(begin), e = static_cast<std::ptrdiff_t>(end);
    out.manifest.entries.assign(set.manifest.entries.begin() + b, set.manifest.entries.begin() + e);
    out.sequences.assign(set.sequences.begin() + b, set.sequences.begin() + e);
    out.labels.assign(set.labels.begin() + b, set.labels.begin() + e);
    if (!set.traces.empty()) out.traces.assign(set.traces.begin() + b, set.traces.begin() + e);
    return out;
}

// ---------------------------------------------------------------------------
// JSONL manifest / label files and the vocab file.

inline std::string manifest_to_jsonl(const DatasetManifest& m) {
    std::string out;
    nlohmann::json header = {{"type", "header"}, {"vocab_size", m.vocab_size}, {"seed", m.seed}};
    out += header.dump() + "\n";
    for (const auto& e : m.entries) {
        nlohmann::json j = {{"type", "entry"},
                            {"sequence", e.sequence_path},
                            {"labels", e.label_path},
                            {"duration_frames", e.duration_frames}};
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

inline DatasetManifest parse_manifest(const std::vector<nlohmann::json>& rows, const std::string& where) {
    DatasetManifest m;
    bool have_header = false;
    try {
        for (const auto& row : rows) {
            const auto type = row.value("type", std::string("entry"));
            if (type == "header") {
                m.vocab_size = row.at("vocab_size").get<std::int32_t>();
                m.seed = row.value("seed", std::uint64_t{0});
                have_header = true;
            } else {
                m.entries.push_back({row.at("sequence").get<std::string>(), row.at("labels").get<std::string>(),
                                     row.at("duration_frames").get<std::size_t>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, where + ": malformed manifest: " + e.what());
    }
    if (!have_header) fail(ErrorKind::format, where + ": manifest has no header line");
    if (m.vocab_size < 1) fail(ErrorKind::format, where + ": manifest vocab_size must be >= 1");
    return m;
}

inline std::string label_to_jsonl(const std::string& id, const LabelSequence& tokens, const GenTrace* trace) {
    nlohmann::json j = {{"id", id}, {"tokens", tokens}};
    if (trace) {
        j["emissions"] = trace->emissions;
        j["silence_after"] = trace->silence_after;
    }
    return j.dump() + "\n";
}

inline std::string vocab_json(std::int32_t vocab_size) {
    nlohmann::json j = nlohmann::json::object();
    for (std::int32_t v = 1; v <= vocab_size; ++v) j[std::to_string(v)] = "tok" + std::to_string(v);
    return j.dump(2) + "\n";
}

/// Writes sequences, label files, manifest.jsonl and vocab.json into dir.
inline void write_dataset(const Dataset& set, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create directory '" + dir.string() + "': " + ec.message());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& e = set.manifest.entries[i];
        write_fseq(set.sequences[i], dir / e.sequence_path);
        detail::write_file(dir / e.label_path,
                           label_to_jsonl(set.sequences[i].id, set.labels[i], set.traces.empty() ? nullptr : &set.traces[i]));
    }
    detail::write_file(dir / "manifest.jsonl", manifest_to_jsonl(set.manifest));
    detail::write_file(dir / "vocab.json", vocab_json(set.manifest.vocab_size));
}

/// Loads every entry referenced by a manifest; paths resolve against its directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset set;
    set.manifest = parse_manifest(read_jsonl(manifest_path), manifest_path.string());
    const auto base = manifest_path.parent_path();
    bool traces = true;
    for (const auto& e : set.manifest.entries) {
        auto seq = read_fseq(base / e.sequence_path);
        if (seq.length() != e.duration_frames)
            fail(ErrorKind::format, e.sequence_path + ": manifest says " + std::to_string(e.duration_frames) +
                                        " frames, file has " + std::to_string(seq.length()));
        const auto rows = read_jsonl(base / e.label_path);
        if (rows.size() != 1) fail(ErrorKind::format, e.label_path + ": expected exactly one label object");
        LabelSequence tokens;
        GenTrace trace;
        try {
            tokens = rows[0].at("tokens").get<LabelSequence>();
            if (rows[0].contains("emissions")) {
                trace.emissions = rows[0].at("emissions").get<std::vector<std::uint32_t>>();
                trace.silence_after = rows[0].at("silence_after").get<std::vector<std::uint32_t>>();
            } else {
                traces = false;
            }
            if (rows[0].contains("id")) seq.id = rows[0].at("id").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::format, e.label_path + ": " + ex.what());
        }
        for (auto t : tokens)
            if (t < 1 || t > set.manifest.vocab_size)
                fail(ErrorKind::format, e.label_path + ": token " + std::to_string(t) + " outside [1, vocab_size]");
        set.sequences.push_back(std::move(seq));
        set.labels.push_back(std::move(tokens));
        set.traces.push_back(std::move(trace));
    }
    if (!traces) set.traces.clear();
    return set;
}

}  // namespace fls
