#pragma once

// Long-input handling: fixed-size chunking through an encoder hook, window
// compression, and the dynamic target-length sampler with its plan files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "frameio.hpp"
#include "fusion.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace fls {

struct WindowConfig {
    std::size_t window_frames = 750;
    std::size_t chunk_frames = 750;  // 30 s at 25 Hz
    std::vector<std::size_t> target_lengths{750, 400, 200, 100, 50, 25, 12};

    void validate() const {
        require(!target_lengths.empty(), "target length set must be non-empty");
        require(chunk_frames >= 1, "chunk_frames must be >= 1");
        for (auto L : target_lengths) {
            require(L >= 1, "target lengths must be >= 1");
            require(L <= window_frames, "target length " + std::to_string(L) + " exceeds window_frames " + std::to_string(window_frames));
        }
    }
};

/// Overlays the fields present in a JSON object onto cfg.
inline void merge_window_config(WindowConfig& cfg, const nlohmann::json& j) {
    try {
        if (j.contains("window_frames")) cfg.window_frames = j.at("window_frames").get<std::size_t>();
        if (j.contains("chunk_frames")) cfg.chunk_frames = j.at("chunk_frames").get<std::size_t>();
        if (j.contains("target_lengths")) cfg.target_lengths = j.at("target_lengths").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("malformed window config: ") + e.what());
    }
}

inline WindowConfig load_window_config(const std::filesystem::path& path) {
    WindowConfig cfg;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
    merge_window_config(cfg, j);
    return cfg;
}

/// Chunk-to-chunk transformation; must keep the frame count.
using EncoderHook = std::function<Matrix<float>(const Matrix<float>&)>;

inline EncoderHook identity_hook() {
    return [](const Matrix<float>& chunk) { return chunk; };
}

/// Fixed Gaussian projection D_in -> D_out scaled by 1/sqrt(D_in).
inline EncoderHook random_projection_hook(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    Matrix<float> proj(in_dim, out_dim);
    Rng rng(derive_seed(seed, "projection"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& w : proj.data()) w = static_cast<float>(scale * rng.normal());
    return [proj = std::move(proj)](const Matrix<float>& chunk) {
        require(chunk.cols() == proj.rows(), "projection hook input dimension mismatch");
        Matrix<float> out(chunk.rows(), proj.cols());
        for (std::size_t t = 0; t < chunk.rows(); ++t)
            for (std::size_t o = 0; o < proj.cols(); ++o) {
                double acc = 0.0;
                for (std::size_t d = 0; d < proj.rows(); ++d) acc += static_cast<double>(chunk(t, d)) * proj(d, o);
                out(t, o) = static_cast<float>(acc);
            }
        return out;
    };
}

/// Encodes consecutive chunks of cfg.chunk_frames (last one may be short) and
/// concatenates them in temporal order.
inline FrameSequence chunk_and_encode(const FrameSequence& seq, const WindowConfig& cfg, const EncoderHook& hook,
                                      unsigned threads = 1) {
    require(seq.length() >= 1, "cannot chunk an empty sequence");
    require(cfg.chunk_frames >= 1, "chunk_frames must be >= 1");
    const std::size_t T = seq.length(), D = seq.dim();
    const std::size_t n_chunks = (T + cfg.chunk_frames - 1) / cfg.chunk_frames;
    std::vector<Matrix<float>> encoded(n_chunks);
    parallel_for(n_chunks, threads, [&](std::size_t c) {
        const std::size_t begin = c * cfg.chunk_frames, end = std::min(T, begin + cfg.chunk_frames);
        std::vector<float> data(seq.frames.data().begin() + static_cast<std::ptrdiff_t>(begin * D),
                                seq.frames.data().begin() + static_cast<std::ptrdiff_t>(end * D));
        encoded[c] = hook(Matrix<float>(end - begin, D, std::move(data)));
        if (encoded[c].rows() != end - begin)
            fail(ErrorKind::invalid_argument, "encoder hook changed chunk " + std::to_string(c) + " length from " +
                                                  std::to_string(end - begin) + " to " + std::to_string(encoded[c].rows()));
    });
    const std::size_t out_dim = encoded.front().cols();
    std::vector<float> out;
    out.reserve(T * out_dim);
    for (const auto& chunk : encoded) {
        require(chunk.cols() == out_dim, "encoder hook output dimension varies across chunks");
        out.insert(out.end(), chunk.data().begin(), chunk.data().end());
    }
    FrameSequence result;
    result.frames = Matrix<float>(T, out_dim, std::move(out));
    result.frame_rate_hz = seq.frame_rate_hz;
    result.id = seq.id;
    return result;
}

/// Iterative fusion to the speech window; inputs already inside it pass through.
inline CondensedSequence compress_to_window(const FrameSequence& seq, const DensityVector& density, const WindowConfig& cfg,
                                            const FusionOptions& opts = {}) {
    require(cfg.window_frames >= 1, "window_frames must be >= 1");
    return iterative_fusion(seq, density, cfg.window_frames, opts);
}

/// One uniform draw from the target length set.
inline std::size_t sample_target_length(const WindowConfig& cfg, Rng& rng) {
    require(!cfg.target_lengths.empty(), "target length set must be non-empty");
    return cfg.target_lengths[rng.below(cfg.target_lengths.size())];
}

struct PlanEntry {
    std::string id;
    std::size_t target_length = 0;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

/// One sampled L per sequence per epoch, drawn from the "sampler" sub-stream of seed.
inline std::vector<PlanEntry> dct_batch_plan(const std::vector<std::string>& ids, const WindowConfig& cfg, std::uint64_t seed,
                                             std::size_t epochs = 1) {
    require(!cfg.target_lengths.empty(), "target length set must be non-empty");
    require(!ids.empty(), "plan needs at least one sequence");
    Rng rng(derive_seed(seed, "sampler"));
    std::vector<PlanEntry> plan;
    plan.reserve(ids.size() * epochs);
    for (std::size_t e = 0; e < epochs; ++e)
        for (const auto& id : ids) plan.push_back({id, sample_target_length(cfg, rng), e, seed});
    return plan;
}

inline std::string plan_to_jsonl(const std::vector<PlanEntry>& plan) {
    std::string out;
    for (const auto& p : plan)
        out += nlohmann::json{{"id", p.id}, {"L", p.target_length}, {"epoch", p.epoch}, {"seed", p.seed}}.dump() + "\n";
    return out;
}

inline std::vector<PlanEntry> plan_from_jsonl(const std::filesystem::path& path) {
    std::vector<PlanEntry> plan;
    for (const auto& row : read_jsonl(path)) {
        try {
            plan.push_back({row.at("id").get<std::string>(), row.at("L").get<std::size_t>(), row.at("epoch").get<std::size_t>(),
                            row.at("seed").get<std::uint64_t>()});
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, path.string() + ": " + e.what());
        }
    }
    return plan;
}

/// Loss of one example under its condensed representation.
using DownstreamLoss = std::function<double(const CondensedSequence&, const LabelSequence&)>;

/// Sum over plan entries of downstream_loss(IF(h, L), label); the plan decides L per example.
inline double dynamic_compression_objective(const Dataset& data, const std::vector<DensityVector>& densities,
                                            const std::vector<PlanEntry>& plan, const DownstreamLoss& downstream_loss) {
    require(densities.size() == data.size(), "one density vector per sequence is required");
    double total = 0.0;
    for (const auto& entry : plan) {
        std::size_t i = 0;
        while (i < data.size() && data.sequences[i].id != entry.id) ++i;
        require(i < data.size(), "plan references unknown sequence '" + entry.id + "'");
        const auto condensed = iterative_fusion(data.sequences[i], densities[i], entry.target_length);
        total += downstream_loss(condensed, data.labels[i]);
    }
    return total;
}

}  // namespace fls
