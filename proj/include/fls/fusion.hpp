#pragma once

// Similarity-driven iterative span fusion with a halving schedule, its
// single-pass ablation, and the Random / AvgPool / MostSim baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "ctc.hpp"
#include "frameio.hpp"
#include "random.hpp"

namespace fls {

using SimilarityVector = std::vector<double>;
using SpanPartition = std::vector<Interval>;

struct ScheduleStep {
    std::size_t iteration = 0;
    std::size_t length = 0;       // T(m)
    std::size_t next_length = 0;  // T(m+1)
    std::size_t reduction = 0;    // r(m) = T(m) - T(m+1)

    friend bool operator==(const ScheduleStep&, const ScheduleStep&) = default;
};

using FusionSchedule = std::vector<ScheduleStep>;

/// Output of any fuser. provenance[i] is the interval of original input
/// frames folded into output frame i. carried_density is empty for fusers
/// that ran without densities.
struct CondensedSequence {
    FrameSequence sequence;
    std::vector<Interval> provenance;
    DensityVector carried_density;
    std::size_t iterations = 0;

    std::size_t length() const noexcept { return sequence.length(); }
};

/// Norms below this give a neutral similarity of 0.
inline constexpr double kMinNorm = 1e-8;
/// Spans whose total density is below this merge with uniform weights.
inline constexpr double kMinSpanDensity = 1e-8;

inline SimilarityVector adjacent_similarity(const FrameSequence& seq) {
    const std::size_t T = seq.length(), D = seq.dim();
    require(T >= 2, "adjacent similarity needs at least two frames");
    std::vector<double> norms(T);
    for (std::size_t t = 0; t < T; ++t) {
        double sq = 0.0;
        for (float v : seq.frames.row(t)) sq += static_cast<double>(v) * v;
        norms[t] = std::sqrt(sq);
    }
    SimilarityVector sims(T - 1);
    for (std::size_t t = 0; t + 1 < T; ++t) {
        if (norms[t] < kMinNorm || norms[t + 1] < kMinNorm) {
            sims[t] = 0.0;
            continue;
        }
        double dot = 0.0;
        const auto a = seq.frames.row(t), b = seq.frames.row(t + 1);
        for (std::size_t d = 0; d < D; ++d) dot += static_cast<double>(a[d]) * b[d];
        sims[t] = std::clamp(dot / (norms[t] * norms[t + 1]), -1.0, 1.0);
    }
    return sims;
}

/// Halving schedule: T(m+1) = floor(T(m)/2) while T(m) > 2L, then L.
inline FusionSchedule build_schedule(std::size_t length, std::size_t target) {
    require(target >= 1, "target length must be >= 1");
    FusionSchedule steps;
    std::size_t current = length;
    while (current > target) {
        const std::size_t next = current > 2 * target ? current / 2 : target;
        steps.push_back({steps.size(), current, next, current - next});
        current = next;
    }
    return steps;
}

/// Indices of the r largest similarities, smaller index first on ties,
/// returned in ascending order.
inline std::vector<std::size_t> select_pairs(const SimilarityVector& sims, std::size_t r) {
    require(r <= sims.size(), "cannot select " + std::to_string(r) + " pairs from " + std::to_string(sims.size()));
    std::vector<std::size_t> idx(sims.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); };
    if (r < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(r), idx.end(), better);
    idx.resize(r);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Chains of selected pairs become multi-frame spans; the rest are singletons.
inline SpanPartition group_spans(const std::vector<std::size_t>& pairs, std::size_t length) {
    std::vector<bool> joined(length > 0 ? length - 1 : 0, false);
    for (auto p : pairs) {
        require(p + 1 < length, "pair index " + std::to_string(p) + " out of range for length " + std::to_string(length));
        joined[p] = true;
    }
    SpanPartition spans;
    std::size_t start = 0;
    for (std::size_t t = 0; t < length; ++t) {
        if (t + 1 < length && joined[t]) continue;
        spans.push_back({start, t + 1});
        start = t + 1;
    }
    return spans;
}

enum class MergeWeighting { density, uniform };

struct MergeResult {
    FrameSequence sequence;
    DensityVector density;  // carried: sum of the span's densities
};

inline void validate_partition(const SpanPartition& spans, std::size_t length) {
    std::size_t expect = 0;
    for (const auto& s : spans) {
        if (s.begin != expect || s.end <= s.begin) fail(ErrorKind::invalid_argument, "span partition is not contiguous and covering");
        expect = s.end;
    }
    if (expect != length) fail(ErrorKind::invalid_argument, "span partition does not cover the sequence");
}

/// Collapses each span into one frame. Density weighting uses w_j = d_j / sum(d)
/// with a uniform fallback for near-zero mass; singletons are copied unchanged.
/// density may be empty only with uniform weighting.
inline MergeResult merge_spans(const FrameSequence& seq, const DensityVector& density, const SpanPartition& spans,
                               MergeWeighting weighting = MergeWeighting::density) {
    const bool have_density = !density.empty();
    require(have_density || weighting == MergeWeighting::uniform, "density-weighted merge needs densities");
    require(!have_density || density.size() == seq.length(), "density length does not match sequence length");
    validate_partition(spans, seq.length());

    const std::size_t D = seq.dim();
    MergeResult out;
    out.sequence.frame_rate_hz = seq.frame_rate_hz;
    out.sequence.id = seq.id;
    out.sequence.frames = Matrix<float>(spans.size(), D);
    if (have_density) out.density.resize(spans.size());
    std::vector<double> acc(D);
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto& span = spans[i];
        double mass = 0.0;
        if (have_density)
            for (std::size_t j = span.begin; j < span.end; ++j) mass += density[j];
        if (have_density) out.density[i] = mass;
        auto dst = out.sequence.frames.row(i);
        if (span.size() == 1) {
            const auto src = seq.frames.row(span.begin);
            std::copy(src.begin(), src.end(), dst.begin());
            continue;
        }
        // Equal weights take the unweighted path so results match it bit for bit.
        const bool equal = have_density && std::all_of(density.begin() + static_cast<std::ptrdiff_t>(span.begin) + 1,
                                                       density.begin() + static_cast<std::ptrdiff_t>(span.end),
                                                       [&](double d) { return d == density[span.begin]; });
        const bool uniform = weighting == MergeWeighting::uniform || mass < kMinSpanDensity || equal;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = span.begin; j < span.end; ++j) {
            const double w = uniform ? 1.0 / static_cast<double>(span.size()) : density[j] / mass;
            const auto src = seq.frames.row(j);
            for (std::size_t d = 0; d < D; ++d) acc[d] += w * src[d];
        }
        for (std::size_t d = 0; d < D; ++d) dst[d] = static_cast<float>(acc[d]);
    }
    return out;
}

struct FusionOptions {
    MergeWeighting weighting = MergeWeighting::density;
    /// Recompute densities on the merged sequence after every iteration
    /// instead of carrying span sums forward.
    bool recompute_density = false;
    std::function<DensityVector(const FrameSequence&)> density_fn;
};

namespace detail {

inline CondensedSequence identity_condensed(const FrameSequence& seq, const DensityVector& density) {
    CondensedSequence out{seq, {}, density, 0};
    out.provenance.reserve(seq.length());
    for (std::size_t t = 0; t < seq.length(); ++t) out.provenance.push_back({t, t + 1});
    return out;
}

/// One merge round that removes exactly `reduction` frames.
inline void fuse_round(CondensedSequence& state, std::size_t reduction, const FusionOptions& opts) {
    const auto spans = group_spans(select_pairs(adjacent_similarity(state.sequence), reduction), state.length());
    auto merged = merge_spans(state.sequence, state.carried_density, spans, opts.weighting);
    std::vector<Interval> provenance;
    provenance.reserve(spans.size());
    for (const auto& s : spans) provenance.push_back({state.provenance[s.begin].begin, state.provenance[s.end - 1].end});
    state.sequence = std::move(merged.sequence);
    state.provenance = std::move(provenance);
    if (opts.recompute_density) {
        state.carried_density = opts.density_fn(state.sequence);
        require(state.carried_density.size() == state.length(), "density function returned the wrong length");
    } else {
        state.carried_density = std::move(merged.density);
    }
    ++state.iterations;
}

inline void check_fusion_args(const FrameSequence& seq, const DensityVector& density, std::size_t target, const FusionOptions& opts) {
    require(target >= 1, "target length must be >= 1");
    require(seq.length() >= 1, "cannot fuse an empty sequence");
    require(density.empty() || density.size() == seq.length(),
            "density length " + std::to_string(density.size()) + " does not match sequence length " + std::to_string(seq.length()));
    require(!density.empty() || opts.weighting == MergeWeighting::uniform, "density-weighted fusion needs densities");
    require(!opts.recompute_density || static_cast<bool>(opts.density_fn), "recompute_density requires a density function");
}

}  // namespace detail

/// Iterative fusion down to exactly `target` frames (identity when T <= target).
inline CondensedSequence iterative_fusion(const FrameSequence& seq, const DensityVector& density, std::size_t target,
                                          const FusionOptions& opts = {}) {
    detail::check_fusion_args(seq, density, target, opts);
    auto state = detail::identity_condensed(seq, density);
    for (const auto& step : build_schedule(seq.length(), target)) detail::fuse_round(state, step.reduction, opts);
    return state;
}

/// Same control flow as iterative_fusion with unweighted span means.
/// Densities, when supplied, are only carried for reporting.
inline CondensedSequence baseline_mostsim(const FrameSequence& seq, std::size_t target, const DensityVector& density = {}) {
    require(target <= seq.length(), "MostSim needs L <= T");
    FusionOptions opts;
    opts.weighting = MergeWeighting::uniform;
    return iterative_fusion(seq, density, target, opts);
}

/// Single pass: select all T - L pairs at once, no halving loop.
inline CondensedSequence single_shot_fusion(const FrameSequence& seq, const DensityVector& density, std::size_t target) {
    require(target <= seq.length(), "single-shot fusion needs L <= T");
    FusionOptions opts;
    detail::check_fusion_args(seq, density, target, opts);
    auto state = detail::identity_condensed(seq, density);
    if (seq.length() > target) detail::fuse_round(state, seq.length() - target, opts);
    return state;
}

/// L distinct frames drawn uniformly without replacement, kept in temporal order.
inline CondensedSequence baseline_random(const FrameSequence& seq, std::size_t target, std::uint64_t seed,
                                         const DensityVector& density = {}) {
    require(target >= 1 && target <= seq.length(), "Random needs 1 <= L <= T");
    std::vector<std::size_t> idx(seq.length());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < target; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());

    CondensedSequence out;
    out.sequence.frame_rate_hz = seq.frame_rate_hz;
    out.sequence.id = seq.id;
    out.sequence.frames = Matrix<float>(target, seq.dim());
    for (std::size_t i = 0; i < target; ++i) {
        const auto src = seq.frames.row(idx[i]);
        std::copy(src.begin(), src.end(), out.sequence.frames.row(i).begin());
        out.provenance.push_back({idx[i], idx[i] + 1});
        if (!density.empty()) out.carried_density.push_back(density[idx[i]]);
    }
    out.iterations = seq.length() > target ? 1 : 0;
    return out;
}

/// L contiguous segments, lengths differing by at most one (longer ones first), averaged.
inline CondensedSequence baseline_avgpool(const FrameSequence& seq, std::size_t target, const DensityVector& density = {}) {
    require(target >= 1 && target <= seq.length(), "AvgPool needs 1 <= L <= T");
    require(density.empty() || density.size() == seq.length(), "density length does not match sequence length");
    const std::size_t base = seq.length() / target, extra = seq.length() % target;
    SpanPartition spans;
    std::size_t start = 0;
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t len = base + (i < extra ? 1 : 0);
        spans.push_back({start, start + len});
        start += len;
    }
    auto merged = merge_spans(seq, density, spans, MergeWeighting::uniform);
    return {std::move(merged.sequence), spans, std::move(merged.density), seq.length() > target ? 1u : 0u};
}

// ---------------------------------------------------------------------------
// Uniform dispatch over all fusers.

enum class FuserKind { identity, density, single_shot, mostsim, avgpool, random };

inline std::string_view fuser_name(FuserKind k) {
    switch (k) {
        case FuserKind::identity: return "identity";
        case FuserKind::density: return "density";
        case FuserKind::single_shot: return "single-shot";
        case FuserKind::mostsim: return "mostsim";
        case FuserKind::avgpool: return "avgpool";
        case FuserKind::random: return "random";
    }
    return "?";
}

inline FuserKind parse_fuser(std::string_view name) {
    for (auto k : {FuserKind::identity, FuserKind::density, FuserKind::single_shot, FuserKind::mostsim, FuserKind::avgpool,
                   FuserKind::random})
        if (fuser_name(k) == name) return k;
    fail(ErrorKind::invalid_argument, "unknown fuser '" + std::string(name) + "'");
}

/// Applies a fuser with L clamped to T, so every fuser returns min(T, L) frames.
inline CondensedSequence apply_fuser(FuserKind kind, const FrameSequence& seq, const DensityVector& density, std::size_t target,
                                     std::uint64_t seed = 0, const FusionOptions& opts = {}) {
    require(target >= 1, "target length must be >= 1");
    const std::size_t L = std::min(target, seq.length());
    switch (kind) {
        case FuserKind::identity: return detail::identity_condensed(seq, density);
        case FuserKind::density: return iterative_fusion(seq, density, L, opts);
        case FuserKind::single_shot: return single_shot_fusion(seq, density, L);
        case FuserKind::mostsim: return baseline_mostsim(seq, L, density);
        case FuserKind::avgpool: return baseline_avgpool(seq, L, density);
        case FuserKind::random: return baseline_random(seq, L, seed, density);
    }
    fail(ErrorKind::invalid_argument, "unknown fuser");
}

/// JSON sidecar that accompanies a condensed FSQ1 file.
inline std::string condensed_sidecar_json(const CondensedSequence& c, FuserKind kind, std::size_t input_length, std::size_t target) {
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& p : c.provenance) prov.push_back({p.begin, p.end});
    nlohmann::json j = {{"fuser", std::string(fuser_name(kind))},
                        {"input_length", input_length},
                        {"target_length", target},
                        {"output_length", c.length()},
                        {"iterations", c.iterations},
                        {"provenance", prov},
                        {"carried_density", c.carried_density}};
    return j.dump() + "\n";
}

}  // namespace fls
