#pragma once

// CTC objective over a per-frame posterior grid: forward DP in log space,
// forward-backward gradient w.r.t. logits, the exhaustive alignment oracle,
// best-path decoding and content density.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"

namespace fls {

/// T x (V+1) per-frame log-probabilities, blank in column 0.
struct PosteriorGrid {
    Matrix<double> log_probs;

    std::size_t length() const noexcept { return log_probs.rows(); }
    std::size_t num_classes() const noexcept { return log_probs.cols(); }
    std::int32_t vocab_size() const noexcept { return static_cast<std::int32_t>(log_probs.cols()) - 1; }
};

using DensityVector = std::vector<double>;

namespace logspace {

/// Log-zero sentinel; anything at or below kZeroThreshold counts as log 0.
inline constexpr double kZero = -1e300;
inline constexpr double kZeroThreshold = -1e30;

inline bool is_zero(double x) { return !(x > kZeroThreshold); }

inline double mul(double a, double b) { return (is_zero(a) || is_zero(b)) ? kZero : a + b; }

inline double add(double a, double b) {
    if (is_zero(a)) return is_zero(b) ? kZero : b;
    if (is_zero(b)) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Sentinel to -inf for values handed back to callers.
inline double finish(double x) { return is_zero(x) ? -std::numeric_limits<double>::infinity() : x; }

}  // namespace logspace

inline PosteriorGrid log_softmax_rows(const Matrix<double>& logits) {
    PosteriorGrid grid{Matrix<double>(logits.rows(), logits.cols())};
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        const auto in = logits.row(t);
        const double hi = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (double v : in) sum += std::exp(v - hi);
        const double lse = hi + std::log(sum);
        auto out = grid.log_probs.row(t);
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] - lse;
    }
    return grid;
}

/// Checks the row-stochastic invariant (probabilities sum to 1 within tol, entries <= 0).
inline void validate_grid(const PosteriorGrid& grid, double tol = 1e-6) {
    require(grid.num_classes() >= 2, "posterior grid needs at least blank plus one token");
    for (std::size_t t = 0; t < grid.length(); ++t) {
        double sum = 0.0;
        for (double lp : grid.log_probs.row(t)) {
            if (std::isnan(lp) || lp > 1e-12)
                fail(ErrorKind::numerical, "posterior grid row " + std::to_string(t) + " has an entry that is not a log-probability");
            sum += std::exp(lp);
        }
        if (std::abs(sum - 1.0) > tol)
            fail(ErrorKind::numerical, "posterior grid row " + std::to_string(t) + " sums to " + std::to_string(sum));
    }
}

/// Shortest frame count that can emit the label: one frame per token plus a
/// separating blank between each pair of equal neighbours.
inline std::size_t min_alignment_length(const LabelSequence& label) {
    std::size_t n = label.size();
    for (std::size_t i = 1; i < label.size(); ++i) n += label[i] == label[i - 1];
    return n;
}

namespace detail {

inline void check_ctc_inputs(const PosteriorGrid& grid, const LabelSequence& label) {
    const auto vocab = grid.vocab_size();
    require(vocab >= 1, "posterior grid needs at least blank plus one token");
    for (auto tok : label)
        require(tok >= 1 && tok <= vocab, "label token " + std::to_string(tok) + " outside [1, " + std::to_string(vocab) + "]");
    require(min_alignment_length(label) <= grid.length(),
            "infeasible CTC instance: label needs at least " + std::to_string(min_alignment_length(label)) +
                " frames but T = " + std::to_string(grid.length()));
}

/// Blank-interleaved extended label: eps c1 eps c2 ... cN eps.
inline std::vector<std::int32_t> extend_label(const LabelSequence& label) {
    std::vector<std::int32_t> ext(2 * label.size() + 1, kBlank);
    for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
    return ext;
}

/// alpha(t, s): log prob of all prefixes ending in state s at frame t, emission at t included.
inline Matrix<double> ctc_alpha(const PosteriorGrid& grid, const std::vector<std::int32_t>& ext) {
    const std::size_t T = grid.length(), S = ext.size();
    Matrix<double> alpha(T, S, logspace::kZero);
    const auto& lp = grid.log_probs;
    alpha(0, 0) = lp(0, static_cast<std::size_t>(ext[0]));
    if (S > 1) alpha(0, 1) = lp(0, static_cast<std::size_t>(ext[1]));
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            double acc = alpha(t - 1, s);
            if (s >= 1) acc = logspace::add(acc, alpha(t - 1, s - 1));
            if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) acc = logspace::add(acc, alpha(t - 1, s - 2));
            alpha(t, s) = logspace::mul(acc, lp(t, static_cast<std::size_t>(ext[s])));
        }
    }
    return alpha;
}

/// beta(t, s): log prob of completing from state s at frame t, emission at t excluded.
inline Matrix<double> ctc_beta(const PosteriorGrid& grid, const std::vector<std::int32_t>& ext) {
    const std::size_t T = grid.length(), S = ext.size();
    Matrix<double> beta(T, S, logspace::kZero);
    const auto& lp = grid.log_probs;
    beta(T - 1, S - 1) = 0.0;
    if (S > 1) beta(T - 1, S - 2) = 0.0;
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            auto step = [&](std::size_t to) { return logspace::mul(beta(t + 1, to), lp(t + 1, static_cast<std::size_t>(ext[to]))); };
            double acc = step(s);
            if (s + 1 < S) acc = logspace::add(acc, step(s + 1));
            if (s + 2 < S && ext[s + 2] != kBlank && ext[s + 2] != ext[s]) acc = logspace::add(acc, step(s + 2));
            beta(t, s) = acc;
        }
    }
    return beta;
}

inline double ctc_total(const Matrix<double>& alpha) {
    const std::size_t T = alpha.rows(), S = alpha.cols();
    double total = alpha(T - 1, S - 1);
    if (S > 1) total = logspace::add(total, alpha(T - 1, S - 2));
    return total;
}

}  // namespace detail

/// log of the summed probability of every alignment that collapses to label.
/// The CTC loss is the negation. Returns -inf when no alignment has mass.
inline double ctc_log_loss(const PosteriorGrid& grid, const LabelSequence& label) {
    detail::check_ctc_inputs(grid, label);
    const auto ext = detail::extend_label(label);
    return logspace::finish(detail::ctc_total(detail::ctc_alpha(grid, ext)));
}

/// Gradient of -ctc_log_loss with respect to the pre-softmax logits whose
/// log-softmax is grid: softmax minus the normalised state occupancy per class.
inline Matrix<double> ctc_grad(const PosteriorGrid& grid, const LabelSequence& label, double* log_likelihood = nullptr) {
    detail::check_ctc_inputs(grid, label);
    const auto ext = detail::extend_label(label);
    const auto alpha = detail::ctc_alpha(grid, ext);
    const auto beta = detail::ctc_beta(grid, ext);
    const double total = detail::ctc_total(alpha);
    if (logspace::is_zero(total)) fail(ErrorKind::numerical, "CTC gradient undefined: label has zero probability under the grid");
    if (log_likelihood) *log_likelihood = total;

    const std::size_t T = grid.length(), C = grid.num_classes(), S = ext.size();
    Matrix<double> grad(T, C);
    std::vector<double> occupancy(C);
    for (std::size_t t = 0; t < T; ++t) {
        std::fill(occupancy.begin(), occupancy.end(), logspace::kZero);
        for (std::size_t s = 0; s < S; ++s) {
            const auto k = static_cast<std::size_t>(ext[s]);
            occupancy[k] = logspace::add(occupancy[k], logspace::mul(alpha(t, s), beta(t, s)));
        }
        for (std::size_t k = 0; k < C; ++k) {
            const double p = std::exp(grid.log_probs(t, k));
            const double gamma = logspace::is_zero(occupancy[k]) ? 0.0 : std::exp(occupancy[k] - total);
            grad(t, k) = p - gamma;
        }
    }
    return grad;
}

/// Merge adjacent repeats, then drop blanks.
inline LabelSequence collapse(const std::vector<std::int32_t>& path) {
    LabelSequence out;
    std::int32_t prev = -1;
    for (auto a : path) {
        if (a != prev && a != kBlank) out.push_back(a);
        prev = a;
    }
    return out;
}

/// Exhaustive reference: sums the probability of every path in [0, V]^T whose
/// collapse equals label. Shares nothing with the DP.
inline double enumerate_alignments_oracle(const PosteriorGrid& grid, const LabelSequence& label) {
    const std::size_t T = grid.length(), C = grid.num_classes();
    require(T >= 1 && C >= 2, "oracle needs a non-empty grid");
    double count = 1.0;
    for (std::size_t t = 0; t < T; ++t) count *= static_cast<double>(C);
    require(count <= 1e7, "alignment enumeration guard exceeded: (V+1)^T = " + std::to_string(count) + " > 1e7");

    std::vector<std::int32_t> path(T, 0);
    double sum = 0.0;
    while (true) {
        if (collapse(path) == label) {
            double prob = 1.0;
            for (std::size_t t = 0; t < T; ++t) prob *= std::exp(grid.log_probs(t, static_cast<std::size_t>(path[t])));
            sum += prob;
        }
        std::size_t t = 0;
        while (t < T && ++path[t] == static_cast<std::int32_t>(C)) path[t++] = 0;
        if (t == T) break;
    }
    return sum > 0.0 ? std::log(sum) : -std::numeric_limits<double>::infinity();
}

/// Per-frame argmax (lowest class on ties).
inline std::vector<std::int32_t> best_path(const PosteriorGrid& grid) {
    std::vector<std::int32_t> path(grid.length());
    for (std::size_t t = 0; t < grid.length(); ++t) {
        const auto row = grid.log_probs.row(t);
        path[t] = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return path;
}

inline LabelSequence greedy_decode(const PosteriorGrid& grid) { return collapse(best_path(grid)); }

/// d_j = 1 - p(blank | h_j), the non-blank mass of each frame.
inline DensityVector content_density(const PosteriorGrid& grid) {
    DensityVector d(grid.length());
    for (std::size_t t = 0; t < grid.length(); ++t) {
        const double lp_blank = grid.log_probs(t, 0);
        d[t] = std::clamp(-std::expm1(std::min(lp_blank, 0.0)), 0.0, 1.0);
    }
    return d;
}

}  // namespace fls
