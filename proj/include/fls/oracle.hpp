#pragma once

// Self-check suites shared by the CLI and the acceptance tests: CTC DP vs.
// exhaustive enumeration, analytic vs. finite-difference gradients, and pair
// selection vs. a full sort.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "core.hpp"
#include "ctc.hpp"
#include "fusion.hpp"
#include "random.hpp"

namespace fls {

struct OracleResult {
    std::string suite;
    std::size_t instances = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    double max_row_sum = 0.0;  // grad suite only
    bool passed = false;
};

struct OracleOptions {
    std::size_t instances = 1000;
    std::size_t max_T = 8;
    std::int32_t max_vocab = 3;
    std::size_t max_label = 3;
    std::uint64_t seed = 0;
};

inline Matrix<double> random_logits(std::size_t T, std::size_t C, Rng& rng, double scale = 2.0) {
    Matrix<double> z(T, C);
    for (auto& v : z.data()) v = scale * rng.normal();
    return z;
}

/// Random label that fits in T frames.
inline LabelSequence random_label(std::size_t max_len, std::size_t T, std::int32_t vocab, Rng& rng) {
    LabelSequence label(rng.below(max_len + 1));
    for (auto& c : label) c = static_cast<std::int32_t>(rng.between(1, vocab));
    while (min_alignment_length(label) > T) label.pop_back();
    return label;
}

inline OracleResult oracle_ctc_suite(const OracleOptions& opt) {
    require(opt.max_T >= 1 && opt.max_vocab >= 1, "oracle suite needs max_T >= 1 and vocab >= 1");
    Rng rng(derive_seed(opt.seed, "oracle-ctc"));
    OracleResult res{"ctc", opt.instances, 0.0, 1e-9, 0.0, true};
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const auto T = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(opt.max_T)));
        const auto V = static_cast<std::int32_t>(rng.between(1, opt.max_vocab));
        const auto label = random_label(opt.max_label, T, V, rng);
        const auto grid = log_softmax_rows(random_logits(T, static_cast<std::size_t>(V) + 1, rng));
        res.max_error = std::max(res.max_error, std::abs(ctc_log_loss(grid, label) - enumerate_alignments_oracle(grid, label)));
    }
    res.passed = res.max_error <= res.tolerance;
    return res;
}

/// Norm-wise relative error of the analytic logit gradient against central
/// differences, plus the largest |row sum| of the analytic gradient.
inline OracleResult oracle_grad_suite(const OracleOptions& opt, double step = 1e-5) {
    require(opt.max_T >= 1 && opt.max_vocab >= 1, "oracle suite needs max_T >= 1 and vocab >= 1");
    Rng rng(derive_seed(opt.seed, "oracle-grad"));
    OracleResult res{"grad", opt.instances, 0.0, 1e-4, 0.0, true};
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const auto T = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(opt.max_T)));
        const auto V = static_cast<std::int32_t>(rng.between(1, opt.max_vocab));
        const auto label = random_label(opt.max_label, T, V, rng);
        auto z = random_logits(T, static_cast<std::size_t>(V) + 1, rng, 1.0);
        const auto grad = ctc_grad(log_softmax_rows(z), label);
        double diff2 = 0.0, norm_a = 0.0, norm_n = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            double row = 0.0;
            for (std::size_t k = 0; k < z.cols(); ++k) {
                const double keep = z(t, k);
                z(t, k) = keep + step;
                const double up = -ctc_log_loss(log_softmax_rows(z), label);
                z(t, k) = keep - step;
                const double down = -ctc_log_loss(log_softmax_rows(z), label);
                z(t, k) = keep;
                const double numeric = (up - down) / (2.0 * step);
                diff2 += (grad(t, k) - numeric) * (grad(t, k) - numeric);
                norm_a += grad(t, k) * grad(t, k);
                norm_n += numeric * numeric;
                row += grad(t, k);
            }
            res.max_row_sum = std::max(res.max_row_sum, std::abs(row));
        }
        const double denom = std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-12});
        res.max_error = std::max(res.max_error, std::sqrt(diff2) / denom);
    }
    res.passed = res.max_error <= res.tolerance && res.max_row_sum <= 1e-10;
    return res;
}

/// Reference selection: stable sort of every index by descending similarity.
inline std::vector<std::size_t> select_pairs_by_sort(const SimilarityVector& sims, std::size_t r) {
    std::vector<std::size_t> idx(sims.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    idx.resize(r);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Random similarity vectors; odd instances draw from a pool of n/2 values, so
/// at least half the entries repeat an earlier value. max_error counts mismatches.
inline OracleResult oracle_select_suite(const OracleOptions& opt) {
    Rng rng(derive_seed(opt.seed, "oracle-select"));
    OracleResult res{"select", opt.instances, 0.0, 0.0, 0.0, true};
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const auto n = static_cast<std::size_t>(rng.between(1, 200));
        SimilarityVector sims(n);
        if (i % 2 == 1) {
            const auto pool = std::max<std::size_t>(1, n / 2);
            std::vector<double> values(pool);
            for (auto& v : values) v = 2.0 * rng.uniform01() - 1.0;
            for (auto& s : sims) s = values[rng.below(pool)];
        } else {
            for (auto& s : sims) s = 2.0 * rng.uniform01() - 1.0;
        }
        const auto r = static_cast<std::size_t>(rng.below(n + 1));
        if (select_pairs(sims, r) != select_pairs_by_sort(sims, r)) res.max_error += 1.0;
    }
    res.passed = res.max_error == 0.0;
    return res;
}

}  // namespace fls
