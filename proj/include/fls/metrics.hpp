#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "core.hpp"

namespace fls {

/// Token-level Levenshtein distance (unit insert/delete/substitute costs).
inline std::size_t edit_distance(const LabelSequence& a, const LabelSequence& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Edit distance normalised by the reference length (at least 1).
inline double error_rate(const LabelSequence& hypothesis, const LabelSequence& reference) {
    return static_cast<double>(edit_distance(hypothesis, reference)) /
           static_cast<double>(std::max<std::size_t>(1, reference.size()));
}

}  // namespace fls
