#pragma once

#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "fls/fls.hpp"

namespace testutil {

inline fls::FrameSequence make_seq(std::initializer_list<std::initializer_list<float>> rows) {
    fls::FrameSequence seq;
    const std::size_t D = rows.begin()->size();
    std::vector<float> data;
    for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
    seq.frames = fls::Matrix<float>(rows.size(), D, std::move(data));
    return seq;
}

inline fls::FrameSequence random_seq(std::size_t T, std::size_t D, fls::Rng& rng) {
    fls::FrameSequence seq;
    seq.frames = fls::Matrix<float>(T, D);
    for (auto& v : seq.frames.data()) v = static_cast<float>(rng.normal());
    return seq;
}

/// Runs of repeated frames, like token emissions.
inline fls::FrameSequence blocky_seq(std::size_t T, std::size_t D, fls::Rng& rng) {
    fls::FrameSequence seq;
    seq.frames = fls::Matrix<float>(T, D);
    std::size_t t = 0;
    while (t < T) {
        std::vector<float> frame(D);
        for (auto& v : frame) v = static_cast<float>(rng.normal());
        const auto run = static_cast<std::size_t>(rng.between(1, 5));
        for (std::size_t k = 0; k < run && t < T; ++k, ++t)
            for (std::size_t d = 0; d < D; ++d) seq.frames(t, d) = frame[d];
    }
    return seq;
}

inline fls::DensityVector random_density(std::size_t T, fls::Rng& rng) {
    fls::DensityVector d(T);
    for (auto& v : d) v = rng.uniform01();
    return d;
}

/// Grid from explicit per-frame probability rows.
inline fls::PosteriorGrid grid_from_probs(const std::vector<std::vector<double>>& probs) {
    fls::PosteriorGrid g{fls::Matrix<double>(probs.size(), probs.front().size())};
    for (std::size_t t = 0; t < probs.size(); ++t)
        for (std::size_t k = 0; k < probs[t].size(); ++k)
            g.log_probs(t, k) = probs[t][k] > 0.0 ? std::log(probs[t][k]) : -std::numeric_limits<double>::infinity();
    return g;
}

inline fls::PosteriorGrid uniform_grid(std::size_t T, std::size_t C) {
    return grid_from_probs(std::vector<std::vector<double>>(T, std::vector<double>(C, 1.0 / static_cast<double>(C))));
}

inline fls::PosteriorGrid random_grid(std::size_t T, std::size_t C, fls::Rng& rng) {
    fls::Matrix<double> z(T, C);
    for (auto& v : z.data()) v = 2.0 * rng.normal();
    return fls::log_softmax_rows(z);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fls_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) { return fls::detail::read_file(p); }

}  // namespace testutil
