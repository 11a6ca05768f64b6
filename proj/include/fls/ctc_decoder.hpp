#pragma once

// One-hidden-layer ReLU decoder head producing CTC posteriors, its CTD1
// checkpoint format, and minibatch Adam training on the CTC loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "ctc.hpp"
#include "frameio.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace fls {

struct CtcDecoder {
    Matrix<float> w1;       // D x H
    std::vector<float> b1;  // H
    Matrix<float> w2;       // H x (V+1)
    std::vector<float> b2;  // V+1

    std::size_t input_dim() const noexcept { return w1.rows(); }
    std::size_t hidden_dim() const noexcept { return w1.cols(); }
    std::int32_t vocab_size() const noexcept { return static_cast<std::int32_t>(w2.cols()) - 1; }
    std::size_t num_parameters() const noexcept { return w1.data().size() + b1.size() + w2.data().size() + b2.size(); }

    friend bool operator==(const CtcDecoder&, const CtcDecoder&) = default;
};

/// Zero-initialised decoder (uniform posteriors).
inline CtcDecoder make_zero_decoder(std::size_t input_dim, std::size_t hidden_dim, std::int32_t vocab_size) {
    require(input_dim >= 1 && hidden_dim >= 1 && vocab_size >= 1, "decoder dimensions must be positive");
    const auto classes = static_cast<std::size_t>(vocab_size) + 1;
    return {Matrix<float>(input_dim, hidden_dim), std::vector<float>(hidden_dim), Matrix<float>(hidden_dim, classes),
            std::vector<float>(classes)};
}

/// He-normal weights from the "init" sub-stream, zero biases.
inline CtcDecoder init_decoder(std::size_t input_dim, std::size_t hidden_dim, std::int32_t vocab_size, std::uint64_t seed) {
    auto dec = make_zero_decoder(input_dim, hidden_dim, vocab_size);
    Rng rng(derive_seed(seed, "init"));
    const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
    for (auto& w : dec.w1.data()) w = static_cast<float>(s1 * rng.normal());
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden_dim));
    for (auto& w : dec.w2.data()) w = static_cast<float>(s2 * rng.normal());
    return dec;
}

namespace detail {

struct DecoderActivations {
    Matrix<double> hidden_pre;  // T x H
    Matrix<double> logits;      // T x (V+1)
};

inline DecoderActivations decoder_activations(const CtcDecoder& dec, const FrameSequence& seq) {
    if (seq.dim() != dec.input_dim())
        fail(ErrorKind::invalid_argument, "frame dimension " + std::to_string(seq.dim()) + " does not match decoder input dimension " +
                                              std::to_string(dec.input_dim()));
    const std::size_t T = seq.length(), D = dec.input_dim(), H = dec.hidden_dim(), C = dec.w2.cols();
    DecoderActivations act{Matrix<double>(T, H), Matrix<double>(T, C)};
    std::vector<double> hidden(H);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) hidden[h] = dec.b1[h];
        for (std::size_t d = 0; d < D; ++d) {
            const double x = seq.frames(t, d);
            const auto wrow = dec.w1.row(d);
            for (std::size_t h = 0; h < H; ++h) hidden[h] += x * wrow[h];
        }
        auto logits = act.logits.row(t);
        for (std::size_t c = 0; c < C; ++c) logits[c] = dec.b2[c];
        for (std::size_t h = 0; h < H; ++h) {
            act.hidden_pre(t, h) = hidden[h];
            const double a = std::max(hidden[h], 0.0);
            if (a == 0.0) continue;
            const auto wrow = dec.w2.row(h);
            for (std::size_t c = 0; c < C; ++c) logits[c] += a * wrow[c];
        }
    }
    return act;
}

}  // namespace detail

/// Framewise log-softmax posteriors; row t depends only on frame t.
inline PosteriorGrid decoder_forward(const CtcDecoder& dec, const FrameSequence& seq) {
    return log_softmax_rows(detail::decoder_activations(dec, seq).logits);
}

inline LabelSequence decode_sequence(const CtcDecoder& dec, const FrameSequence& seq) {
    return greedy_decode(decoder_forward(dec, seq));
}

/// Mean greedy-decode error rate over a set of sequences.
inline double mean_error_rate(const CtcDecoder& dec, const std::vector<FrameSequence>& seqs,
                              const std::vector<LabelSequence>& labels, unsigned threads = 1) {
    require(seqs.size() == labels.size(), "sequence and label counts differ");
    if (seqs.empty()) return 0.0;
    std::vector<double> rates(seqs.size());
    parallel_for(seqs.size(), threads, [&](std::size_t i) { rates[i] = error_rate(decode_sequence(dec, seqs[i]), labels[i]); });
    double sum = 0.0;
    for (double r : rates) sum += r;
    return sum / static_cast<double>(rates.size());
}

// ---------------------------------------------------------------------------
// CTD1 checkpoint: "CTD1", D, H, V as u32le, then W1, b1, W2, b2 as f32le.

inline std::string encode_checkpoint(const CtcDecoder& dec) {
    std::string out("CTD1");
    detail::put_u32(out, static_cast<std::uint32_t>(dec.input_dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(dec.hidden_dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(dec.vocab_size()));
    for (float v : dec.w1.data()) detail::put_f32(out, v);
    for (float v : dec.b1) detail::put_f32(out, v);
    for (float v : dec.w2.data()) detail::put_f32(out, v);
    for (float v : dec.b2) detail::put_f32(out, v);
    return out;
}

inline CtcDecoder decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16) fail(ErrorKind::format, "CTD1 header truncated");
    if (bytes.compare(0, 4, "CTD1") != 0) fail(ErrorKind::format, "bad magic '" + bytes.substr(0, 4) + "', expected 'CTD1'");
    const std::size_t D = detail::get_u32(bytes.data() + 4);
    const std::size_t H = detail::get_u32(bytes.data() + 8);
    const auto V = static_cast<std::int32_t>(detail::get_u32(bytes.data() + 12));
    if (D == 0 || H == 0 || V == 0) fail(ErrorKind::format, "CTD1 declares a zero dimension");
    auto dec = make_zero_decoder(D, H, V);
    const std::size_t expected = 16 + 4 * dec.num_parameters();
    if (bytes.size() != expected)
        fail(ErrorKind::format, "CTD1 size mismatch: expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
    const char* p = bytes.data() + 16;
    auto fill = [&](std::vector<float>& v) {
        for (auto& x : v) {
            x = detail::get_f32(p);
            p += 4;
            if (!std::isfinite(x)) fail(ErrorKind::format, "CTD1 contains non-finite parameters");
        }
    };
    fill(dec.w1.data());
    fill(dec.b1);
    fill(dec.w2.data());
    fill(dec.b2);
    return dec;
}

inline void save_checkpoint(const CtcDecoder& dec, const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(dec));
}

inline CtcDecoder load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 16;
    std::size_t hidden_dim = 64;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Initial blank logit bias. Starting below the token logits keeps
    /// training out of the high-blank basin that identical frames within a
    /// token otherwise fall into.
    double blank_bias_init = -5.0;
    /// Multiplier on the He-initialised output weights. Near-uniform initial
    /// posteriors keep small vocabularies from collapsing onto one token.
    double output_init_scale = 0.01;
    std::size_t log_every = 100;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct TrainLogEntry {
    std::size_t step = 0;
    double loss = 0.0;  // mean per-sequence CTC loss over the batch
    double learning_rate = 0.0;
    std::optional<double> dev_error_rate;
};

struct TrainResult {
    CtcDecoder decoder;
    std::vector<TrainLogEntry> log;
};

inline std::string train_log_to_jsonl(const std::vector<TrainLogEntry>& log) {
    std::string out;
    for (const auto& e : log) {
        nlohmann::json j = {{"step", e.step}, {"loss", e.loss}, {"lr", e.learning_rate}};
        if (e.dev_error_rate) j["dev_cer"] = *e.dev_error_rate;
        out += j.dump() + "\n";
    }
    return out;
}

namespace detail {

/// Accumulates d(-log p(label))/d(params) for one sequence into grad (declaration order).
inline double accumulate_sequence_gradient(const CtcDecoder& dec, const FrameSequence& seq, const LabelSequence& label,
                                           std::vector<double>& grad) {
    const auto act = decoder_activations(dec, seq);
    const auto grid = log_softmax_rows(act.logits);
    double log_likelihood = 0.0;
    const auto dlogits = ctc_grad(grid, label, &log_likelihood);

    const std::size_t T = seq.length(), D = dec.input_dim(), H = dec.hidden_dim(), C = dec.w2.cols();
    double* gw1 = grad.data();
    double* gb1 = gw1 + D * H;
    double* gw2 = gb1 + H;
    double* gb2 = gw2 + H * C;
    std::vector<double> dhidden(H);
    for (std::size_t t = 0; t < T; ++t) {
        const auto dl = dlogits.row(t);
        for (std::size_t c = 0; c < C; ++c) gb2[c] += dl[c];
        for (std::size_t h = 0; h < H; ++h) {
            const double pre = act.hidden_pre(t, h);
            if (pre <= 0.0) {
                dhidden[h] = 0.0;
                continue;
            }
            const auto wrow = dec.w2.row(h);
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                gw2[h * C + c] += pre * dl[c];
                acc += wrow[c] * dl[c];
            }
            dhidden[h] = acc;
        }
        for (std::size_t h = 0; h < H; ++h) gb1[h] += dhidden[h];
        for (std::size_t d = 0; d < D; ++d) {
            const double x = seq.frames(t, d);
            if (x == 0.0) continue;
            for (std::size_t h = 0; h < H; ++h) gw1[d * H + h] += x * dhidden[h];
        }
    }
    return -log_likelihood;
}

/// Batches of length-sorted sequence indices, so each batch holds similar T.
inline std::vector<std::vector<std::size_t>> length_buckets(const std::vector<FrameSequence>& seqs, std::size_t batch_size) {
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seqs[a].length() < seqs[b].length(); });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return batches;
}

}  // namespace detail

/// Starting point of train_ctc_decoder: init_decoder with the output layer
/// scaled and the blank bias set from cfg.
inline CtcDecoder initial_decoder(std::size_t input_dim, std::int32_t vocab_size, const TrainConfig& cfg) {
    auto dec = init_decoder(input_dim, cfg.hidden_dim, vocab_size, cfg.seed);
    for (auto& w : dec.w2.data()) w = static_cast<float>(w * cfg.output_init_scale);
    dec.b2[0] = static_cast<float>(cfg.blank_bias_init);
    return dec;
}

/// Cosine-annealed learning rate at step (0-based) of total.
inline double cosine_learning_rate(double base, std::size_t step, std::size_t total) {
    if (total == 0) return base;
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Minibatch Adam on the mean per-sequence CTC loss. Per-sequence gradients
/// are reduced in batch order, so results do not depend on cfg.threads.
/// dev, when given, is evaluated at each log point.
inline TrainResult train_ctc_decoder(const Dataset& train, const TrainConfig& cfg, const Dataset* dev = nullptr) {
    require(train.size() >= 1, "training set is empty");
    require(cfg.batch_size >= 1, "batch size must be >= 1");
    require(cfg.learning_rate >= 0.0, "learning rate must be >= 0");
    const std::size_t dim = train.sequences.front().dim();
    for (std::size_t i = 0; i < train.size(); ++i) {
        require(train.sequences[i].dim() == dim, "training sequences disagree on frame dimension");
        require(2 * train.labels[i].size() + 1 <= train.sequences[i].length(),
                "training sequence '" + train.sequences[i].id + "' violates 2*|label|+1 <= T");
    }

    TrainResult result{initial_decoder(dim, train.manifest.vocab_size, cfg), {}};
    auto& dec = result.decoder;
    const std::size_t n_params = dec.num_parameters();
    std::vector<double> m(n_params, 0.0), v(n_params, 0.0);

    auto batches = detail::length_buckets(train.sequences, cfg.batch_size);
    Rng shuffle_rng(derive_seed(cfg.seed, "batches"));
    std::vector<std::size_t> batch_order(batches.size());
    std::size_t cursor = batch_order.size();

    std::vector<float*> params;
    params.reserve(n_params);
    for (auto* vec : {&dec.w1.data(), &dec.b1, &dec.w2.data(), &dec.b2})
        for (auto& p : *vec) params.push_back(&p);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cursor == batch_order.size()) {
            for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
            for (std::size_t i = batch_order.size(); i > 1; --i) std::swap(batch_order[i - 1], batch_order[shuffle_rng.below(i)]);
            cursor = 0;
        }
        const auto& batch = batches[batch_order[cursor++]];

        std::vector<std::vector<double>> grads(batch.size(), std::vector<double>(n_params, 0.0));
        std::vector<double> losses(batch.size());
        try {
            parallel_for(batch.size(), cfg.threads, [&](std::size_t b) {
                losses[b] = detail::accumulate_sequence_gradient(dec, train.sequences[batch[b]], train.labels[batch[b]], grads[b]);
            });
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::numerical) throw;
            fail(ErrorKind::numerical, "training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        double loss = 0.0;
        std::vector<double> grad(n_params, 0.0);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            loss += losses[b];
            for (std::size_t k = 0; k < n_params; ++k) grad[k] += grads[b][k];
        }
        const double scale = 1.0 / static_cast<double>(batch.size());
        loss *= scale;
        if (!std::isfinite(loss))
            fail(ErrorKind::numerical, "training diverged at step " + std::to_string(step) + ": batch loss is " + std::to_string(loss));

        const double lr = cosine_learning_rate(cfg.learning_rate, step, cfg.steps);
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step + 1));
        for (std::size_t k = 0; k < n_params; ++k) {
            const double g = grad[k] * scale;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            const double update = lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.epsilon);
            if (update != 0.0) *params[k] = static_cast<float>(static_cast<double>(*params[k]) - update);
        }

        const bool last = step + 1 == cfg.steps;
        if ((cfg.log_every > 0 && step % cfg.log_every == 0) || last) {
            TrainLogEntry entry{step, loss, lr, std::nullopt};
            if (dev) entry.dev_error_rate = mean_error_rate(dec, dev->sequences, dev->labels, cfg.threads);
            result.log.push_back(entry);
        }
    }
    return result;
}

}  // namespace fls
