#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"

using namespace fls;

TEST(Decoder, ZeroWeightsGiveUniformRows) {
    const auto dec = make_zero_decoder(3, 4, 5);
    Rng rng(1);
    const auto grid = decoder_forward(dec, testutil::random_seq(7, 3, rng));
    ASSERT_EQ(grid.num_classes(), 6u);
    for (double v : grid.log_probs.data()) EXPECT_NEAR(v, -std::log(6.0), 1e-12);
}

TEST(Decoder, ForwardIsDeterministic) {
    const auto dec = init_decoder(4, 8, 3, 77);
    Rng rng(2);
    const auto seq = testutil::random_seq(9, 4, rng);
    EXPECT_EQ(decoder_forward(dec, seq).log_probs, decoder_forward(dec, seq).log_probs);
    EXPECT_EQ(init_decoder(4, 8, 3, 77), dec);
    EXPECT_FALSE(init_decoder(4, 8, 3, 78) == dec);
}

TEST(Decoder, DimensionMismatchRejected) {
    const auto dec = make_zero_decoder(3, 2, 2);
    Rng rng(3);
    EXPECT_THROW(decoder_forward(dec, testutil::random_seq(4, 5, rng)), Error);
}

TEST(Decoder, ParameterGradientMatchesFiniteDifferences) {
    auto dec = init_decoder(3, 5, 3, 4);
    Rng rng(4);
    const auto seq = testutil::random_seq(6, 3, rng);
    const LabelSequence label{1, 3};
    std::vector<double> grad(dec.num_parameters(), 0.0);
    detail::accumulate_sequence_gradient(dec, seq, label, grad);
    auto loss = [&](const CtcDecoder& d) { return -ctc_log_loss(decoder_forward(d, seq), label); };
    std::vector<float*> params;
    for (auto* v : {&dec.w1.data(), &dec.b1, &dec.w2.data(), &dec.b2})
        for (auto& p : *v) params.push_back(&p);
    const float h = 1e-3f;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const float keep = *params[k];
        *params[k] = keep + h;
        const double up = loss(dec);
        *params[k] = keep - h;
        const double down = loss(dec);
        *params[k] = keep;
        const double fd = (up - down) / (2.0 * h);
        ASSERT_NEAR(grad[k], fd, 2e-3 + 2e-2 * std::abs(fd)) << "parameter " << k;
    }
}

TEST(Checkpoint, RoundTripAndLayout) {
    const auto dec = init_decoder(3, 4, 2, 5);
    const auto bytes = encode_checkpoint(dec);
    EXPECT_EQ(bytes.substr(0, 4), "CTD1");
    EXPECT_EQ(bytes.size(), 16 + 4 * dec.num_parameters());
    EXPECT_EQ(detail::get_u32(bytes.data() + 4), 3u);
    EXPECT_EQ(detail::get_u32(bytes.data() + 8), 4u);
    EXPECT_EQ(detail::get_u32(bytes.data() + 12), 2u);
    EXPECT_EQ(decode_checkpoint(bytes), dec);
}

TEST(Checkpoint, CorruptionRejected) {
    auto bytes = encode_checkpoint(init_decoder(3, 4, 2, 5));
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), Error);
    EXPECT_THROW(decode_checkpoint("CTD"), Error);
}

namespace {

Dataset small_set(std::size_t n, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_sequences = n;
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
    const auto data = small_set(20, 1);
    TrainConfig cfg;
    cfg.steps = 25;
    cfg.learning_rate = 0.0;
    cfg.hidden_dim = 8;
    cfg.seed = 3;
    const auto res = train_ctc_decoder(data, cfg);
    const auto expect = initial_decoder(data.sequences[0].dim(), data.manifest.vocab_size, cfg);
    EXPECT_EQ(res.decoder, expect);
    EXPECT_FLOAT_EQ(expect.b2[0], -5.0f);
}

TEST(Training, SameSeedSameParametersAnyThreadCount) {
    const auto data = small_set(40, 2);
    TrainConfig cfg;
    cfg.steps = 30;
    cfg.hidden_dim = 16;
    cfg.seed = 4;
    const auto a = train_ctc_decoder(data, cfg);
    const auto b = train_ctc_decoder(data, cfg);
    cfg.threads = 4;
    const auto c = train_ctc_decoder(data, cfg);
    EXPECT_EQ(a.decoder, b.decoder);
    EXPECT_EQ(a.decoder, c.decoder);
    EXPECT_EQ(train_log_to_jsonl(a.log), train_log_to_jsonl(c.log));
}

TEST(Training, LogHasRequestedCadence) {
    const auto data = small_set(10, 3);
    TrainConfig cfg;
    cfg.steps = 21;
    cfg.log_every = 10;
    cfg.hidden_dim = 4;
    const auto res = train_ctc_decoder(data, cfg);
    ASSERT_EQ(res.log.size(), 3u);
    EXPECT_EQ(res.log[0].step, 0u);
    EXPECT_EQ(res.log[1].step, 10u);
    EXPECT_EQ(res.log.back().step, 20u);
    const auto first = nlohmann::json::parse(train_log_to_jsonl(res.log).substr(0, train_log_to_jsonl(res.log).find('\n')));
    EXPECT_TRUE(first.contains("loss"));
    EXPECT_TRUE(first.contains("lr"));
}

TEST(Training, NanInputAbortsWithDiagnostic) {
    auto data = small_set(4, 5);
    data.sequences[2].frames(0, 0) = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch_size = 4;
    cfg.hidden_dim = 4;
    try {
        train_ctc_decoder(data, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Training, InfeasibleLabelRejectedUpFront) {
    auto data = small_set(3, 6);
    data.labels[1].resize(data.sequences[1].length());
    std::fill(data.labels[1].begin(), data.labels[1].end(), 1);
    EXPECT_THROW(train_ctc_decoder(data, TrainConfig{}), Error);
}

TEST(Training, CosineScheduleEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_learning_rate(0.1, 0, 100), 0.1);
    EXPECT_NEAR(cosine_learning_rate(0.1, 50, 100), 0.05, 1e-15);
    EXPECT_GT(cosine_learning_rate(0.1, 99, 100), 0.0);
}

TEST(Training, LengthBucketsSortAndCover) {
    const auto data = small_set(37, 7);
    const auto batches = detail::length_buckets(data.sequences, 8);
    ASSERT_EQ(batches.size(), 5u);
    std::size_t prev = 0, count = 0;
    for (const auto& b : batches)
        for (auto i : b) {
            EXPECT_GE(data.sequences[i].length(), prev);
            prev = data.sequences[i].length();
            ++count;
        }
    EXPECT_EQ(count, 37u);
}

TEST(Training, NoiselessSmallVocabConverges) {
    SyntheticSpec spec;
    spec.vocab_size = 4;
    spec.embed_dim = 8;
    spec.noise_stddev = 0.0;
    spec.num_sequences = 250;
    spec.seed = 42;
    const auto all = generate_synthetic(spec);
    const auto train = slice_dataset(all, 0, 200), dev = slice_dataset(all, 200, 250);
    TrainConfig cfg;
    cfg.seed = 42;
    cfg.threads = 4;
    const auto res = train_ctc_decoder(train, cfg, &dev);
    EXPECT_LE(*res.log.back().dev_error_rate, 0.02);
    EXPECT_LT(res.log.back().loss, res.log.front().loss);
}
