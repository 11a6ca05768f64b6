#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "helpers.hpp"

using namespace fls;
using testutil::make_seq;

TEST(Fseq, TinyFileLayout) {
    const auto bytes = encode_fseq(make_seq({{0.0f, 1.0f}}));
    ASSERT_EQ(bytes.size(), 20u);
    const unsigned char expect[20] = {'F', 'S', 'Q', '1', 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f};
    EXPECT_EQ(std::memcmp(bytes.data(), expect, 20), 0);
}

TEST(Fseq, TinyFileRoundTrip) {
    const auto dir = testutil::temp_dir("fseq_tiny");
    write_fseq(make_seq({{0.0f, 1.0f}}), dir / "a.fsq");
    const auto seq = read_fseq(dir / "a.fsq");
    EXPECT_EQ(seq.length(), 1u);
    EXPECT_EQ(seq.dim(), 2u);
    EXPECT_EQ(seq.frames(0, 0), 0.0f);
    EXPECT_EQ(seq.frames(0, 1), 1.0f);
    EXPECT_EQ(seq.id, "a");
}

TEST(Fseq, RandomMatrixRoundTripIsBitExact) {
    Rng rng(1);
    auto seq = testutil::random_seq(100, 16, rng);
    seq.frames(3, 4) = -0.0f;
    seq.frames(5, 6) = std::numeric_limits<float>::denorm_min();
    const auto back = decode_fseq(encode_fseq(seq));
    ASSERT_EQ(back.frames.rows(), 100u);
    EXPECT_EQ(std::memcmp(back.frames.data().data(), seq.frames.data().data(), 100 * 16 * 4), 0);
}

TEST(Fseq, NanRejectedBeforeWrite) {
    const auto dir = testutil::temp_dir("fseq_nan");
    auto seq = make_seq({{1.0f, 2.0f}, {3.0f, 4.0f}});
    seq.frames(1, 0) = std::numeric_limits<float>::quiet_NaN();
    try {
        write_fseq(seq, dir / "bad.fsq");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    EXPECT_FALSE(std::filesystem::exists(dir / "bad.fsq"));
}

TEST(Fseq, InfRejected) {
    auto seq = make_seq({{1.0f}});
    seq.frames(0, 0) = std::numeric_limits<float>::infinity();
    EXPECT_THROW(encode_fseq(seq), Error);
}

TEST(Fseq, BadMagic) {
    auto bytes = encode_fseq(make_seq({{0.0f, 1.0f}}));
    bytes.replace(0, 4, "XXXX");
    try {
        decode_fseq(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(Fseq, TruncationNamesByteCounts) {
    auto bytes = encode_fseq(make_seq({{0.0f, 1.0f}, {2.0f, 3.0f}}));
    bytes.resize(22);
    try {
        decode_fseq(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("28"), std::string::npos) << msg;
        EXPECT_NE(msg.find("22"), std::string::npos) << msg;
    }
}

TEST(Fseq, TruncatedHeader) { EXPECT_THROW(decode_fseq("FSQ1\x01"), Error); }

TEST(Fseq, TrailingBytesRejected) {
    auto bytes = encode_fseq(make_seq({{0.0f}}));
    bytes.push_back('\0');
    EXPECT_THROW(decode_fseq(bytes), Error);
}

TEST(Fseq, NonFinitePayloadRejectedOnRead) {
    auto bytes = encode_fseq(make_seq({{0.0f}}));
    std::string nan;
    detail::put_f32(nan, std::numeric_limits<float>::quiet_NaN());
    bytes.replace(12, 4, nan);
    EXPECT_THROW(decode_fseq(bytes), Error);
}

TEST(Fseq, MissingFileIsIoError) {
    try {
        read_fseq("/nonexistent/dir/x.fsq");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(Synthetic, SpecValidation) {
    SyntheticSpec s;
    s.vocab_size = 0;
    EXPECT_THROW(s.validate(), Error);
    s = {};
    s.frames_per_token_min = 0;
    EXPECT_THROW(s.validate(), Error);
    s = {};
    s.noise_stddev = -1;
    EXPECT_THROW(s.validate(), Error);
    s = {};
    s.silence_prob = 1.0;
    EXPECT_THROW(s.validate(), Error);
}

TEST(Synthetic, NoiselessTokensAreAnchors) {
    SyntheticSpec spec;
    spec.noise_stddev = 0.0;
    spec.silence_prob = 0.0;
    spec.frames_per_token_min = spec.frames_per_token_max = 1;
    const auto anchors = anchor_embeddings(spec.vocab_size, spec.embed_dim, spec.seed);
    Rng rng(0);
    const auto seq = synthesize_sequence({3, 5}, spec, anchors, rng);
    ASSERT_EQ(seq.length(), 2u);
    for (std::size_t d = 0; d < spec.embed_dim; ++d) {
        EXPECT_EQ(seq.frames(0, d), anchors(2, d));
        EXPECT_EQ(seq.frames(1, d), anchors(4, d));
    }
}

TEST(Synthetic, AnchorsAreUnitNorm) {
    const auto a = anchor_embeddings(8, 16, 42);
    for (std::size_t v = 0; v < 8; ++v) {
        double n = 0;
        for (float x : a.row(v)) n += static_cast<double>(x) * x;
        EXPECT_NEAR(n, 1.0, 1e-6);
    }
}

TEST(Synthetic, DeterministicFiles) {
    SyntheticSpec spec;
    spec.num_sequences = 20;
    const auto a = testutil::temp_dir("gen_a"), b = testutil::temp_dir("gen_b");
    write_dataset(generate_synthetic(spec), a);
    write_dataset(generate_synthetic(spec), b);
    for (const auto& entry : std::filesystem::directory_iterator(a))
        ASSERT_EQ(testutil::slurp(entry.path()), testutil::slurp(b / entry.path().filename())) << entry.path();
}

TEST(Synthetic, LengthBoundsAndTraceCounts) {
    SyntheticSpec spec;
    spec.vocab_size = 8;
    spec.embed_dim = 16;
    spec.frames_per_token_min = 1;
    spec.frames_per_token_max = 3;
    spec.noise_stddev = 0.1;
    spec.num_sequences = 200;
    spec.seed = 42;
    const auto set = generate_synthetic(spec);
    ASSERT_EQ(set.manifest.entries.size(), 200u);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& tr = set.traces[i];
        std::size_t silence = 0;
        for (auto s : tr.silence_after) silence += s;
        const auto T = set.sequences[i].length();
        EXPECT_EQ(T, tr.total_frames());
        EXPECT_EQ(T, set.manifest.entries[i].duration_frames);
        EXPECT_GE(T, spec.tokens_min);
        EXPECT_LE(T, spec.tokens_max * 3 + silence);
        EXPECT_EQ(tr.emissions.size(), set.labels[i].size());
        for (auto e : tr.emissions) EXPECT_TRUE(e >= 1 && e <= 3);
        for (auto tok : set.labels[i]) EXPECT_TRUE(tok >= 1 && tok <= 8);
        for (std::size_t k = 1; k < set.labels[i].size(); ++k) EXPECT_NE(set.labels[i][k], set.labels[i][k - 1]);
    }
}

TEST(Synthetic, EmptyTokenListGivesOneFrame) {
    SyntheticSpec spec;
    const auto anchors = anchor_embeddings(spec.vocab_size, spec.embed_dim, spec.seed);
    Rng rng(0);
    GenTrace tr;
    const auto seq = synthesize_sequence({}, spec, anchors, rng, &tr);
    EXPECT_EQ(seq.length(), 1u);
    EXPECT_EQ(tr.total_frames(), 1u);
}

TEST(Dataset, WriteLoadRoundTrip) {
    SyntheticSpec spec;
    spec.num_sequences = 12;
    spec.noise_stddev = 0.05;
    const auto set = generate_synthetic(spec);
    const auto dir = testutil::temp_dir("dataset_rt");
    write_dataset(set, dir);
    const auto back = load_dataset(dir / "manifest.jsonl");
    ASSERT_EQ(back.size(), set.size());
    EXPECT_EQ(back.manifest.vocab_size, spec.vocab_size);
    EXPECT_EQ(back.manifest.seed, spec.seed);
    for (std::size_t i = 0; i < set.size(); ++i) {
        EXPECT_EQ(back.sequences[i].frames, set.sequences[i].frames);
        EXPECT_EQ(back.sequences[i].id, set.sequences[i].id);
        EXPECT_EQ(back.labels[i], set.labels[i]);
        EXPECT_EQ(back.traces[i].emissions, set.traces[i].emissions);
    }
    const auto vocab = nlohmann::json::parse(testutil::slurp(dir / "vocab.json"));
    EXPECT_EQ(vocab.size(), 8u);
    EXPECT_FALSE(vocab.contains("0"));
}

TEST(Dataset, MissingSequenceFileIsIoError) {
    SyntheticSpec spec;
    spec.num_sequences = 2;
    const auto dir = testutil::temp_dir("dataset_missing");
    write_dataset(generate_synthetic(spec), dir);
    std::filesystem::remove(dir / "seq_00001.fsq");
    try {
        load_dataset(dir / "manifest.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(Dataset, MalformedManifestIsFormatError) {
    const auto dir = testutil::temp_dir("dataset_bad");
    detail::write_file(dir / "manifest.jsonl", "{not json\n");
    try {
        load_dataset(dir / "manifest.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
    }
}

TEST(Dataset, SliceKeepsEntries) {
    SyntheticSpec spec;
    spec.num_sequences = 10;
    const auto set = generate_synthetic(spec);
    const auto s = slice_dataset(set, 3, 7);
    ASSERT_EQ(s.size(), 4u);
    EXPECT_EQ(s.sequences[0].id, set.sequences[3].id);
    EXPECT_THROW(slice_dataset(set, 5, 11), Error);
}
