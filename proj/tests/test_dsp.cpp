#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <vector>

#include "apa/common.hpp"
#include "apa/dsp/sequential.hpp"
#include "apa/dsp/tracks.hpp"
#include "apa/dsp/waveform.hpp"
#include "oracles.hpp"

using namespace apa::dsp;
using apa::Rng;

namespace {

Waveform sine(double freq_hz, double seconds, int sr, double amplitude = 0.6) {
    Waveform w;
    w.sample_rate_hz = sr;
    const std::size_t n = static_cast<std::size_t>(seconds * sr);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        w.samples[i] = amplitude * std::sin(2.0 * apa::kPi * freq_hz * static_cast<double>(i) / sr);
    return w;
}

Waveform constant(double value, std::size_t n, int sr) {
    Waveform w;
    w.sample_rate_hz = sr;
    w.samples.assign(n, value);
    return w;
}

void check_stats_close(const StatVector7& got, const oracles::Stats7& want, double tol = 1e-12) {
    CHECK(got.mean == doctest::Approx(want.mean).epsilon(tol));
    CHECK(got.std == doctest::Approx(want.std_dev).epsilon(tol));
    CHECK(got.median == doctest::Approx(want.median).epsilon(tol));
    CHECK(got.mad == doctest::Approx(want.mad).epsilon(tol));
    CHECK(got.max == doctest::Approx(want.max).epsilon(tol));
    CHECK(got.min == doctest::Approx(want.min).epsilon(tol));
    CHECK(got.sum == doctest::Approx(want.sum).epsilon(tol));
}

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("seven statistics on the worked examples") {
    const StatVector7 s = stats7({1, 2, 3});
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.std == doctest::Approx(0.816496580928).epsilon(1e-9));
    CHECK(s.median == doctest::Approx(2.0));
    CHECK(s.mad == doctest::Approx(1.0));
    CHECK(s.max == doctest::Approx(3.0));
    CHECK(s.min == doctest::Approx(1.0));
    CHECK(s.sum == doctest::Approx(6.0));

    const StatVector7 single = stats7({5});
    CHECK(single.mean == doctest::Approx(5.0));
    CHECK(single.median == doctest::Approx(5.0));
    CHECK(single.max == doctest::Approx(5.0));
    CHECK(single.min == doctest::Approx(5.0));
    CHECK(single.sum == doctest::Approx(5.0));
    CHECK(single.std == doctest::Approx(0.0));
    CHECK(single.mad == doctest::Approx(0.0));

    const StatVector7 flat = stats7({2, 2, 2, 2});
    CHECK(flat.std == doctest::Approx(0.0));
    CHECK(flat.mad == doctest::Approx(0.0));
    CHECK(flat.sum == doctest::Approx(8.0));
}

TEST_CASE("seven statistics match the longhand oracle on random inputs") {
    Rng rng(0xd5b0001);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> v(1 + rng.below(40));
        for (double& x : v) x = rng.uniform(-5.0, 5.0);
        check_stats_close(stats7(v), oracles::stats7(v));
    }
}

TEST_CASE("statistics are permutation-invariant and ordered min<=median<=max") {
    Rng rng(0xd5b0002);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(2 + rng.below(20));
        for (double& x : v) x = rng.uniform(-3.0, 3.0);
        const StatVector7 a = stats7(v);
        std::vector<double> shuffled = v;
        rng.shuffle(shuffled);
        const StatVector7 b = stats7(shuffled);
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
        CHECK(a.std == doctest::Approx(b.std).epsilon(1e-12));
        CHECK(a.median == doctest::Approx(b.median).epsilon(1e-12));
        CHECK(a.mad == doctest::Approx(b.mad).epsilon(1e-12));
        CHECK(a.max == b.max);
        CHECK(a.min == b.min);
        CHECK(a.sum == doctest::Approx(b.sum).epsilon(1e-12));
        CHECK(a.min <= a.median);
        CHECK(a.median <= a.max);
        CHECK(a.std >= 0);
        CHECK(a.mad >= 0);
    }
}

TEST_CASE("track length follows the full-frames-inside convention") {
    const Waveform w = constant(0.1, 5000, 16000);
    const FrameTrack t = rms_track(w, 2048, 512);
    // 1 + floor((5000 - 2048) / 512) = 1 + 5 = 6
    CHECK(t.size() == 6);
    CHECK(t.frame_length == 2048);
    CHECK(t.hop_length == 512);
    // Shorter than one frame: single zero-padded frame.
    const FrameTrack small = rms_track(constant(0.5, 100, 16000), 2048, 512);
    CHECK(small.size() == 1);
}

TEST_CASE("RMS of a constant signal is the constant") {
    const Waveform w = constant(0.5, 8192, 16000);
    const FrameTrack t = rms_track(w, 2048, 512);
    for (double v : t.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("RMS matches the hand-evaluated two-sample frame") {
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples = {0.3, 0.4};
    const FrameTrack t = rms_track(w, 2, 1);
    // 1 + floor((2 - 2) / 1) = 1 frame covering both samples.
    REQUIRE(t.size() == 1);
    CHECK(t.values[0] == doctest::Approx(std::sqrt((0.09 + 0.16) / 2)).epsilon(1e-9));
}

TEST_CASE("RMS of silence is zero everywhere") {
    const FrameTrack t = rms_track(constant(0.0, 4096, 16000), 2048, 512);
    for (double v : t.values) CHECK(v == 0.0);
}

TEST_CASE("RMS scales linearly with amplitude") {
    Rng rng(0xd5b0003);
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples.resize(4096);
    for (double& s : w.samples) s = rng.uniform(-0.5, 0.5);
    Waveform scaled = w;
    for (double& s : scaled.samples) s *= -0.37;
    const FrameTrack a = rms_track(w, 2048, 512);
    const FrameTrack b = rms_track(scaled, 2048, 512);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b.values[i] == doctest::Approx(0.37 * a.values[i]).epsilon(1e-9));
}

TEST_CASE("F0 of pure sines lands within 2 Hz on voiced frames") {
    for (double freq : {110.0, 220.0, 330.0, 440.0}) {
        const Waveform w = sine(freq, 1.0, 16000);
        const FrameTrack t = f0_track(w, 65.0, 500.0, 2048, 512);
        REQUIRE(t.size() > 10);
        int voiced = 0;
        int within = 0;
        for (double v : t.values) {
            if (v > 0) {
                ++voiced;
                if (std::fabs(v - freq) <= 2.0) ++within;
            }
        }
        CHECK(voiced > 0);
        // ≥95% of voiced frames within ±2 Hz.
        CHECK(static_cast<double>(within) >= 0.95 * static_cast<double>(voiced));
    }
}

TEST_CASE("F0 of silence is fully unvoiced") {
    const FrameTrack t = f0_track(constant(0.0, 16000, 16000), 65.0, 500.0, 2048, 512);
    for (double v : t.values) CHECK(v == 0.0);
}

TEST_CASE("F0 below fmin is reported unvoiced") {
    const Waveform w = sine(100.0, 0.8, 16000);
    const FrameTrack t = f0_track(w, 150.0, 500.0, 2048, 512);
    for (double v : t.values) {
        const bool unvoiced_or_in_range = v == 0.0 || (v >= 150.0 && v <= 500.0);
        CHECK(unvoiced_or_in_range);
    }
}

TEST_CASE("F0 estimates are amplitude-invariant") {
    const Waveform base = sine(220.0, 0.8, 16000, 1.0);
    const FrameTrack ref = f0_track(base, 65.0, 500.0, 2048, 512);
    for (double c : {0.1, 0.5}) {
        Waveform scaled = base;
        for (double& s : scaled.samples) s *= c;
        const FrameTrack t = f0_track(scaled, 65.0, 500.0, 2048, 512);
        REQUIRE(t.size() == ref.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (ref.values[i] > 0 && t.values[i] > 0)
                CHECK(std::fabs(t.values[i] - ref.values[i]) <= 1.0);
        }
    }
}

TEST_CASE("invalid F0 bounds are rejected") {
    const Waveform w = sine(220.0, 0.2, 16000);
    CHECK_THROWS_AS(f0_track(w, 500.0, 65.0, 2048, 512), apa::Error);
    CHECK_THROWS_AS(f0_track(w, 65.0, 9000.0, 2048, 512), apa::Error);  // >= nyquist
}

TEST_CASE("aggregation selects frames by center time, half-open span") {
    FrameTrack t;
    t.frame_length = 200;
    t.hop_length = 100;
    t.sample_rate_hz = 1000;
    t.values = {1, 2, 3, 4, 5};
    // Centers: 0.1, 0.2, 0.3, 0.4, 0.5 s.
    const StatVector7 s = aggregate_stats(t, 0.15, 0.45);
    // Frames 2,3,4 (values 2,3,4): centers 0.2, 0.3, 0.4.
    CHECK(s.sum == doctest::Approx(9.0));
    CHECK(s.min == doctest::Approx(2.0));
    CHECK(s.max == doctest::Approx(4.0));
    // Half-open: span ending exactly at a center excludes it.
    const StatVector7 s2 = aggregate_stats(t, 0.15, 0.40);
    CHECK(s2.sum == doctest::Approx(5.0));
}

TEST_CASE("aggregation outside the track extent names the span") {
    FrameTrack t;
    t.frame_length = 200;
    t.hop_length = 100;
    t.sample_rate_hz = 1000;
    t.values = {1, 2, 3};
    CHECK_THROWS_WITH_AS(aggregate_stats(t, 5.0, 6.0), doctest::Contains("5"), apa::Error);
    // Span between centers (maps to no frame) also errors.
    CHECK_THROWS_AS(aggregate_stats(t, 0.11, 0.19), apa::Error);
}

TEST_CASE("zero policy: excluded zeros for F0, included for RMS") {
    FrameTrack t;
    t.frame_length = 200;
    t.hop_length = 100;
    t.sample_rate_hz = 1000;
    t.values = {0, 220, 0, 221, 219};
    const StatVector7 f0 = aggregate_stats(t, 0.0, 0.6, ZeroPolicy::ExcludeZeros);
    CHECK(f0.mean == doctest::Approx(220.0));
    CHECK(f0.min == doctest::Approx(219.0));
    const StatVector7 rms = aggregate_stats(t, 0.0, 0.6, ZeroPolicy::Include);
    CHECK(rms.min == doctest::Approx(0.0));
    CHECK(rms.sum == doctest::Approx(660.0));
    // Fully unvoiced span with ExcludeZeros: all-zero vector, not an error.
    FrameTrack silent = t;
    silent.values = {0, 0, 0, 0, 0};
    const StatVector7 z = aggregate_stats(silent, 0.0, 0.6, ZeroPolicy::ExcludeZeros);
    CHECK(z.mean == 0.0);
    CHECK(z.sum == 0.0);
    CHECK(z.max == 0.0);
}

TEST_CASE("WAV round trip preserves samples to 16-bit precision") {
    Rng rng(0xd5b0004);
    Waveform w;
    w.sample_rate_hz = 16000;
    w.samples.resize(2000);
    for (double& s : w.samples) s = rng.uniform(-0.9, 0.9);
    const std::string path = "build_test_roundtrip.wav";
    write_wav(path, w);
    const Waveform r = read_wav(path);
    CHECK(r.sample_rate_hz == 16000);
    REQUIRE(r.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        CHECK(std::fabs(r.samples[i] - w.samples[i]) <= 1.0 / 32768.0 + 1e-9);
    std::remove(path.c_str());
}

TEST_CASE("malformed WAV data is rejected") {
    const std::string path = "build_test_bad.wav";
    apa::write_file_atomic(path, "not a riff file at all");
    CHECK_THROWS_AS(read_wav(path), apa::Error);
    std::remove(path.c_str());
}

TEST_CASE("sequential features: one row per phone with the right views") {
    // Utterance: 0.1 s silence, then 7 phones of 0.15 s each over a 220 Hz tone.
    const int sr = 16000;
    Waveform w = sine(220.0, 1.6, sr);
    for (std::size_t i = 0; i < 1600; ++i) w.samples[i] = 0.0;  // leading silence

    apa::core::UtteranceRecord r;
    r.id = "seq1";
    const char* labels[7] = {"K", "AE", "T", "S", "IY", "M", "OW"};
    apa::core::WordSpan word;
    word.text = "catseemo";
    word.start_s = 0.1;
    word.end_s = 0.1 + 7 * 0.15;
    for (int p = 0; p < 7; ++p) {
        apa::core::PhoneSpan span;
        span.label = labels[p];
        span.start_s = 0.1 + p * 0.15;
        span.end_s = 0.1 + (p + 1) * 0.15;
        word.phones.push_back(span);
    }
    r.words.push_back(word);

    const DspConfig cfg;
    const SequentialFeatures f = build_sequential_features(r, w, cfg);
    REQUIRE(f.size() == 7);
    CHECK(f.f0_stats.size() == 7);
    CHECK(f.rms_stats.size() == 7);
    CHECK(f.f0_stats[0].size() == 7);  // 7-dim stat views
    const auto& vocab = apa::phonetics::vocab();
    CHECK(f.phone_ids[0] == vocab.phone_to_id("K"));
    CHECK(f.phone_ids[1] == vocab.phone_to_id("AE"));
    CHECK(f.trait_ids[0] == static_cast<int>(apa::phonetics::Trait::Stop));
    CHECK(f.vc_ids[1] == static_cast<int>(apa::phonetics::VcClass::Vowel));
    CHECK(f.duration_classes[0] == 15);  // 0.15 s = 15 aligner frames
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f.pad[i] == 0);
    // Constant 220 Hz pitch: every row's F0 mean within ±2 Hz (voiced rows).
    for (int p = 0; p < 7; ++p) {
        if (f.f0_stats[p][0] > 0) CHECK(std::fabs(f.f0_stats[p][0] - 220.0) <= 2.0);
    }

    // Empty record: empty features, still valid.
    apa::core::UtteranceRecord empty;
    empty.id = "e";
    const SequentialFeatures fe = build_sequential_features(empty, w, cfg);
    CHECK(fe.empty());
}

TEST_CASE("feature JSON round trip preserves every view") {
    const int sr = 16000;
    const Waveform w = sine(220.0, 0.7, sr);
    apa::core::UtteranceRecord r;
    r.id = "json1";
    apa::core::WordSpan word;
    word.text = "go";
    word.start_s = 0.10;
    word.end_s = 0.50;
    word.phones.push_back({"G", 0.10, 0.30, 1.0});
    word.phones.push_back({"OW", 0.30, 0.50, 1.0});
    r.words.push_back(word);

    const UtteranceFeatures f = extract_utterance_features(r, w, DspConfig{});
    const std::string json = features_to_json(f);
    const UtteranceFeatures g = features_from_json(json, "mem");
    CHECK(g.id == f.id);
    REQUIRE(g.seq.size() == f.seq.size());
    CHECK(g.seq.phone_ids == f.seq.phone_ids);
    CHECK(g.seq.vc_ids == f.seq.vc_ids);
    CHECK(g.seq.trait_ids == f.seq.trait_ids);
    CHECK(g.seq.duration_classes == f.seq.duration_classes);
    for (std::size_t i = 0; i < f.seq.size(); ++i)
        for (int k = 0; k < kStatDim; ++k) {
            CHECK(g.seq.f0_stats[i][k] == doctest::Approx(f.seq.f0_stats[i][k]).epsilon(1e-12));
            CHECK(g.seq.rms_stats[i][k] == doctest::Approx(f.seq.rms_stats[i][k]).epsilon(1e-12));
        }
    REQUIRE(g.f0.size() == f.f0.size());
    REQUIRE(g.rms.size() == f.rms.size());
    CHECK(g.f0.frame_length == f.f0.frame_length);
    CHECK(g.rms.hop_length == f.rms.hop_length);
}

}  // TEST_SUITE
