// Audio front end: WAV decoding, resampling, log-mel features and the
// fixed-length padding contract.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <vector>

#include "singfuse/audio.hpp"
#include "singfuse/fixture.hpp"

using namespace singfuse;

namespace {

std::string tmp_path(const std::string & name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// independent DFT oracle (O(n^2), used on short signals only)
double dominant_frequency(const std::vector<double> & x, int sample_rate) {
    const size_t n = std::min<size_t>(x.size(), 4096);
    double best_mag = -1;
    size_t best_bin = 0;
    for (size_t k = 1; k < n / 2; ++k) {
        std::complex<double> acc(0, 0);
        for (size_t t = 0; t < n; ++t)
            acc += x[t] * std::exp(std::complex<double>(0, -2.0 * M_PI * (double)(k * t) / (double)n));
        double mag = std::abs(acc);
        if (mag > best_mag) { best_mag = mag; best_bin = k; }
    }
    return (double)best_bin * sample_rate / (double)n;
}

} // namespace

TEST_CASE("wav round-trip and 16-bit scaling") {
    audio_clip c;
    c.sample_rate = 16000;
    c.samples = {0.5, -0.25, 0.0, 1.0, -1.0};
    auto path = tmp_path("sf_roundtrip.wav");
    write_wav(path, c);
    auto back = load_wav(path);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].samples.size() == 5);
    CHECK(back[0].sample_rate == 16000);
    // 16384/32768 == 0.5 exactly
    CHECK(back[0].samples[0] == Catch::Approx(0.5).margin(1.0 / 32768));
    CHECK(back[0].samples[1] == Catch::Approx(-0.25).margin(1.0 / 32768));
}

TEST_CASE("stereo file splits into one clip per channel") {
    auto left = sine_clip(300.0, 0.05, 16000);
    auto right = sine_clip(600.0, 0.05, 16000);
    auto path = tmp_path("sf_stereo.wav");
    write_wav_stereo(path, left, right);
    auto clips = load_wav(path);
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].samples.size() == left.samples.size());
    CHECK(clips[1].samples.size() == right.samples.size());
    CHECK(dominant_frequency(clips[0].samples, 16000) == Catch::Approx(300.0).margin(20.0));
    CHECK(dominant_frequency(clips[1].samples, 16000) == Catch::Approx(600.0).margin(20.0));
}

TEST_CASE("zero-length data chunk gives an empty clip") {
    audio_clip c;
    c.sample_rate = 16000;
    auto path = tmp_path("sf_empty.wav");
    write_wav(path, c);
    auto clips = load_wav(path);
    REQUIRE(clips.size() == 1);
    CHECK(clips[0].samples.empty());
    CHECK(clips[0].duration() == 0.0);
}

TEST_CASE("truncated wav reports a byte offset") {
    auto path = tmp_path("sf_trunc.wav");
    {
        std::ofstream out(path, std::ios::binary);
        out.write("RIFF\x10\0\0\0WAVE", 12);
    }
    CHECK_THROWS_WITH(load_wav(path), Catch::Matchers::ContainsSubstring("byte offset"));
}

TEST_CASE("resample identity and constants") {
    auto c = sine_clip(100.0, 0.02, 16000);
    auto same = resample(c, 16000);
    CHECK(same.samples == c.samples);

    audio_clip flat;
    flat.sample_rate = 48000;
    flat.samples.assign(480, 0.7);
    auto down = resample(flat, 16000);
    for (double v : down.samples) CHECK(v == Catch::Approx(0.7).margin(1e-9));
    CHECK(std::abs(down.duration() - flat.duration()) <= 1.0 / 16000);
}

TEST_CASE("resample keeps a 440 Hz tone at 440 Hz") {
    auto c = sine_clip(440.0, 0.3, 48000);
    auto down = resample(c, 16000);
    // DFT bin width at n=4096: 16000/4096 ~ 3.9 Hz
    CHECK(dominant_frequency(down.samples, 16000) == Catch::Approx(440.0).margin(4.0));
}

TEST_CASE("log_mel of silence is the log floor everywhere") {
    mel_config cfg;
    cfg.canonical_frames = 200;
    audio_clip c;
    c.sample_rate = cfg.sample_rate;
    c.samples.assign(16000, 0.0);
    auto mel = log_mel(c, cfg);
    const double floor_v = std::log(cfg.log_floor);
    for (double v : mel.data) CHECK(v == Catch::Approx(floor_v));
}

TEST_CASE("doubling amplitude never lowers log-mel values") {
    mel_config cfg;
    auto c = sine_clip(500.0, 0.5, cfg.sample_rate);
    auto loud = c;
    for (auto & s : loud.samples) s *= 2.0;
    auto a = log_mel(c, cfg);
    auto b = log_mel(loud, cfg);
    REQUIRE(a.data.size() == b.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(b.data[i] >= a.data[i] - 1e-9);
}

TEST_CASE("30 s at 10 ms hop gives 3000 frames") {
    mel_config cfg;
    audio_clip c;
    c.sample_rate = cfg.sample_rate;
    c.samples.assign((size_t)(30 * cfg.sample_rate), 0.0);
    auto mel = log_mel(c, cfg);
    CHECK(mel.frames == 3000);
}

TEST_CASE("clip shorter than one window yields a single padded frame") {
    mel_config cfg;
    audio_clip c;
    c.sample_rate = cfg.sample_rate;
    c.samples.assign(10, 0.1);
    auto mel = log_mel(c, cfg);
    CHECK(mel.frames == 1);
}

TEST_CASE("pad_or_trim contract") {
    mel_config cfg;
    auto tone = sine_clip(700.0, 1.0, cfg.sample_rate);
    auto mel = log_mel(tone, cfg);
    const int64_t orig = mel.frames;

    auto padded = pad_or_trim(mel, 3000);
    CHECK(padded.frames == 3000);
    CHECK(padded.original_frames == orig);
    const double floor_v = std::log(cfg.log_floor);
    for (int64_t f = orig; f < 3000; ++f)
        for (int m = 0; m < cfg.n_mels; ++m)
            CHECK(padded.data[(size_t)(f * cfg.n_mels + m)] == Catch::Approx(floor_v));

    // identity on exact length
    auto same = pad_or_trim(padded, 3000);
    CHECK(same.frames == 3000);
    CHECK(same.data == padded.data);

    // trim keeps the first frames
    auto trimmed = pad_or_trim(padded, 100);
    REQUIRE(trimmed.frames == 100);
    for (size_t i = 0; i < trimmed.data.size(); ++i) CHECK(trimmed.data[i] == padded.data[i]);
}

TEST_CASE("pad_or_trim is idempotent") {
    mel_config cfg;
    auto mel = log_mel(sine_clip(550.0, 0.4, cfg.sample_rate), cfg);
    auto once = pad_or_trim(mel, 500);
    auto twice = pad_or_trim(once, 500);
    CHECK(once.frames == twice.frames);
    CHECK(once.original_frames == twice.original_frames);
    CHECK(once.data == twice.data);
}

TEST_CASE("trailing silence does not corrupt the real frames") {
    mel_config cfg;
    auto clip = sine_clip(650.0, 0.5, cfg.sample_rate);
    auto extended = clip;
    extended.samples.resize(clip.samples.size() + cfg.sample_rate, 0.0);
    auto a = log_mel(clip, cfg);
    auto b = log_mel(extended, cfg);
    // compare all frames fully covered by the original clip
    int win = (int)std::lround(cfg.win_ms * cfg.sample_rate / 1000.0);
    int hop = (int)std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0);
    int64_t full = ((int64_t)clip.samples.size() - win) / hop;
    REQUIRE(full > 10);
    for (int64_t f = 0; f < full; ++f)
        for (int m = 0; m < cfg.n_mels; ++m)
            CHECK(b.data[(size_t)(f * cfg.n_mels + m)] ==
                  Catch::Approx(a.data[(size_t)(f * cfg.n_mels + m)]).margin(1e-5));
}
