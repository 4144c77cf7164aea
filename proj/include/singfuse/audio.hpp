#pragma once

// Waveform I/O and the log-mel front end. Every clip is padded or
// trimmed to a canonical frame count so the encoder sees a fixed-length
// input regardless of clip duration.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "singfuse/common.hpp"
#include "singfuse/config.hpp"

namespace singfuse {

struct audio_clip {
    std::vector<double> samples;   // normalized to [-1, 1]
    int sample_rate = 16000;
    std::string source_id;

    double duration() const {
        return sample_rate > 0 ? (double)samples.size() / sample_rate : 0.0;
    }
};

struct mel_config {
    int    sample_rate      = 16000;
    int    n_mels           = 80;
    double hop_ms           = 10.0;
    double win_ms           = 25.0;
    int    canonical_frames = 3000;
    double log_floor        = 1e-10;

    static mel_config from_run_config(const run_config & cfg) {
        mel_config m;
        m.sample_rate      = (int)cfg.get_int("audio.sample_rate", 16000);
        m.n_mels           = (int)cfg.get_int("audio.n_mels", 80);
        m.hop_ms           = cfg.get_double("audio.hop_ms", 10.0);
        m.win_ms           = cfg.get_double("audio.win_ms", 25.0);
        m.canonical_frames = (int)cfg.get_int("audio.canonical_frames", 3000);
        m.log_floor        = cfg.get_double("audio.log_floor", 1e-10);
        return m;
    }
};

struct mel_spectrogram {
    std::vector<double> data;   // frames x n_mels, row-major
    int64_t frames = 0;
    int     n_mels = 0;
    double  frame_hop = 0.01;   // seconds
    double  log_floor = 1e-10;
    int64_t original_frames = 0;  // pre-padding length, set by pad_or_trim

    double at(int64_t f, int m) const { return data[f * n_mels + m]; }
};

// ---- WAV (RIFF PCM 16-bit) ----

namespace detail {

inline uint32_t read_u32(const uint8_t * p) {
    return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}
inline uint16_t read_u16(const uint8_t * p) {
    return (uint16_t)((uint32_t)p[0] | ((uint32_t)p[1] << 8));
}

} // namespace detail

// One clip per channel; samples divided by 32768.
inline std::vector<audio_clip> load_wav(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("wav: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto fail = [&](size_t off, const std::string & what) {
        throw format_error("wav: " + path + ": " + what + " at byte offset " + std::to_string(off));
    };
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0) fail(0, "missing RIFF header");
    if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0) fail(8, "missing WAVE tag");

    int channels = 0, sample_rate = 0, bits = 0;
    const uint8_t * data_ptr = nullptr;
    size_t data_len = 0;

    size_t off = 12;
    while (off + 8 <= buf.size()) {
        const char * id = (const char *)buf.data() + off;
        uint32_t sz = detail::read_u32(buf.data() + off + 4);
        if (off + 8 + sz > buf.size()) fail(off, "truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) fail(off, "short fmt chunk");
            uint16_t fmt = detail::read_u16(buf.data() + off + 8);
            if (fmt != 1) fail(off + 8, "non-PCM format code " + std::to_string(fmt));
            channels    = detail::read_u16(buf.data() + off + 10);
            sample_rate = (int)detail::read_u32(buf.data() + off + 12);
            bits        = detail::read_u16(buf.data() + off + 22);
            if (bits != 16) fail(off + 22, "unsupported bit depth " + std::to_string(bits));
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = buf.data() + off + 8;
            data_len = sz;
        }
        off += 8 + sz + (sz & 1);
    }
    if (channels == 0) fail(12, "missing fmt chunk");
    if (data_ptr == nullptr) fail(12, "missing data chunk");

    size_t n_frames = data_len / (2 * (size_t)channels);
    std::vector<audio_clip> clips((size_t)channels);
    for (int c = 0; c < channels; ++c) {
        clips[c].sample_rate = sample_rate;
        clips[c].source_id = path + (channels > 1 ? ":ch" + std::to_string(c) : "");
        clips[c].samples.resize(n_frames);
    }
    for (size_t i = 0; i < n_frames; ++i) {
        for (int c = 0; c < channels; ++c) {
            const uint8_t * p = data_ptr + (i * channels + c) * 2;
            int16_t v = (int16_t)((uint16_t)p[0] | ((uint16_t)p[1] << 8));
            clips[c].samples[i] = (double)v / 32768.0;
        }
    }
    return clips;
}

inline void write_wav(const std::string & path, const audio_clip & clip) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("wav: cannot write " + path);
    auto w16 = [&](uint16_t v) { out.put((char)(v & 0xff)).put((char)(v >> 8)); };
    auto w32 = [&](uint32_t v) {
        out.put((char)(v & 0xff)).put((char)((v >> 8) & 0xff))
           .put((char)((v >> 16) & 0xff)).put((char)((v >> 24) & 0xff));
    };
    uint32_t data_bytes = (uint32_t)(clip.samples.size() * 2);
    out.write("RIFF", 4); w32(36 + data_bytes); out.write("WAVE", 4);
    out.write("fmt ", 4); w32(16); w16(1); w16(1);
    w32((uint32_t)clip.sample_rate); w32((uint32_t)clip.sample_rate * 2); w16(2); w16(16);
    out.write("data", 4); w32(data_bytes);
    for (double s : clip.samples) {
        double c = std::clamp(s, -1.0, 1.0);
        int16_t v = (int16_t)std::lrint(c * 32767.0);
        w16((uint16_t)v);
    }
}

// ---- resampling ----

inline audio_clip resample(const audio_clip & clip, int target_rate) {
    if (target_rate <= 0) throw dim_error("resample: target rate must be positive");
    if (target_rate == clip.sample_rate || clip.samples.empty()) {
        audio_clip out = clip;
        out.sample_rate = target_rate;
        return out;
    }
    audio_clip out;
    out.sample_rate = target_rate;
    out.source_id = clip.source_id;
    double ratio = (double)clip.sample_rate / target_rate;
    size_t n_out = (size_t)std::floor((double)(clip.samples.size() - 1) / ratio) + 1;
    out.samples.resize(n_out);
    for (size_t i = 0; i < n_out; ++i) {
        double pos = i * ratio;
        size_t i0 = (size_t)pos;
        size_t i1 = std::min(i0 + 1, clip.samples.size() - 1);
        double frac = pos - (double)i0;
        out.samples[i] = clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac;
    }
    return out;
}

// ---- log-mel ----

namespace detail {

inline void fft_radix2(std::vector<std::complex<double>> & a) {
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * 3.141592653589793 / (double)len;
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                auto u = a[i + j];
                auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// triangular filters over FFT bins, rows = n_mels, cols = n_fft/2+1
inline std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate) {
    int n_bins = n_fft / 2 + 1;
    std::vector<double> fb((size_t)n_mels * n_bins, 0.0);
    double mel_lo = hz_to_mel(0.0);
    double mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> pts(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        pts[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
    for (int m = 0; m < n_mels; ++m) {
        double lo = pts[m], mid = pts[m + 1], hi = pts[m + 2];
        for (int b = 0; b < n_bins; ++b) {
            double f = (double)b * sample_rate / n_fft;
            double w = 0.0;
            if (f > lo && f < mid) w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
            fb[(size_t)m * n_bins + b] = w;
        }
    }
    return fb;
}

} // namespace detail

inline mel_spectrogram log_mel(const audio_clip & clip, const mel_config & cfg) {
    int win = (int)std::lround(cfg.win_ms * cfg.sample_rate / 1000.0);
    int hop = (int)std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0);
    int n_fft = 1;
    while (n_fft < win) n_fft <<= 1;
    int n_bins = n_fft / 2 + 1;

    // one frame per hop covering the whole clip (trailing windows read
    // zeros); clips shorter than one window still get a single frame
    int64_t n_frames = clip.samples.empty()
        ? 1
        : std::max<int64_t>(1, ((int64_t)clip.samples.size() + hop - 1) / hop);

    static thread_local std::vector<double> fb;
    static thread_local int fb_mels = -1, fb_fft = -1, fb_rate = -1;
    if (fb_mels != cfg.n_mels || fb_fft != n_fft || fb_rate != cfg.sample_rate) {
        fb = detail::mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate);
        fb_mels = cfg.n_mels; fb_fft = n_fft; fb_rate = cfg.sample_rate;
    }

    std::vector<double> hann(win);
    for (int i = 0; i < win; ++i)
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * 3.141592653589793 * i / (win - 1));

    mel_spectrogram mel;
    mel.n_mels = cfg.n_mels;
    mel.frames = n_frames;
    mel.frame_hop = cfg.hop_ms / 1000.0;
    mel.log_floor = cfg.log_floor;
    mel.original_frames = n_frames;
    mel.data.assign((size_t)n_frames * cfg.n_mels, std::log(cfg.log_floor));

    std::vector<std::complex<double>> frame((size_t)n_fft);
    for (int64_t f = 0; f < n_frames; ++f) {
        std::fill(frame.begin(), frame.end(), std::complex<double>(0, 0));
        for (int i = 0; i < win; ++i) {
            int64_t idx = f * hop + i;
            double s = idx < (int64_t)clip.samples.size() ? clip.samples[idx] : 0.0;
            frame[i] = s * hann[i];
        }
        detail::fft_radix2(frame);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            const double * row = fb.data() + (size_t)m * n_bins;
            for (int b = 0; b < n_bins; ++b) {
                if (row[b] == 0.0) continue;
                e += row[b] * std::norm(frame[b]);
            }
            mel.data[(size_t)f * cfg.n_mels + m] = std::log(std::max(e, cfg.log_floor));
        }
    }
    return mel;
}

// Pads with log-floor frames or truncates to exactly canonical_frames.
// Idempotent; records the pre-padding frame count.
inline mel_spectrogram pad_or_trim(const mel_spectrogram & mel, int64_t canonical_frames) {
    mel_spectrogram out;
    out.n_mels = mel.n_mels;
    out.frame_hop = mel.frame_hop;
    out.log_floor = mel.log_floor;
    out.frames = canonical_frames;
    out.original_frames = std::min(mel.original_frames, canonical_frames);
    out.data.assign((size_t)canonical_frames * mel.n_mels, std::log(mel.log_floor));
    int64_t keep = std::min(mel.frames, canonical_frames);
    std::copy(mel.data.begin(), mel.data.begin() + keep * mel.n_mels, out.data.begin());
    return out;
}

} // namespace singfuse
