#pragma once

// Deterministic synthetic fixture corpus: sine-tone WAVs with scripted
// orthographic transcripts (covering every annotation delimiter and a
// CJK code-switch line), a speaker-metadata CSV, and a small multitask
// record set used by the overfit and smoke tests.
//
// Layout written by write_prepare_fixture:
//   <dir>/sessions/<session_id>/<speaker_id>.wav   one channel per speaker
//   <dir>/sessions/<session_id>/<speaker_id>.txt   lines: speaker\tstart\tend\ttext
//   <dir>/metadata.csv                             speaker_id,gender,accent,part

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "singfuse/audio.hpp"
#include "singfuse/corpus.hpp"

namespace singfuse {

inline audio_clip sine_clip(double freq, double dur, int sample_rate,
                            const std::string & source_id = "", double amp = 0.4) {
    audio_clip c;
    c.sample_rate = sample_rate;
    c.source_id = source_id;
    int64_t n = (int64_t)std::llround(dur * sample_rate);
    c.samples.resize((size_t)n);
    for (int64_t i = 0; i < n; ++i)
        c.samples[(size_t)i] = amp * std::sin(2.0 * M_PI * freq * (double)i / sample_rate);
    return c;
}

// two-channel 16-bit PCM writer (the mono writer lives in audio.hpp)
inline void write_wav_stereo(const std::string & path, const audio_clip & left,
                             const audio_clip & right) {
    if (left.sample_rate != right.sample_rate || left.samples.size() != right.samples.size())
        throw dim_error("write_wav_stereo: channels must share rate and length");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("wav: cannot write " + path);
    auto w16 = [&](uint16_t v) { out.put((char)(v & 0xff)).put((char)(v >> 8)); };
    auto w32 = [&](uint32_t v) {
        out.put((char)(v & 0xff)).put((char)((v >> 8) & 0xff))
           .put((char)((v >> 16) & 0xff)).put((char)((v >> 24) & 0xff));
    };
    uint32_t n = (uint32_t)left.samples.size();
    uint32_t data_bytes = n * 4;
    out.write("RIFF", 4); w32(36 + data_bytes); out.write("WAVE", 4);
    out.write("fmt ", 4); w32(16); w16(1); w16(2);
    w32((uint32_t)left.sample_rate); w32((uint32_t)left.sample_rate * 4); w16(4); w16(16);
    out.write("data", 4); w32(data_bytes);
    auto q = [](double s) {
        double v = std::max(-1.0, std::min(1.0, s)) * 32767.0;
        return (uint16_t)(int16_t)std::lround(v);
    };
    for (uint32_t i = 0; i < n; ++i) { w16(q(left.samples[i])); w16(q(right.samples[i])); }
}

struct fixture_utterance {
    std::string speaker;
    double start, end;
    std::string text;
};

struct fixture_session {
    std::string session_id;
    int sample_rate;
    bool stereo_files;       // write each channel as a 2-ch file (both channels identical)
    std::vector<std::string> speakers;
    std::vector<double> freqs;              // one tone per speaker
    std::vector<fixture_utterance> lines;
};

inline std::vector<fixture_session> fixture_sessions() {
    // Six sessions, twelve channel WAVs, covering: mixed sample rates, a
    // stereo file, every delimiter kind, and a CJK code-switch line.
    std::vector<fixture_session> s;
    s.push_back({"p1_s001", 16000, false, {"spk01"}, {220.0}, {
        {"spk01", 0.0, 2.5, "(um) the weather today is quite hot lah"},
        {"spk01", 3.0, 5.5, "i want to go #Sentosa# this weekend"},
    }});
    s.push_back({"p2_s002", 22050, false, {"spk02"}, {330.0}, {
        {"spk02", 0.0, 2.0, "[oh] really you also going there"},
        {"spk02", 2.5, 5.0, "!wow! the queue damn long one"},
    }});
    s.push_back({"p3_s003", 16000, true, {"spk03", "spk04"}, {262.0, 392.0}, {
        {"spk03", 0.0, 4.0, "last time we order Baileys with green tea"},
        {"spk04", 4.5, 8.0, "(uh) that combination sounds strange to me"},
        {"spk03", 8.5, 12.0, "no lah you must try it first"},
        {"spk04", 12.5, 16.0, "okay next time we go #Holland Village# then"},
    }});
    s.push_back({"p4_s004", 16000, false, {"spk05", "spk06"}, {294.0, 440.0}, {
        {"spk05", 0.0, 3.5, "this one 比较好 i think"},
        {"spk06", 4.0, 7.5, "!aiya! you always say like that"},
        {"spk05", 8.0, 11.5, "(er) but the price really 比较好 what"},
    }});
    s.push_back({"p5_s005", 8000, false, {"spk07", "spk08"}, {349.0, 523.0}, {
        {"spk07", 0.0, 5.0, "my company sent me for a training course"},
        {"spk08", 5.5, 10.0, "[ah] which one the safety certification"},
        {"spk07", 10.5, 15.0, "yes the whole thing took three days"},
        // long quiet gap forces a second chunk under the 30 s cap
        {"spk08", 27.0, 32.0, "then you can apply for the new role already"},
        {"spk07", 32.5, 37.0, "hopefully lah still need interview somemore"},
    }});
    s.push_back({"p6_s006", 16000, false, {"spk09", "spk10"}, {415.0, 587.0}, {
        {"spk09", 0.0, 4.0, "the hawker centre near my block got new stall"},
        {"spk10", 4.5, 8.5, "(um) selling what kind of food"},
        {"spk09", 9.0, 13.0, "chicken rice but the uncle very fierce one"},
        {"spk10", 13.5, 17.5, "[wah] then i rather eat somewhere else"},
    }});
    return s;
}

inline std::string fixture_metadata_csv() {
    return "speaker_id,gender,accent,part\n"
           "spk01,female,chinese,1\n"
           "spk02,male,malay,2\n"
           "spk03,female,indian,3\n"
           "spk04,male,chinese,3\n"
           "spk05,female,chinese,4\n"
           "spk06,male,singaporean,4\n"
           "spk07,male,eurasian,5\n"
           "spk08,female,malay,5\n"
           "spk09,male,indian,6\n"
           "spk10,female,chinese,6\n";
}

// writes the on-disk corpus tree consumed by the prepare command
inline void write_prepare_fixture(const std::string & dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "sessions");
    for (const auto & sess : fixture_sessions()) {
        fs::path sdir = fs::path(dir) / "sessions" / sess.session_id;
        fs::create_directories(sdir);
        double sess_end = 0;
        for (const auto & u : sess.lines) sess_end = std::max(sess_end, u.end);
        for (size_t i = 0; i < sess.speakers.size(); ++i) {
            const std::string & spk = sess.speakers[i];
            // channel signal: the speaker's tone gated to their utterances
            audio_clip ch = sine_clip(sess.freqs[i], sess_end + 0.5, sess.sample_rate, spk);
            for (auto & s : ch.samples) s = 0.0;
            audio_clip tone = sine_clip(sess.freqs[i], sess_end + 0.5, sess.sample_rate);
            for (const auto & u : sess.lines) {
                if (u.speaker != spk) continue;
                int64_t a = (int64_t)std::llround(u.start * sess.sample_rate);
                int64_t b = std::min<int64_t>((int64_t)ch.samples.size(),
                                              (int64_t)std::llround(u.end * sess.sample_rate));
                for (int64_t k = a; k < b; ++k) ch.samples[(size_t)k] = tone.samples[(size_t)k];
            }
            std::string wav = (sdir / (spk + ".wav")).string();
            if (sess.stereo_files) write_wav_stereo(wav, ch, ch);
            else write_wav(wav, ch);

            std::ofstream txt(sdir / (spk + ".txt"));
            txt.setf(std::ios::fixed); txt.precision(2);
            for (const auto & u : sess.lines)
                if (u.speaker == spk)
                    txt << u.speaker << "\t" << u.start << "\t" << u.end << "\t" << u.text << "\n";
        }
    }
    std::ofstream meta(fs::path(dir) / "metadata.csv");
    meta << fixture_metadata_csv();
}

// ---------------------------------------------------------------------------
// 20-record multitask overfit fixture: short distinct tones, short targets.
// Several records share an instruction so the model must use the audio.

struct overfit_fixture {
    std::vector<task_record> records;
    std::vector<audio_clip> clips;   // parallel to records
};

inline overfit_fixture make_overfit_fixture(int sample_rate = 16000) {
    overfit_fixture f;
    auto add = [&](const std::string & task, const std::string & instr,
                   const std::string & target, double freq, int part,
                   const std::string & level) {
        task_record r;
        r.task = task;
        r.audio_ref = "toy_" + std::to_string(f.records.size());
        r.instruction = instr;
        r.target = target;
        r.level = level;
        r.part = part;
        r.split = "train";
        f.records.push_back(r);
        f.clips.push_back(sine_clip(freq, 0.6, sample_rate, r.audio_ref));
    };
    const std::string asr_i = "Transcribe the audio.";
    add("ASR", asr_i, "red lah", 200, 1, "sentence");
    add("ASR", asr_i, "blue one", 240, 1, "sentence");
    add("ASR", asr_i, "green tea", 280, 2, "sentence");
    add("ASR", asr_i, "go home", 320, 2, "sentence");
    add("ASR", asr_i, "so hot", 360, 3, "dialogue");
    add("ASR", asr_i, "can lah", 400, 3, "dialogue");
    add("ASR", asr_i, "eat first", 440, 4, "dialogue");
    add("ASR", asr_i, "no need", 480, 4, "dialogue");
    const std::string sqa_i = "Answer the question about the dialogue.";
    add("SQA", sqa_i, "a drink", 520, 3, "dialogue");
    add("SQA", sqa_i, "at noon", 560, 3, "dialogue");
    add("SQA", sqa_i, "two people", 600, 4, "dialogue");
    add("SQA", sqa_i, "by bus", 640, 4, "dialogue");
    const std::string sds_i = "Summarize the dialogue.";
    add("SDS", sds_i, "about food", 680, 5, "dialogue");
    add("SDS", sds_i, "about work", 720, 5, "dialogue");
    add("SDS", sds_i, "about rain", 760, 6, "dialogue");
    add("SDS", sds_i, "about games", 800, 6, "dialogue");
    const std::string pqa_g = "What is the gender of the speaker?";
    const std::string pqa_a = "What is the accent of the speaker?";
    add("PQA", pqa_g, "The speaker is female.", 840, 1, "sentence");
    add("PQA", pqa_g, "The speaker is male.", 880, 2, "sentence");
    add("PQA", pqa_a, "The speaker's accent is chinese.", 920, 1, "sentence");
    add("PQA", pqa_a, "The speaker's accent is malay.", 960, 2, "sentence");
    return f;
}

// writes the overfit fixture as WAVs + a JSONL manifest for the CLI
inline void write_overfit_fixture(const std::string & dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "audio");
    auto f = make_overfit_fixture();
    for (size_t i = 0; i < f.clips.size(); ++i)
        write_wav((fs::path(dir) / "audio" / (f.records[i].audio_ref + ".wav")).string(),
                  f.clips[i]);
    manifest m;
    m.records = f.records;
    m.write_jsonl((fs::path(dir) / "train.jsonl").string());
}

} // namespace singfuse
