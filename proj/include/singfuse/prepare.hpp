#pragma once

// End-to-end corpus preparation: walk a directory tree of per-speaker
// session channels, parse transcripts, cut sentence clips / merge
// dialogue chunks, derive ASR + PQA records, synthesize SQA/SDS, split
// speaker-disjoint and write per-task JSONL manifests plus chunk audio.
//
// Expected input layout (a "sessions" subdirectory is also accepted):
//   <input>/<session_id>/<speaker_id>.wav
//   <input>/<session_id>/<speaker_id>.txt   lines: speaker\tstart\tend\ttext
//   metadata CSV: speaker_id,gender,accent,part

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "singfuse/audio.hpp"
#include "singfuse/corpus.hpp"

namespace singfuse {

struct speaker_meta {
    speaker_info info;
    int part = 0;
};

inline std::map<std::string, speaker_meta> load_metadata_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw format_error("metadata: cannot open " + path);
    std::map<std::string, speaker_meta> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.find("speaker_id") != std::string::npos) continue;   // header
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(trim(col));
        if (cols.size() != 4)
            throw format_error("metadata: " + path + ": expected 4 columns, got " +
                               std::to_string(cols.size()) + " in line: " + line);
        speaker_meta m;
        m.info.gender = cols[1];
        m.info.accent = cols[2];
        m.part = std::stoi(cols[3]);
        out[cols[0]] = m;
    }
    return out;
}

struct session_input {
    std::string session_id;
    // one (channel audio, segments) entry per speaker
    std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> channels;
};

inline std::vector<utterance_segment> parse_segment_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw format_error("transcript: cannot open " + path);
    std::vector<utterance_segment> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cols;
        size_t pos = 0;
        for (int i = 0; i < 3; ++i) {
            size_t tab = line.find('\t', pos);
            if (tab == std::string::npos)
                throw format_error("transcript: " + path + ":" + std::to_string(lineno) +
                                   ": expected speaker\\tstart\\tend\\ttext");
            cols.push_back(line.substr(pos, tab - pos));
            pos = tab + 1;
        }
        utterance_segment s;
        s.speaker_id = cols[0];
        s.start = std::stod(cols[1]);
        s.end = std::stod(cols[2]);
        s.raw_text = line.substr(pos);
        s.channel_ref = path;
        out.push_back(std::move(s));
    }
    return out;
}

// multi-channel files are averaged down to one channel
inline audio_clip load_channel_wav(const std::string & path) {
    auto clips = load_wav(path);
    if (clips.empty()) throw format_error("wav: " + path + ": no channels");
    audio_clip out = clips[0];
    for (size_t c = 1; c < clips.size(); ++c)
        for (size_t i = 0; i < out.samples.size() && i < clips[c].samples.size(); ++i)
            out.samples[i] += clips[c].samples[i];
    if (clips.size() > 1)
        for (auto & s : out.samples) s /= (double)clips.size();
    out.source_id = path;
    return out;
}

inline std::vector<session_input> discover_sessions(const std::string & input_dir) {
    namespace fs = std::filesystem;
    fs::path root(input_dir);
    if (fs::exists(root / "sessions")) root /= "sessions";
    std::vector<session_input> out;
    if (!fs::is_directory(root)) return out;
    std::vector<fs::path> dirs;
    for (const auto & e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto & d : dirs) {
        session_input s;
        s.session_id = d.filename().string();
        std::vector<fs::path> wavs;
        for (const auto & e : fs::directory_iterator(d))
            if (e.path().extension() == ".wav") wavs.push_back(e.path());
        std::sort(wavs.begin(), wavs.end());
        for (const auto & w : wavs) {
            fs::path txt = w;
            txt.replace_extension(".txt");
            if (!fs::exists(txt))
                throw format_error("session " + s.session_id + ": missing transcript for " +
                                   w.filename().string());
            s.channels.emplace_back(load_channel_wav(w.string()),
                                    parse_segment_file(txt.string()));
        }
        if (!s.channels.empty()) out.push_back(std::move(s));
    }
    return out;
}

struct prepare_options {
    std::set<int> parts;                 // empty = all
    split_policy policy;
    synth_config synth;
    double max_chunk_dur = 30.0;
    uint64_t seed = 7;
    bool write_audio = true;
};

struct prepare_result {
    manifest train, test;
    std::vector<std::string> diagnostics;      // drops, skips, discards
    // per (task, part): count and duration stats in seconds
    struct stat { int count = 0; double total = 0, min_len = 1e18, max_len = 0; };
    std::map<std::pair<std::string, int>, stat> stats;
};

namespace detail {

// render a dialogue chunk's ASR target with <SpeakerN>: tags assigned
// in order of first appearance
inline std::string chunk_asr_target(const dialogue_chunk & ch) {
    std::map<std::string, int> tag;
    std::vector<annotated_token> tokens;
    for (const auto & seg : ch.segments) {
        auto it = tag.find(seg.speaker_id);
        if (it == tag.end()) it = tag.emplace(seg.speaker_id, (int)tag.size() + 1).first;
        tokens.push_back({token_kind::speaker_tag, "Speaker" + std::to_string(it->second)});
        auto parsed = parse_transcript(seg.raw_text);
        tokens.insert(tokens.end(), parsed.begin(), parsed.end());
    }
    return normalize_for_target(tokens, level_kind::dialogue);
}

} // namespace detail

inline prepare_result prepare_corpus(const std::string & input_dir,
                                     const std::string & metadata_csv,
                                     const std::string & out_dir,
                                     text_generator & gen,
                                     const prepare_options & opts) {
    namespace fs = std::filesystem;
    auto sessions = discover_sessions(input_dir);
    if (sessions.empty()) throw config_error("no sessions found under " + input_dir);
    auto meta = load_metadata_csv(metadata_csv);

    std::map<std::string, speaker_info> info;
    for (const auto & [sp, m] : meta) info[sp] = m.info;

    if (opts.write_audio) fs::create_directories(fs::path(out_dir) / "audio");
    auto emit_audio = [&](const std::string & ref, const audio_clip & clip) {
        if (opts.write_audio)
            write_wav((fs::path(out_dir) / "audio" / (ref + ".wav")).string(), clip);
    };

    prepare_result res;
    std::vector<task_record> records;
    std::map<std::string, std::vector<std::string>> speakers_of_ref;
    std::vector<sentence_item> sentences;
    std::vector<dialogue_chunk> all_chunks;
    std::vector<std::pair<std::string, std::string>> chunk_texts;     // (chunk_id, transcript)
    std::map<std::string, int> chunk_part;

    auto part_of = [&](const std::string & speaker) {
        auto it = meta.find(speaker);
        return it == meta.end() ? 0 : it->second.part;
    };
    auto part_selected = [&](int p) { return opts.parts.empty() || opts.parts.count(p) > 0; };

    for (const auto & sess : sessions) {
        if (sess.channels.size() == 1) {
            // sentence level: each utterance becomes its own clip
            const auto & [clip, segs] = sess.channels[0];
            for (size_t i = 0; i < segs.size(); ++i) {
                const auto & seg = segs[i];
                int part = part_of(seg.speaker_id);
                if (!part_selected(part)) continue;
                std::string ref = sess.session_id + "_sent" + std::to_string(i);
                std::vector<annotated_token> tokens;
                try {
                    tokens = parse_transcript(seg.raw_text);
                } catch (const parse_error & e) {
                    res.diagnostics.push_back(ref + ": " + e.what());
                    continue;
                }
                audio_clip cut;
                cut.sample_rate = clip.sample_rate;
                cut.source_id = ref;
                size_t a = (size_t)std::llround(seg.start * clip.sample_rate);
                size_t b = std::min(clip.samples.size(),
                                    (size_t)std::llround(seg.end * clip.sample_rate));
                if (a < b) cut.samples.assign(clip.samples.begin() + (std::ptrdiff_t)a,
                                              clip.samples.begin() + (std::ptrdiff_t)b);
                emit_audio(ref, cut);
                records.push_back({"ASR", ref, "Transcribe the audio into text.",
                                   normalize_for_target(tokens, level_kind::sentence),
                                   "sentence", part, ""});
                speakers_of_ref[ref] = {seg.speaker_id};
                sentences.push_back({ref, seg.speaker_id, seg.raw_text, part,
                                     seg.end - seg.start});
            }
        } else {
            merge_report mrep;
            auto chunks = merge_channels(sess.channels, sess.session_id, info,
                                         opts.max_chunk_dur, &mrep);
            for (const auto & d : mrep.dropped) res.diagnostics.push_back(d);
            for (auto & ch : chunks) {
                int part = ch.segments.empty() ? 0 : part_of(ch.segments[0].speaker_id);
                if (!part_selected(part)) continue;
                ch.part = part;
                std::string target;
                try {
                    target = detail::chunk_asr_target(ch);
                } catch (const parse_error & e) {
                    res.diagnostics.push_back(ch.chunk_id + ": " + e.what());
                    continue;
                }
                emit_audio(ch.chunk_id, ch.audio);
                records.push_back({"ASR", ch.chunk_id, "Transcribe the dialogue into text.",
                                   target, "dialogue", part, ""});
                std::vector<std::string> sps;
                for (const auto & seg : ch.segments)
                    if (std::find(sps.begin(), sps.end(), seg.speaker_id) == sps.end())
                        sps.push_back(seg.speaker_id);
                speakers_of_ref[ch.chunk_id] = sps;
                chunk_texts.emplace_back(ch.chunk_id, target);
                chunk_part[ch.chunk_id] = part;
                all_chunks.push_back(ch);
            }
        }
    }

    std::vector<std::string> skipped;
    auto pqa = make_pqa_records(sentences, all_chunks, info, &skipped);
    for (const auto & s : skipped) res.diagnostics.push_back("pqa: " + s);
    records.insert(records.end(), pqa.begin(), pqa.end());

    std::vector<std::string> discarded;
    for (const auto & [cid, text] : chunk_texts) {
        auto synth = synthesize_qa_and_summary({{cid, text}}, gen, opts.synth,
                                               chunk_part[cid], &discarded);
        records.insert(records.end(), synth.begin(), synth.end());
    }
    for (const auto & s : discarded) res.diagnostics.push_back("synth: " + s);

    auto [train, test] = build_manifest(records, speakers_of_ref, opts.policy, opts.seed);
    res.train = std::move(train);
    res.test = std::move(test);

    // per-task per-part duration stats over the emitted audio references
    std::map<std::string, double> ref_dur;
    for (const auto & s : sentences) ref_dur[s.audio_ref] = s.duration;
    for (const auto & ch : all_chunks) ref_dur[ch.chunk_id] = ch.duration;
    auto accumulate = [&](const manifest & m) {
        for (const auto & r : m.records) {
            auto & st = res.stats[{r.task, r.part}];
            st.count += 1;
            auto it = ref_dur.find(r.audio_ref);
            double d = it == ref_dur.end() ? 0.0 : it->second;
            st.total += d;
            st.min_len = std::min(st.min_len, d);
            st.max_len = std::max(st.max_len, d);
        }
    };
    accumulate(res.train);
    accumulate(res.test);

    fs::create_directories(out_dir);
    std::set<std::string> tasks;
    for (const auto & r : records) tasks.insert(r.task);
    auto write_task = [&](const manifest & m, const std::string & suffix) {
        for (const auto & t : tasks) {
            manifest sub;
            sub.split = m.split;
            for (const auto & r : m.records)
                if (r.task == t) sub.records.push_back(r);
            std::string name = t;
            for (auto & c : name) c = (char)std::tolower((unsigned char)c);
            sub.write_jsonl((fs::path(out_dir) / (name + "_" + suffix + ".jsonl")).string());
        }
    };
    write_task(res.train, "train");
    write_task(res.test, "test");
    return res;
}

inline std::string stats_table(const prepare_result & res) {
    std::ostringstream os;
    os << "| task | part | count | hours | avg len (s) | min (s) | max (s) |\n";
    os << "|------|------|-------|-------|-------------|---------|---------|\n";
    os.setf(std::ios::fixed);
    for (const auto & [key, st] : res.stats) {
        double avg = st.count ? st.total / st.count : 0.0;
        os << "| " << key.first << " | " << key.second << " | " << st.count << " | "
           << std::setprecision(4) << st.total / 3600.0 << " | "
           << std::setprecision(2) << avg << " | "
           << (st.count ? st.min_len : 0.0) << " | " << st.max_len << " |\n";
    }
    return os.str();
}

} // namespace singfuse
