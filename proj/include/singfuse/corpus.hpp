#pragma once

// Corpus standardization: parse annotated transcripts, merge per-speaker
// channels into <=30 s dialogue chunks, derive PQA records from speaker
// metadata, synthesize QA/summary records through a pluggable text
// generator, and emit speaker-disjoint JSONL manifests.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "singfuse/audio.hpp"
#include "singfuse/common.hpp"

namespace singfuse {

// ---- annotation grammar ----

enum class token_kind { word, filler, particle, proper_noun, interjection, cjk_run, speaker_tag };

struct annotated_token {
    token_kind kind;
    std::string surface;

    bool operator==(const annotated_token & o) const {
        return kind == o.kind && surface == o.surface;
    }
};

struct parse_error : std::runtime_error {
    size_t offset;
    parse_error(const std::string & msg, size_t off)
        : std::runtime_error(msg + " at offset " + std::to_string(off)), offset(off) {}
};

namespace detail {

inline bool is_cjk(uint32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) ||   // unified ideographs
           (cp >= 0x3400 && cp <= 0x4DBF) ||   // extension A
           (cp >= 0xF900 && cp <= 0xFAFF) ||   // compatibility
           (cp >= 0x3000 && cp <= 0x303F);     // CJK punctuation
}

// decode one UTF-8 codepoint; returns bytes consumed (0 on bad input)
inline int utf8_decode(const std::string & s, size_t i, uint32_t & cp) {
    unsigned char c = (unsigned char)s[i];
    if (c < 0x80) { cp = c; return 1; }
    if ((c >> 5) == 0x6 && i + 1 < s.size()) {
        cp = ((uint32_t)(c & 0x1f) << 6) | ((unsigned char)s[i + 1] & 0x3f);
        return 2;
    }
    if ((c >> 4) == 0xe && i + 2 < s.size()) {
        cp = ((uint32_t)(c & 0x0f) << 12) | (((unsigned char)s[i + 1] & 0x3f) << 6) |
             ((unsigned char)s[i + 2] & 0x3f);
        return 3;
    }
    if ((c >> 3) == 0x1e && i + 3 < s.size()) {
        cp = ((uint32_t)(c & 0x07) << 18) | (((unsigned char)s[i + 1] & 0x3f) << 12) |
             (((unsigned char)s[i + 2] & 0x3f) << 6) | ((unsigned char)s[i + 3] & 0x3f);
        return 4;
    }
    cp = c;
    return 0;
}

} // namespace detail

// Delimiter table: (um) filler, [oh] particle, #Sentosa# proper noun,
// !aiya! interjection, <Speaker1>: speaker tag. CJK codepoint runs
// become cjk_run tokens; everything else is a plain word.
inline std::vector<annotated_token> parse_transcript(const std::string & raw) {
    std::vector<annotated_token> out;
    size_t i = 0;
    const size_t n = raw.size();

    auto read_until = [&](char close, token_kind kind, const char * name) {
        size_t start = i;
        ++i;  // opening delimiter
        size_t end = raw.find(close, i);
        if (end == std::string::npos)
            throw parse_error(std::string("unbalanced ") + name, start);
        out.push_back({kind, raw.substr(i, end - i)});
        i = end + 1;
    };

    while (i < n) {
        char c = raw[i];
        if (c == ' ' || c == '\t') { ++i; continue; }
        if (c == '(') { read_until(')', token_kind::filler, "'('"); continue; }
        if (c == '[') { read_until(']', token_kind::particle, "'['"); continue; }
        if (c == '#') { read_until('#', token_kind::proper_noun, "'#'"); continue; }
        if (c == '!') { read_until('!', token_kind::interjection, "'!'"); continue; }
        if (c == ')' || c == ']')
            throw parse_error(std::string("unmatched '") + c + "'", i);
        if (c == '<') {
            size_t start = i;
            size_t gt = raw.find('>', i);
            if (gt == std::string::npos || gt + 1 >= n || raw[gt + 1] != ':')
                throw parse_error("malformed speaker tag", start);
            out.push_back({token_kind::speaker_tag, raw.substr(i + 1, gt - i - 1)});
            i = gt + 2;
            continue;
        }
        uint32_t cp = 0;
        int adv = detail::utf8_decode(raw, i, cp);
        if (adv == 0) throw parse_error("invalid UTF-8 byte", i);
        if (detail::is_cjk(cp)) {
            std::string run;
            while (i < n) {
                adv = detail::utf8_decode(raw, i, cp);
                if (adv == 0 || !detail::is_cjk(cp)) break;
                run += raw.substr(i, (size_t)adv);
                i += (size_t)adv;
            }
            out.push_back({token_kind::cjk_run, run});
            continue;
        }
        // plain word: up to whitespace or a delimiter
        size_t start = i;
        while (i < n) {
            char w = raw[i];
            if (w == ' ' || w == '\t' || w == '(' || w == '[' || w == '#' || w == '!' ||
                w == '<' || w == ')' || w == ']')
                break;
            uint32_t wc = 0;
            int wadv = detail::utf8_decode(raw, i, wc);
            if (wadv == 0) throw parse_error("invalid UTF-8 byte", i);
            if (detail::is_cjk(wc)) break;
            i += (size_t)wadv;
        }
        out.push_back({token_kind::word, raw.substr(start, i - start)});
    }
    return out;
}

// Render the ASR target. Delimiters are preserved (reference responses
// keep the orthographic convention); speaker tags are dropped at
// sentence level.
enum class level_kind { sentence, dialogue };

inline std::string normalize_for_target(const std::vector<annotated_token> & tokens,
                                        level_kind level) {
    std::string out;
    for (const auto & t : tokens) {
        std::string piece;
        switch (t.kind) {
            case token_kind::word:         piece = t.surface; break;
            case token_kind::filler:       piece = "(" + t.surface + ")"; break;
            case token_kind::particle:     piece = "[" + t.surface + "]"; break;
            case token_kind::proper_noun:  piece = "#" + t.surface + "#"; break;
            case token_kind::interjection: piece = "!" + t.surface + "!"; break;
            case token_kind::cjk_run:      piece = t.surface; break;
            case token_kind::speaker_tag:
                if (level == level_kind::sentence) continue;
                piece = "<" + t.surface + ">:";
                break;
        }
        if (!out.empty()) out += " ";
        out += piece;
    }
    return out;
}

// ---- dialogue chunks ----

struct utterance_segment {
    std::string speaker_id;
    double start = 0, end = 0;   // seconds, chunk-relative after merging
    std::string raw_text;
    std::string channel_ref;
};

struct speaker_info {
    std::string gender;   // "male" / "female"
    std::string accent;   // e.g. "Chinese", "Malay", "Indian"
};

struct dialogue_chunk {
    std::string chunk_id;
    audio_clip audio;            // merged, single channel
    std::vector<utterance_segment> segments;
    double duration = 0;
    int part = 3;
    std::map<std::string, speaker_info> speakers;
};

struct merge_report {
    std::vector<std::string> dropped;   // human-readable exclusion reasons
};

// Sum the aligned channels into one signal (peak-renormalized),
// interleave segments by start time and greedily pack them into chunks
// whose span stays within max_dur. Segments are never split; chunks
// with overlapping or inconsistent timestamps are dropped.
inline std::vector<dialogue_chunk> merge_channels(
        const std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> & per_speaker,
        const std::string & session_id,
        const std::map<std::string, speaker_info> & metadata,
        double max_dur = 30.0,
        merge_report * report = nullptr) {
    if (per_speaker.empty()) return {};

    auto drop = [&](const std::string & why) {
        if (report) report->dropped.push_back(session_id + ": " + why);
    };

    // common rate, then sample-wise sum
    int rate = per_speaker[0].first.sample_rate;
    size_t max_len = 0;
    std::vector<audio_clip> clips;
    for (const auto & [clip, segs] : per_speaker) {
        clips.push_back(clip.sample_rate == rate ? clip : resample(clip, rate));
        max_len = std::max(max_len, clips.back().samples.size());
    }
    std::vector<double> mixed(max_len, 0.0);
    for (const auto & c : clips)
        for (size_t i = 0; i < c.samples.size(); ++i) mixed[i] += c.samples[i];
    double peak = 0;
    for (double v : mixed) peak = std::max(peak, std::abs(v));
    if (peak > 1.0)
        for (double & v : mixed) v /= peak;

    // interleave all segments by start time
    std::vector<utterance_segment> all;
    for (const auto & [clip, segs] : per_speaker)
        for (const auto & s : segs) {
            if (s.end <= s.start) {
                drop("segment with non-positive span for " + s.speaker_id);
                continue;
            }
            if (s.end - s.start > max_dur) {
                drop("segment longer than " + std::to_string(max_dur) + " s for " + s.speaker_id);
                continue;
            }
            all.push_back(s);
        }
    std::stable_sort(all.begin(), all.end(),
                     [](const auto & a, const auto & b) { return a.start < b.start; });

    // greedy first-fit packing in time order
    std::vector<std::vector<utterance_segment>> groups;
    for (const auto & s : all) {
        if (!groups.empty() && s.end - groups.back().front().start <= max_dur)
            groups.back().push_back(s);
        else
            groups.push_back({s});
    }

    std::vector<dialogue_chunk> chunks;
    int idx = 0;
    for (auto & g : groups) {
        bool ok = true;
        for (size_t i = 1; i < g.size(); ++i)
            if (g[i].start < g[i - 1].end) { ok = false; break; }
        std::string cid = session_id + "_chunk" + std::to_string(idx++);
        if (!ok) {
            drop("overlapping segments in " + cid);
            continue;
        }
        dialogue_chunk ch;
        ch.chunk_id = cid;
        double t0 = g.front().start, t1 = g.back().end;
        ch.duration = t1 - t0;
        size_t s0 = (size_t)std::llround(t0 * rate);
        size_t s1 = std::min(mixed.size(), (size_t)std::llround(t1 * rate));
        ch.audio.sample_rate = rate;
        ch.audio.source_id = cid;
        if (s0 < s1) ch.audio.samples.assign(mixed.begin() + s0, mixed.begin() + s1);
        for (auto s : g) {
            s.start -= t0;
            s.end -= t0;
            ch.segments.push_back(s);
            auto it = metadata.find(s.speaker_id);
            if (it != metadata.end()) ch.speakers[s.speaker_id] = it->second;
        }
        chunks.push_back(std::move(ch));
    }
    return chunks;
}

// ---- task records and manifests ----

struct task_record {
    std::string task;          // ASR / SQA / SDS / PQA
    std::string audio_ref;
    std::string instruction;
    std::string target;
    std::string level;         // sentence / dialogue
    int part = 1;
    std::string split;         // train / test

    bool operator==(const task_record & o) const {
        return task == o.task && audio_ref == o.audio_ref && instruction == o.instruction &&
               target == o.target && level == o.level && part == o.part && split == o.split;
    }
};

inline nlohmann::json record_to_json(const task_record & r) {
    return {{"task", r.task}, {"audio_ref", r.audio_ref}, {"instruction", r.instruction},
            {"target", r.target}, {"level", r.level}, {"part", r.part}, {"split", r.split}};
}

inline task_record record_from_json(const nlohmann::json & j) {
    task_record r;
    r.task = j.at("task").get<std::string>();
    r.audio_ref = j.at("audio_ref").get<std::string>();
    r.instruction = j.at("instruction").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.level = j.at("level").get<std::string>();
    r.part = j.at("part").get<int>();
    r.split = j.at("split").get<std::string>();
    return r;
}

struct manifest {
    std::vector<task_record> records;
    std::string split;

    void write_jsonl(const std::string & path) const {
        std::ofstream out(path);
        if (!out) throw format_error("manifest: cannot write " + path);
        for (const auto & r : records) out << record_to_json(r).dump() << "\n";
    }

    static manifest read_jsonl(const std::string & path) {
        std::ifstream in(path);
        if (!in) throw format_error("manifest: cannot open " + path);
        manifest m;
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            m.records.push_back(record_from_json(nlohmann::json::parse(line)));
        }
        if (!m.records.empty()) m.split = m.records.front().split;
        return m;
    }
};

// ---- PQA ----

inline const std::vector<std::string> & ordinal_words() {
    static const std::vector<std::string> v = {"first", "second", "third", "fourth",
                                               "fifth", "sixth"};
    return v;
}

// one canonical target phrasing per label; scoring extracts labels
// rather than matching the exact string
namespace detail {

inline std::string join_speaker_phrases(const std::vector<std::string> & phrases) {
    std::string out;
    for (size_t i = 0; i < phrases.size(); ++i) {
        if (i) out += (i + 1 == phrases.size()) ? ", and " : ", ";
        out += (i == 0) ? phrases[i] : (char)std::tolower(phrases[i][0]) + phrases[i].substr(1);
    }
    return out + ".";
}

} // namespace detail

inline std::string pqa_gender_target(const std::vector<std::string> & genders) {
    if (genders.size() == 1) return "The speaker is " + genders[0] + ".";
    std::vector<std::string> phrases;
    for (size_t i = 0; i < genders.size(); ++i)
        phrases.push_back("The " + ordinal_words()[i] + " speaker is " + genders[i]);
    return detail::join_speaker_phrases(phrases);
}

inline std::string pqa_accent_target(const std::vector<std::string> & accents) {
    if (accents.size() == 1) return "The speaker has a " + accents[0] + " accent.";
    std::vector<std::string> phrases;
    for (size_t i = 0; i < accents.size(); ++i)
        phrases.push_back("The " + ordinal_words()[i] + " speaker has a " + accents[i] + " accent");
    return detail::join_speaker_phrases(phrases);
}

struct pqa_question_bank {
    std::string gender_sentence = "How would you describe the speaker's gender in this clip?";
    std::string gender_dialogue = "What are the genders of the speakers in the dialogue?";
    std::string accent_sentence = "What can you tell about the speaker's accent?";
    std::string accent_dialogue = "How would you describe the accents of the speakers?";
};

// sentence-level item: one clip, one speaker
struct sentence_item {
    std::string audio_ref;
    std::string speaker_id;
    std::string raw_text;
    int part = 1;
    double duration = 0;
};

inline std::vector<task_record> make_pqa_records(
        const std::vector<sentence_item> & sentences,
        const std::vector<dialogue_chunk> & chunks,
        const std::map<std::string, speaker_info> & metadata,
        std::vector<std::string> * skipped = nullptr) {
    pqa_question_bank bank;
    std::vector<task_record> out;

    for (const auto & s : sentences) {
        auto it = metadata.find(s.speaker_id);
        if (it == metadata.end() || it->second.gender.empty() || it->second.accent.empty()) {
            if (skipped) skipped->push_back(s.audio_ref + ": missing metadata for " + s.speaker_id);
            continue;
        }
        out.push_back({"PQA", s.audio_ref, bank.gender_sentence,
                       pqa_gender_target({it->second.gender}), "sentence", s.part, ""});
        out.push_back({"PQA", s.audio_ref, bank.accent_sentence,
                       pqa_accent_target({it->second.accent}), "sentence", s.part, ""});
    }

    for (const auto & ch : chunks) {
        // speakers in order of first appearance
        std::vector<std::string> order;
        for (const auto & seg : ch.segments)
            if (std::find(order.begin(), order.end(), seg.speaker_id) == order.end())
                order.push_back(seg.speaker_id);
        std::vector<std::string> genders, accents;
        bool complete = true;
        for (const auto & sp : order) {
            auto it = metadata.find(sp);
            if (it == metadata.end() || it->second.gender.empty() || it->second.accent.empty()) {
                complete = false;
                break;
            }
            genders.push_back(it->second.gender);
            accents.push_back(it->second.accent);
        }
        if (!complete || order.empty() || order.size() > ordinal_words().size()) {
            if (skipped) skipped->push_back(ch.chunk_id + ": missing speaker metadata");
            continue;
        }
        out.push_back({"PQA", ch.chunk_id, bank.gender_dialogue,
                       pqa_gender_target(genders), "dialogue", ch.part, ""});
        out.push_back({"PQA", ch.chunk_id, bank.accent_dialogue,
                       pqa_accent_target(accents), "dialogue", ch.part, ""});
    }
    return out;
}

// ---- SQA / SDS synthesis ----

class text_generator {
  public:
    virtual ~text_generator() = default;
    // returns generated text, or nullopt on failure
    virtual std::optional<std::string> generate(const std::string & prompt, int max_tokens) = 0;
};

// lowercase alphanumeric words minus stopwords; CJK chars count one each
inline std::vector<std::string> content_words(const std::string & text) {
    static const std::set<std::string> stop = {
        "a", "an", "the", "is", "are", "was", "were", "be", "and", "or", "of", "to",
        "in", "on", "at", "it", "do", "not", "this", "that", "i", "you", "we", "they",
        "he", "she", "so", "then", "for", "with", "have", "has"};
    std::vector<std::string> out;
    std::string cur;
    size_t i = 0;
    auto flush = [&]() {
        if (!cur.empty() && !stop.count(cur)) out.push_back(cur);
        cur.clear();
    };
    while (i < text.size()) {
        uint32_t cp = 0;
        int adv = detail::utf8_decode(text, i, cp);
        if (adv <= 0) { ++i; continue; }
        if (detail::is_cjk(cp)) {
            flush();
            out.push_back(text.substr(i, (size_t)adv));
        } else if (cp < 128 && std::isalnum((int)cp)) {
            cur += (char)std::tolower((int)cp);
        } else {
            flush();
        }
        i += (size_t)adv;
    }
    flush();
    return out;
}

inline double content_overlap(const std::string & answer, const std::string & transcript) {
    auto aw = content_words(answer);
    if (aw.empty()) return 0.0;
    auto tw = content_words(transcript);
    std::set<std::string> tset(tw.begin(), tw.end());
    size_t hit = 0;
    for (const auto & w : aw)
        if (tset.count(w)) ++hit;
    return (double)hit / (double)aw.size();
}

// Deterministic local generator used by --stub runs and tests: answers
// are extractive, so they always pass the overlap validator.
class stub_generator : public text_generator {
  public:
    std::optional<std::string> generate(const std::string & prompt, int /*max_tokens*/) override {
        std::string transcript;
        size_t pos = prompt.find("Transcript:");
        if (pos != std::string::npos) transcript = trim(prompt.substr(pos + 11));
        auto words = content_words(transcript);
        std::string head;
        for (size_t i = 0; i < words.size() && i < 8; ++i) {
            if (i) head += " ";
            head += words[i];
        }
        if (prompt.find("question") != std::string::npos)
            return "Q: What is mentioned in the dialogue?\nA: The dialogue mentions " + head + ".";
        return "The speakers discuss " + head + ".";
    }
};

struct synth_config {
    double overlap_threshold = 0.2;
    int max_tokens = 128;
    int retries = 1;
};

struct qa_pair {
    std::string question, answer;
};

inline std::optional<qa_pair> parse_qa_output(const std::string & text) {
    size_t q = text.find("Q:");
    size_t a = text.find("A:", q == std::string::npos ? 0 : q);
    if (q == std::string::npos || a == std::string::npos || a <= q) return std::nullopt;
    qa_pair p;
    p.question = trim(text.substr(q + 2, a - q - 2));
    p.answer = trim(text.substr(a + 2));
    if (p.question.empty() || p.answer.empty()) return std::nullopt;
    return p;
}

inline std::vector<task_record> synthesize_qa_and_summary(
        const std::vector<std::pair<std::string, std::string>> & chunk_transcripts, // (chunk_id, text)
        text_generator & gen, const synth_config & cfg,
        int part = 3, std::vector<std::string> * discarded = nullptr) {
    std::vector<task_record> out;
    auto log_discard = [&](const std::string & why) {
        if (discarded) discarded->push_back(why);
    };
    for (const auto & [chunk_id, transcript] : chunk_transcripts) {
        // one QA pair
        std::string qa_prompt =
            "Write one question and answer pair about this conversation, formatted as "
            "'Q: ...' then 'A: ...'.\nTranscript: " + transcript;
        std::optional<qa_pair> qa;
        for (int attempt = 0; attempt <= cfg.retries && !qa; ++attempt) {
            auto text = gen.generate(qa_prompt, cfg.max_tokens);
            if (text) qa = parse_qa_output(*text);
        }
        if (!qa) {
            log_discard(chunk_id + ": malformed QA output");
        } else if (content_overlap(qa->answer, transcript) < cfg.overlap_threshold) {
            log_discard(chunk_id + ": QA answer fails overlap check");
        } else {
            out.push_back({"SQA", chunk_id, qa->question, qa->answer, "dialogue", part, ""});
        }

        // one summary
        std::string sum_prompt =
            "Summarize the key points of this conversation in one or two sentences.\n"
            "Transcript: " + transcript;
        std::optional<std::string> summary;
        for (int attempt = 0; attempt <= cfg.retries && !summary; ++attempt)
            summary = gen.generate(sum_prompt, cfg.max_tokens);
        if (!summary || trim(*summary).empty()) {
            log_discard(chunk_id + ": empty summary output");
        } else if (content_overlap(*summary, transcript) < cfg.overlap_threshold) {
            log_discard(chunk_id + ": summary fails overlap check");
        } else {
            out.push_back({"SDS", chunk_id,
                           "Generate a summary that distills the dialogue into its most "
                           "important discussions and decisions.",
                           trim(*summary), "dialogue", part, ""});
        }
    }
    return out;
}

// ---- splitting ----

struct split_policy {
    double test_fraction = 0.2;
    // optional per-task test-size floors (e.g. SQA -> 100); error if unmet
    std::map<std::string, int> required_test_size;
};

// Deterministic speaker-disjoint split. Speakers that co-occur in any
// record form one group and always land on the same side.
inline std::pair<manifest, manifest> build_manifest(
        const std::vector<task_record> & records,
        const std::map<std::string, std::vector<std::string>> & speakers_of_ref,
        const split_policy & policy, uint64_t seed) {
    if (records.empty()) throw config_error("build_manifest: no records");

    // union-find over speakers
    std::map<std::string, std::string> parent;
    std::function<std::string(const std::string &)> find = [&](const std::string & x) {
        auto it = parent.find(x);
        if (it == parent.end()) { parent[x] = x; return x; }
        if (it->second == x) return x;
        std::string root = find(it->second);
        parent[x] = root;
        return root;
    };
    auto unite = [&](const std::string & a, const std::string & b) {
        std::string ra = find(a), rb = find(b);
        if (ra != rb) parent[ra] = rb;
    };
    for (const auto & [ref, sps] : speakers_of_ref)
        for (size_t i = 1; i < sps.size(); ++i) unite(sps[0], sps[i]);
    for (const auto & [ref, sps] : speakers_of_ref)
        for (const auto & s : sps) find(s);

    std::vector<std::string> groups;
    for (const auto & [sp, p] : parent) {
        std::string root = find(sp);
        if (std::find(groups.begin(), groups.end(), root) == groups.end())
            groups.push_back(root);
    }
    std::sort(groups.begin(), groups.end());
    rng r(seed);
    for (size_t i = groups.size(); i > 1; --i)
        std::swap(groups[i - 1], groups[r.uniform_int(i)]);

    size_t n_test = (size_t)std::llround(policy.test_fraction * (double)groups.size());
    if (policy.test_fraction > 0.0 && n_test == 0 && groups.size() > 1) n_test = 1;
    std::set<std::string> test_groups(groups.begin(), groups.begin() + (std::ptrdiff_t)n_test);

    manifest train, test;
    train.split = "train";
    test.split = "test";
    for (auto rec : records) {
        auto it = speakers_of_ref.find(rec.audio_ref);
        if (it == speakers_of_ref.end() || it->second.empty())
            throw config_error("build_manifest: no speakers known for " + rec.audio_ref);
        bool is_test = test_groups.count(find(it->second[0])) > 0;
        rec.split = is_test ? "test" : "train";
        (is_test ? test : train).records.push_back(std::move(rec));
    }

    for (const auto & [task, need] : policy.required_test_size) {
        int have = 0;
        for (const auto & rec : test.records)
            if (rec.task == task) ++have;
        if (have < need)
            throw config_error("build_manifest: task " + task + " test split has " +
                               std::to_string(have) + " records, " + std::to_string(need) +
                               " required (shortfall " + std::to_string(need - have) + ")");
    }
    return {train, test};
}

} // namespace singfuse
