#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "singfuse/corpus.hpp"

using namespace singfuse;

namespace {

audio_clip tone(double dur, int rate = 16000) {
    audio_clip c;
    c.sample_rate = rate;
    c.samples.resize((size_t)std::llround(dur * rate));
    for (size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] = 0.3 * std::sin(2.0 * 3.14159265358979 * 300.0 * (double)i / rate);
    return c;
}

utterance_segment seg(const std::string & spk, double start, double end,
                      const std::string & text = "hello there") {
    return {spk, start, end, text, spk + ".wav"};
}

} // namespace

TEST_CASE("annotation grammar recognizes every delimiter kind") {
    SECTION("filler") {
        auto t = parse_transcript("(um)");
        REQUIRE(t.size() == 1);
        CHECK(t[0].kind == token_kind::filler);
        CHECK(t[0].surface == "um");
    }
    SECTION("particle") {
        auto t = parse_transcript("[oh]");
        REQUIRE(t.size() == 1);
        CHECK(t[0].kind == token_kind::particle);
        CHECK(t[0].surface == "oh");
    }
    SECTION("proper noun, including an inner space") {
        auto t = parse_transcript("#Sentosa#");
        REQUIRE(t.size() == 1);
        CHECK(t[0].kind == token_kind::proper_noun);
        CHECK(t[0].surface == "Sentosa");
        auto u = parse_transcript("#Holland Village#");
        REQUIRE(u.size() == 1);
        CHECK(u[0].surface == "Holland Village");
    }
    SECTION("interjection") {
        auto t = parse_transcript("!aiya!");
        REQUIRE(t.size() == 1);
        CHECK(t[0].kind == token_kind::interjection);
        CHECK(t[0].surface == "aiya");
    }
    SECTION("speaker tag") {
        auto t = parse_transcript("<Speaker1>: hello");
        REQUIRE(t.size() == 2);
        CHECK(t[0].kind == token_kind::speaker_tag);
        CHECK(t[0].surface == "Speaker1");
        CHECK(t[1].kind == token_kind::word);
        CHECK(t[1].surface == "hello");
    }
    SECTION("CJK codepoints form a single run token") {
        auto t = parse_transcript("比较好");
        REQUIRE(t.size() == 1);
        CHECK(t[0].kind == token_kind::cjk_run);
        CHECK(t[0].surface == "比较好");
    }
    SECTION("mixed sentence") {
        auto t = parse_transcript("(um) i went to #Sentosa# [lah] 真的 !wow!");
        REQUIRE(t.size() == 8);
        CHECK(t[0].kind == token_kind::filler);
        CHECK(t[1].surface == "i");
        CHECK(t[2].surface == "went");
        CHECK(t[3].surface == "to");
        CHECK(t[4].kind == token_kind::proper_noun);
        CHECK(t[5].kind == token_kind::particle);
        CHECK(t[6].kind == token_kind::cjk_run);
        CHECK(t[6].surface == "真的");
        CHECK(t[7].kind == token_kind::interjection);
    }
    SECTION("word adjacent to a delimiter splits cleanly") {
        auto t = parse_transcript("go(um)home");
        REQUIRE(t.size() == 3);
        CHECK(t[0].surface == "go");
        CHECK(t[1].kind == token_kind::filler);
        CHECK(t[2].surface == "home");
    }
}

TEST_CASE("annotation parse errors carry byte offsets") {
    SECTION("unbalanced filler") {
        try {
            parse_transcript("so (um we go");
            FAIL("expected parse_error");
        } catch (const parse_error & e) {
            CHECK(e.offset == 3);
            CHECK(std::string(e.what()).find("at offset 3") != std::string::npos);
        }
    }
    SECTION("unmatched closer") {
        try {
            parse_transcript("hello ] there");
            FAIL("expected parse_error");
        } catch (const parse_error & e) {
            CHECK(e.offset == 6);
        }
    }
    SECTION("malformed speaker tag") {
        CHECK_THROWS_AS(parse_transcript("<Speaker1 hello"), parse_error);
        CHECK_THROWS_AS(parse_transcript("<Speaker1> hello"), parse_error);
    }
    SECTION("unbalanced proper noun and interjection") {
        CHECK_THROWS_AS(parse_transcript("#Sentosa"), parse_error);
        CHECK_THROWS_AS(parse_transcript("!aiya"), parse_error);
    }
}

TEST_CASE("normalization is a fixpoint of parse-then-render") {
    std::vector<std::string> lines = {
        "(um) i went to #Sentosa# [lah]",
        "比较好 (uh) really",
        "!wow! that one #Holland Village# [ah]",
        "plain words only here",
    };
    for (const auto & line : lines) {
        auto once = normalize_for_target(parse_transcript(line), level_kind::sentence);
        auto twice = normalize_for_target(parse_transcript(once), level_kind::sentence);
        CHECK(once == twice);
    }
}

TEST_CASE("sentence-level rendering drops speaker tags, dialogue keeps them") {
    auto toks = parse_transcript("<Speaker1>: hello (um) there");
    CHECK(normalize_for_target(toks, level_kind::sentence) == "hello (um) there");
    CHECK(normalize_for_target(toks, level_kind::dialogue) == "<Speaker1>: hello (um) there");
}

TEST_CASE("channel merging packs segments into bounded chunks") {
    std::map<std::string, speaker_info> meta{{"spk01", {"female", "Chinese"}},
                                             {"spk02", {"male", "Malay"}}};

    SECTION("three 8 s utterances spanning 28 s fit one chunk") {
        auto a = tone(28.0);
        std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
            {a, {seg("spk01", 0, 8), seg("spk01", 20, 28)}},
            {tone(28.0), {seg("spk02", 10, 18)}},
        };
        auto chunks = merge_channels(per, "s1", meta);
        REQUIRE(chunks.size() == 1);
        CHECK(chunks[0].segments.size() == 3);
        CHECK(chunks[0].duration == Catch::Approx(28.0));
        // time order preserved, chunk-relative timestamps
        CHECK(chunks[0].segments[0].speaker_id == "spk01");
        CHECK(chunks[0].segments[1].speaker_id == "spk02");
        CHECK(chunks[0].segments[1].start == Catch::Approx(10.0));
        CHECK(chunks[0].segments[2].start == Catch::Approx(20.0));
        CHECK(chunks[0].speakers.size() == 2);
        CHECK((double)chunks[0].audio.samples.size() / chunks[0].audio.sample_rate ==
              Catch::Approx(28.0).margin(1e-3));
    }

    SECTION("40 s of alternating speech splits at the 30 s boundary") {
        auto a = tone(40.0);
        std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
            {a, {seg("spk01", 0, 10), seg("spk01", 20, 30)}},
            {tone(40.0), {seg("spk02", 10, 20), seg("spk02", 30, 40)}},
        };
        auto chunks = merge_channels(per, "s2", meta);
        REQUIRE(chunks.size() == 2);
        CHECK(chunks[0].segments.size() == 3);
        CHECK(chunks[1].segments.size() == 1);
        CHECK(chunks[0].chunk_id == "s2_chunk0");
        CHECK(chunks[1].chunk_id == "s2_chunk1");
        for (const auto & ch : chunks) CHECK(ch.duration <= 30.0 + 1e-9);
    }

    SECTION("no segments means no chunks") {
        std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
            {tone(5.0), {}}};
        CHECK(merge_channels(per, "s3", meta).empty());
    }

    SECTION("a segment longer than the cap is excluded and reported") {
        merge_report rep;
        std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
            {tone(40.0), {seg("spk01", 0, 35), seg("spk01", 36, 39)}}};
        auto chunks = merge_channels(per, "s4", meta, 30.0, &rep);
        REQUIRE(chunks.size() == 1);
        CHECK(chunks[0].segments.size() == 1);
        REQUIRE(rep.dropped.size() == 1);
        CHECK(rep.dropped[0].find("longer than") != std::string::npos);
    }

    SECTION("overlapping segments drop the whole chunk") {
        merge_report rep;
        std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
            {tone(20.0), {seg("spk01", 0, 10)}},
            {tone(20.0), {seg("spk02", 5, 12)}},
        };
        auto chunks = merge_channels(per, "s5", meta, 30.0, &rep);
        CHECK(chunks.empty());
        REQUIRE(rep.dropped.size() == 1);
        CHECK(rep.dropped[0].find("overlapping") != std::string::npos);
    }

    SECTION("every produced chunk respects the duration cap (randomized)") {
        rng r(5);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<utterance_segment> segs;
            double t = 0;
            for (int k = 0; k < 12; ++k) {
                double gap = r.uniform() * 6.0;
                double dur = 1.0 + r.uniform() * 12.0;
                segs.push_back(seg("spk01", t + gap, t + gap + dur));
                t += gap + dur;
            }
            std::vector<std::pair<audio_clip, std::vector<utterance_segment>>> per = {
                {tone(t + 1.0), segs}};
            auto chunks = merge_channels(per, "rnd", meta);
            size_t kept = 0;
            for (const auto & ch : chunks) {
                CHECK(ch.duration <= 30.0 + 1e-9);
                for (size_t i = 1; i < ch.segments.size(); ++i)
                    CHECK(ch.segments[i].start >= ch.segments[i - 1].end - 1e-9);
                kept += ch.segments.size();
            }
            CHECK(kept == segs.size());
        }
    }
}

TEST_CASE("PQA targets derive from speaker metadata") {
    CHECK(pqa_gender_target({"female"}) == "The speaker is female.");
    CHECK(pqa_gender_target({"female", "male"}) ==
          "The first speaker is female, and the second speaker is male.");
    CHECK(pqa_accent_target({"Chinese"}) == "The speaker has a Chinese accent.");
    CHECK(pqa_accent_target({"Malay", "Indian"}) ==
          "The first speaker has a Malay accent, and the second speaker has a Indian accent.");

    std::map<std::string, speaker_info> meta{{"spk01", {"female", "Chinese"}},
                                             {"spk02", {"male", "Malay"}}};
    std::vector<sentence_item> sentences = {
        {"clip_a", "spk01", "hello", 1, 2.0},
        {"clip_b", "spk99", "hello", 1, 2.0},   // unknown speaker: skipped
    };
    dialogue_chunk ch;
    ch.chunk_id = "s1_chunk0";
    ch.part = 3;
    ch.segments = {seg("spk02", 0, 3), seg("spk01", 3, 6)};

    std::vector<std::string> skipped;
    auto recs = make_pqa_records(sentences, {ch}, meta, &skipped);
    REQUIRE(recs.size() == 4);   // 2 sentence-level + 2 dialogue-level
    CHECK(recs[0].task == "PQA");
    CHECK(recs[0].target == "The speaker is female.");
    CHECK(recs[1].target == "The speaker has a Chinese accent.");
    // dialogue order follows first appearance: spk02 then spk01
    CHECK(recs[2].target == "The first speaker is male, and the second speaker is female.");
    CHECK(recs[2].level == "dialogue");
    REQUIRE(skipped.size() == 1);
    CHECK(skipped[0].find("clip_b") != std::string::npos);
}

namespace {

class fixed_generator : public text_generator {
  public:
    explicit fixed_generator(std::string text) : text_(std::move(text)) {}
    std::optional<std::string> generate(const std::string &, int) override { return text_; }

  private:
    std::string text_;
};

class failing_generator : public text_generator {
  public:
    int calls = 0;
    std::optional<std::string> generate(const std::string &, int) override {
        ++calls;
        return std::nullopt;
    }
};

} // namespace

TEST_CASE("QA/summary synthesis validates output against the transcript") {
    std::vector<std::pair<std::string, std::string>> transcripts = {
        {"c0", "we should order chicken rice for lunch tomorrow"}};

    SECTION("the stub generator is extractive, so it always validates") {
        stub_generator gen;
        synth_config cfg;
        std::vector<std::string> discarded;
        auto recs = synthesize_qa_and_summary(transcripts, gen, cfg, 3, &discarded);
        REQUIRE(recs.size() == 2);
        CHECK(recs[0].task == "SQA");
        CHECK(recs[1].task == "SDS");
        CHECK(recs[0].audio_ref == "c0");
        CHECK(discarded.empty());
        CHECK(recs[0].target.find("chicken") != std::string::npos);
    }

    SECTION("zero threshold accepts unrelated answers") {
        fixed_generator gen("Q: why?\nA: completely unrelated reply");
        synth_config cfg;
        cfg.overlap_threshold = 0.0;
        auto recs = synthesize_qa_and_summary(transcripts, gen, cfg);
        REQUIRE(recs.size() == 2);
    }

    SECTION("threshold 1.0 rejects answers with any novel content word") {
        fixed_generator gen("Q: what food?\nA: chicken rice pizza");
        synth_config cfg;
        cfg.overlap_threshold = 1.0;
        std::vector<std::string> discarded;
        auto recs = synthesize_qa_and_summary(transcripts, gen, cfg, 3, &discarded);
        CHECK(recs.empty());
        REQUIRE(discarded.size() == 2);
        CHECK(discarded[0].find("overlap") != std::string::npos);
    }

    SECTION("generator failure is retried, then discarded") {
        failing_generator gen;
        synth_config cfg;
        cfg.retries = 2;
        std::vector<std::string> discarded;
        auto recs = synthesize_qa_and_summary(transcripts, gen, cfg, 3, &discarded);
        CHECK(recs.empty());
        CHECK(discarded.size() == 2);
        CHECK(gen.calls == 6);   // 3 attempts for QA + 3 for the summary
    }

    SECTION("malformed QA output is rejected by the parser") {
        CHECK_FALSE(parse_qa_output("no markers at all").has_value());
        CHECK_FALSE(parse_qa_output("A: answer before Q: question").has_value());
        CHECK_FALSE(parse_qa_output("Q: \nA: ").has_value());
        auto qa = parse_qa_output("Q: what?\nA: rice");
        REQUIRE(qa.has_value());
        CHECK(qa->question == "what?");
        CHECK(qa->answer == "rice");
    }
}

TEST_CASE("manifest JSONL round-trips exactly") {
    namespace fs = std::filesystem;
    manifest m;
    m.split = "train";
    m.records.push_back({"ASR", "clip_0", "Transcribe the audio.", "hello (um) 比较好",
                         "sentence", 1, "train"});
    m.records.push_back({"SQA", "s1_chunk0", "What did they order?", "chicken rice",
                         "dialogue", 3, "train"});
    auto path = fs::temp_directory_path() / "singfuse_manifest_test.jsonl";
    m.write_jsonl(path.string());
    auto back = manifest::read_jsonl(path.string());
    REQUIRE(back.records.size() == 2);
    CHECK(back.split == "train");
    CHECK(back.records[0] == m.records[0]);
    CHECK(back.records[1] == m.records[1]);
    fs::remove(path);
}

TEST_CASE("manifest splitting is speaker-disjoint and deterministic") {
    // 12 speakers; refs r0..r11 single-speaker, plus two dialogue refs
    // that tie speaker pairs together
    std::vector<task_record> records;
    std::map<std::string, std::vector<std::string>> speakers_of;
    for (int i = 0; i < 12; ++i) {
        std::string ref = "r" + std::to_string(i);
        std::string spk = "spk" + std::to_string(i);
        records.push_back({"ASR", ref, "Transcribe the audio.", "text", "sentence", 1, ""});
        speakers_of[ref] = {spk};
    }
    records.push_back({"SQA", "d0", "q", "a", "dialogue", 3, ""});
    speakers_of["d0"] = {"spk0", "spk1"};
    records.push_back({"SQA", "d1", "q", "a", "dialogue", 3, ""});
    speakers_of["d1"] = {"spk2", "spk3"};

    split_policy pol;
    pol.test_fraction = 0.3;

    auto [train, test] = build_manifest(records, speakers_of, pol, 13);
    CHECK(train.records.size() + test.records.size() == records.size());
    CHECK_FALSE(test.records.empty());
    CHECK_FALSE(train.records.empty());

    // no speaker may appear on both sides
    auto speakers_in = [&](const manifest & m) {
        std::set<std::string> s;
        for (const auto & rec : m.records)
            for (const auto & sp : speakers_of.at(rec.audio_ref)) s.insert(sp);
        return s;
    };
    auto tr = speakers_in(train), te = speakers_in(test);
    for (const auto & sp : te) CHECK(tr.count(sp) == 0);

    // split flags were stamped
    for (const auto & rec : train.records) CHECK(rec.split == "train");
    for (const auto & rec : test.records) CHECK(rec.split == "test");

    // co-occurring speakers land together
    auto side_of = [&](const std::string & sp) {
        if (tr.count(sp)) return 0;
        if (te.count(sp)) return 1;
        return -1;
    };
    CHECK(side_of("spk0") == side_of("spk1"));
    CHECK(side_of("spk2") == side_of("spk3"));

    SECTION("same seed reproduces the same split") {
        auto [train2, test2] = build_manifest(records, speakers_of, pol, 13);
        CHECK(train2.records == train.records);
        CHECK(test2.records == test.records);
    }

    SECTION("zero test fraction puts everything into train") {
        split_policy zero;
        zero.test_fraction = 0.0;
        auto [tr0, te0] = build_manifest(records, speakers_of, zero, 13);
        CHECK(te0.records.empty());
        CHECK(tr0.records.size() == records.size());
    }

    SECTION("unmet per-task floor raises a shortfall error") {
        split_policy strict = pol;
        strict.required_test_size["SDS"] = 5;
        try {
            build_manifest(records, speakers_of, strict, 13);
            FAIL("expected config_error");
        } catch (const config_error & e) {
            CHECK(std::string(e.what()).find("shortfall") != std::string::npos);
        }
    }

    SECTION("a record with no known speakers is an error") {
        auto bad = records;
        bad.push_back({"ASR", "mystery", "t", "t", "sentence", 1, ""});
        CHECK_THROWS_AS(build_manifest(bad, speakers_of, pol, 13), config_error);
    }

    SECTION("no records is an error") {
        CHECK_THROWS_AS(build_manifest({}, speakers_of, pol, 13), config_error);
    }
}
