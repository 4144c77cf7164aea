#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "singfuse/eval.hpp"

using namespace singfuse;

namespace {

// exhaustive minimum-edit-distance oracle (exponential, fine for tiny inputs)
int edit_distance_oracle(const std::vector<std::string> & ref,
                         const std::vector<std::string> & hyp, size_t i = 0, size_t j = 0) {
    if (i == ref.size()) return (int)(hyp.size() - j);
    if (j == hyp.size()) return (int)(ref.size() - i);
    int best = edit_distance_oracle(ref, hyp, i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
    best = std::min(best, edit_distance_oracle(ref, hyp, i + 1, j) + 1);
    best = std::min(best, edit_distance_oracle(ref, hyp, i, j + 1) + 1);
    return best;
}

std::vector<std::string> nth_sequence(int len, int idx, const std::vector<std::string> & alphabet) {
    std::vector<std::string> out;
    for (int k = 0; k < len; ++k) {
        out.push_back(alphabet[(size_t)(idx % (int)alphabet.size())]);
        idx /= (int)alphabet.size();
    }
    return out;
}

} // namespace

TEST_CASE("alignment cost matches a brute-force oracle on all short pairs") {
    const std::vector<std::string> alphabet = {"a", "b", "c"};
    for (int rl = 1; rl <= 4; ++rl) {
        int rn = 1;
        for (int k = 0; k < rl; ++k) rn *= 3;
        for (int hl = 0; hl <= 4; ++hl) {
            int hn = 1;
            for (int k = 0; k < hl; ++k) hn *= 3;
            for (int ri = 0; ri < rn; ++ri) {
                auto ref = nth_sequence(rl, ri, alphabet);
                for (int hi = 0; hi < hn; ++hi) {
                    auto hyp = nth_sequence(hl, hi, alphabet);
                    auto r = wer_align(ref, hyp);
                    int got = r.substitutions + r.insertions + r.deletions;
                    REQUIRE(got == edit_distance_oracle(ref, hyp));
                    REQUIRE(r.wer == 100.0 * got / (double)rl);
                }
            }
        }
    }
}

TEST_CASE("basic error-rate identities") {
    CHECK(wer("the cat sat", "the cat sat").wer == 0.0);
    CHECK(wer("the cat sat", "the dog sat").substitutions == 1);
    CHECK(wer("the cat sat", "the cat").deletions == 1);
    CHECK(wer("the cat", "the cat sat").insertions == 1);
    CHECK(wer("a b", "c d e f").wer == 200.0);   // can exceed 100 percent
    CHECK_THROWS_AS(wer("(um)", "anything"), config_error);   // empty normalized reference
}

TEST_CASE("swapping operands exchanges insertions and deletions") {
    std::vector<std::pair<std::string, std::string>> pairs = {
        {"the quick brown fox", "the brown fox jumps"},
        {"one two three", "one three"},
        {"a b c d", "b c"},
    };
    for (const auto & [x, y] : pairs) {
        auto f = wer(x, y);
        auto b = wer(y, x);
        CHECK(f.substitutions == b.substitutions);
        CHECK(f.insertions == b.deletions);
        CHECK(f.deletions == b.insertions);
    }
}

TEST_CASE("normalization is lenient, lowercased, and idempotent") {
    SECTION("annotation spans are dropped by default") {
        auto w = normalize_for_wer("<Speaker1>: I (um) went to #Sentosa# [lah] !wow!");
        CHECK(w == std::vector<std::string>{"i", "went", "to", "sentosa"});
    }
    SECTION("keep_fillers retains the spans as plain words") {
        wer_policy p;
        p.keep_fillers = true;
        auto w = normalize_for_wer("i (um) went [lah]", p);
        CHECK(w == std::vector<std::string>{"i", "um", "went", "lah"});
    }
    SECTION("CJK splits into one word per character") {
        auto w = normalize_for_wer("really 比较好 ok");
        CHECK(w == std::vector<std::string>{"really", "比", "较", "好", "ok"});
    }
    SECTION("punctuation and case are stripped") {
        auto w = normalize_for_wer("Hello, WORLD! it's fine.");
        CHECK(w == std::vector<std::string>{"hello", "world", "it's", "fine"});
    }
    SECTION("idempotence: renormalizing the joined output changes nothing") {
        std::vector<std::string> samples = {
            "<Speaker1>: I (um) went to #Sentosa# [lah]",
            "really 比较好 ok",
            "Hello, WORLD! it's fine.",
            "a plain sentence",
        };
        for (const auto & s : samples) {
            auto once = normalize_for_wer(s);
            std::string joined;
            for (const auto & w : once) joined += (joined.empty() ? "" : " ") + w;
            CHECK(normalize_for_wer(joined) == once);
        }
    }
}

TEST_CASE("paralinguistic answers are scored by ordered label extraction") {
    auto genders = gender_label_space();
    SECTION("paraphrase around the label still scores") {
        CHECK(score_pqa("The speaker is female.", "I think the speaker sounds female", genders) == 1);
        CHECK(score_pqa("The speaker is female.", "male", genders) == 0);
    }
    SECTION("order matters for multi-speaker answers") {
        std::string target = "The first speaker is female, and the second speaker is male.";
        CHECK(score_pqa(target, "female then male", genders) == 1);
        CHECK(score_pqa(target, "male then female", genders) == 0);
        CHECK(score_pqa(target, "female", genders) == 0);   // missing second label
    }
    SECTION("extraction sees through case and punctuation") {
        auto got = extract_labels("FEMALE, then Male!", genders);
        CHECK(got == std::vector<std::string>{"female", "male"});
    }
    SECTION("a target without any label is a format error") {
        CHECK_THROWS_AS(score_pqa("no labels here", "female", genders), format_error);
    }
    SECTION("accent space") {
        std::set<std::string> accents = {"chinese", "malay", "indian"};
        CHECK(score_pqa("The speaker has a Chinese accent.",
                        "sounds like a chinese accent to me", accents) == 1);
        CHECK(score_pqa("The speaker has a Chinese accent.", "malay", accents) == 0);
    }
}

namespace {

class scripted_judge : public text_generator {
  public:
    explicit scripted_judge(std::vector<std::optional<std::string>> replies)
        : replies_(std::move(replies)) {}
    std::optional<std::string> generate(const std::string &, int) override {
        if (next_ >= replies_.size()) return std::nullopt;
        return replies_[next_++];
    }

  private:
    std::vector<std::optional<std::string>> replies_;
    size_t next_ = 0;
};

} // namespace

TEST_CASE("judge scoring: online rubric with offline fallback") {
    SECTION("a clean integer reply rescales to [0,100]") {
        scripted_judge j({std::string("3")});
        judge_options opts;
        opts.client = &j;
        auto r = judge_score("ref", "instr", "out", opts);
        CHECK(r.score == 60.0);
        CHECK_FALSE(r.offline);
    }
    SECTION("integer embedded in prose still parses") {
        CHECK(parse_judge_integer("I would rate this 4 out of 5") == 4);
        CHECK(parse_judge_integer("Score: 5") == 5);
        CHECK_FALSE(parse_judge_integer("rating 12 is out of range").has_value());
        CHECK_FALSE(parse_judge_integer("7").has_value());
        CHECK_FALSE(parse_judge_integer("no digits").has_value());
    }
    SECTION("misbehaving judge falls back to the offline surrogate") {
        scripted_judge j({std::string("nonsense"), std::nullopt});
        judge_options opts;
        opts.client = &j;
        opts.retries = 1;
        auto r = judge_score("chicken rice lunch", "instr", "we had chicken rice", opts);
        CHECK(r.offline);
        CHECK(r.score == Catch::Approx(100.0 * 2.0 / 3.0));
    }
    SECTION("offline surrogate is content-word recall of the reference") {
        CHECK(offline_judge_score("chicken rice lunch", "chicken rice lunch") == 100.0);
        CHECK(offline_judge_score("chicken rice lunch", "nothing relevant") == 0.0);
        CHECK(offline_judge_score("chicken rice", "rice") == 50.0);
        CHECK(offline_judge_score("", "anything") == 0.0);
    }
}

namespace {

std::vector<task_record> sample_records() {
    return {
        {"PQA", "clip_a", "How would you describe the speaker's gender in this clip?",
         "The speaker is female.", "sentence", 1, "test"},
        {"SDS", "chunk_0", "Summarize.", "they discuss chicken rice", "dialogue", 3, "test"},
        {"ASR", "clip_a", "Transcribe the audio.", "hello world", "sentence", 1, "test"},
        {"ASR", "clip_b", "Transcribe the audio.", "good morning", "sentence", 2, "test"},
        {"SQA", "chunk_0", "What do they eat?", "chicken rice", "dialogue", 3, "test"},
    };
}

std::vector<model_output> sample_outputs() {
    return {
        {"clip_a", "ASR", "hello world"},
        {"clip_b", "ASR", "good evening"},
        {"chunk_0", "SQA", "chicken rice"},
        {"chunk_0", "SDS", "they discuss chicken rice"},
        {"clip_a", "PQA", "female"},
    };
}

} // namespace

TEST_CASE("report rows follow the fixed task order with direction marks") {
    eval_options opts;
    opts.model_name = "toy-model";
    opts.comparison["MNSC-ASR PART 1"] = 5.1;
    opts.comparison["MNSC-Gender-Sentence"] = 97.1;

    auto report = evaluate(sample_records(), sample_outputs(), opts);
    REQUIRE(report.rows.size() == 5);
    CHECK(report.rows[0].dataset == "MNSC-ASR PART 1");
    CHECK(report.rows[1].dataset == "MNSC-ASR PART 2");
    CHECK(report.rows[2].dataset == "MNSC-SQA PART 3");
    CHECK(report.rows[3].dataset == "MNSC-SDS PART 3");
    CHECK(report.rows[4].dataset == "MNSC-Gender-Sentence");

    CHECK(report.rows[0].metric == "wer");
    CHECK(report.rows[0].direction == "down");
    CHECK(report.rows[0].value == 0.0);
    CHECK(report.rows[1].value == 50.0);   // one substitution over two words
    CHECK(report.rows[2].metric == "judge");
    CHECK(report.rows[2].direction == "up");
    CHECK(report.rows[2].judge_offline);   // no client configured
    CHECK(report.rows[4].metric == "accuracy");
    CHECK(report.rows[4].value == 100.0);

    std::string md = report.to_markdown();
    CHECK(md.find("toy-model") != std::string::npos);
    CHECK(md.find("wer (v)") != std::string::npos);
    CHECK(md.find("judge (^)") != std::string::npos);
    // comparison values render untransformed
    CHECK(md.find("5.1") != std::string::npos);
    CHECK(md.find("97.1") != std::string::npos);
    CHECK(md.find("Reference") != std::string::npos);
    // row order in the rendered table matches the report
    CHECK(md.find("MNSC-ASR PART 1") < md.find("MNSC-SQA PART 3"));
    CHECK(md.find("MNSC-SQA PART 3") < md.find("MNSC-SDS PART 3"));
    CHECK(md.find("MNSC-SDS PART 3") < md.find("MNSC-Gender-Sentence"));

    auto j = report.to_json();
    CHECK(j["rows"].size() == 5);
    CHECK(j["rows"][0]["comparison"] == 5.1);
    CHECK_FALSE(j["rows"][1].contains("comparison"));
}

TEST_CASE("evaluation is invariant to input permutation") {
    auto recs = sample_records();
    auto outs = sample_outputs();
    auto base = evaluate(recs, outs).to_json();
    std::reverse(recs.begin(), recs.end());
    std::reverse(outs.begin(), outs.end());
    CHECK(evaluate(recs, outs).to_json() == base);
}

TEST_CASE("missing model outputs are reported by record") {
    auto recs = sample_records();
    auto outs = sample_outputs();
    outs.erase(outs.begin() + 1);   // drop clip_b/ASR
    try {
        evaluate(recs, outs);
        FAIL("expected format_error");
    } catch (const format_error & e) {
        CHECK(std::string(e.what()).find("clip_b/ASR") != std::string::npos);
    }
}
