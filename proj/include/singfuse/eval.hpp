#pragma once

// Scoring: WER over normalized word lists, label accuracy for
// paralinguistic questions, judge scores (online rubric or offline
// content-word recall), and Table-shaped reports.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "singfuse/corpus.hpp"

namespace singfuse {

// ---- normalization ----

struct wer_policy {
    bool lowercase = true;
    bool keep_fillers = false;   // when true, filler/particle/interjection surfaces stay as words
    bool cjk_per_char = true;

    uint64_t hash() const {
        return (lowercase ? 1u : 0u) | (keep_fillers ? 2u : 0u) | (cjk_per_char ? 4u : 0u);
    }
};

// Lenient annotation-aware normalization (model outputs are not
// guaranteed to parse under the strict grammar): speaker tags removed,
// filler/particle/interjection spans dropped by default, '#' marks
// stripped with their content kept, punctuation stripped, CJK split
// per character.
inline std::vector<std::string> normalize_for_wer(const std::string & text,
                                                  const wer_policy & policy = {}) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
    };

    const size_t n = text.size();
    size_t i = 0;
    while (i < n) {
        char c = text[i];
        if (c == '<') {
            // speaker tag "<...>:" (with or without the colon)
            size_t gt = text.find('>', i);
            if (gt != std::string::npos) {
                flush();
                i = gt + 1;
                if (i < n && text[i] == ':') ++i;
                continue;
            }
            ++i;
            continue;
        }
        if (c == '(' || c == '[') {
            char close = (c == '(') ? ')' : ']';
            size_t end = text.find(close, i + 1);
            if (end != std::string::npos) {
                if (policy.keep_fillers) {
                    auto inner = normalize_for_wer(text.substr(i + 1, end - i - 1), policy);
                    flush();
                    words.insert(words.end(), inner.begin(), inner.end());
                } else {
                    flush();
                }
                i = end + 1;
                continue;
            }
            ++i;
            continue;
        }
        if (c == '!') {
            // interjection only when the closing '!' arrives before whitespace
            size_t end = text.find('!', i + 1);
            size_t ws = text.find_first_of(" \t\n", i + 1);
            if (end != std::string::npos && (ws == std::string::npos || end < ws)) {
                if (policy.keep_fillers) {
                    auto inner = normalize_for_wer(text.substr(i + 1, end - i - 1), policy);
                    flush();
                    words.insert(words.end(), inner.begin(), inner.end());
                } else {
                    flush();
                }
                i = end + 1;
                continue;
            }
            flush();
            ++i;
            continue;
        }
        uint32_t cp = 0;
        int adv = detail::utf8_decode(text, i, cp);
        if (adv <= 0) { ++i; continue; }
        if (policy.cjk_per_char && detail::is_cjk(cp)) {
            flush();
            words.push_back(text.substr(i, (size_t)adv));
            i += (size_t)adv;
            continue;
        }
        if (cp < 128) {
            if (std::isalnum((int)cp) || c == '\'') {
                cur += policy.lowercase ? (char)std::tolower((int)cp) : c;
            } else {
                flush();
            }
            ++i;
            continue;
        }
        // other non-ASCII codepoints pass through inside the current word
        cur += text.substr(i, (size_t)adv);
        i += (size_t)adv;
    }
    flush();
    return words;
}

// ---- WER ----

struct wer_result {
    int substitutions = 0, insertions = 0, deletions = 0;
    int reference_words = 0;
    double wer = 0.0;   // percent
};

// Levenshtein alignment with unit costs. Ties prefer the diagonal
// (substitution/match), which keeps S symmetric under swapping the
// operands; I and D then exchange exactly.
inline wer_result wer_align(const std::vector<std::string> & ref,
                            const std::vector<std::string> & hyp) {
    if (ref.empty()) throw config_error("wer: empty normalized reference (undefined WER)");
    const size_t m = ref.size(), n = hyp.size();
    // dist plus, among optimal paths, the max number of diagonal moves
    std::vector<std::vector<int>> dist(m + 1, std::vector<int>(n + 1, 0));
    std::vector<std::vector<int>> diag(m + 1, std::vector<int>(n + 1, 0));
    for (size_t i = 1; i <= m; ++i) dist[i][0] = (int)i;
    for (size_t j = 1; j <= n; ++j) dist[0][j] = (int)j;
    for (size_t i = 1; i <= m; ++i) {
        for (size_t j = 1; j <= n; ++j) {
            int sub_cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
            int d_diag = dist[i - 1][j - 1] + sub_cost;
            int d_del = dist[i - 1][j] + 1;
            int d_ins = dist[i][j - 1] + 1;
            int best = std::min({d_diag, d_del, d_ins});
            int best_diag = -1;
            if (d_diag == best) best_diag = diag[i - 1][j - 1] + 1;
            if (d_ins == best) best_diag = std::max(best_diag, diag[i][j - 1]);
            if (d_del == best) best_diag = std::max(best_diag, diag[i - 1][j]);
            dist[i][j] = best;
            diag[i][j] = best_diag;
        }
    }
    // backtrace following the same (dist, diag) preference
    wer_result r;
    r.reference_words = (int)m;
    size_t i = m, j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            int sub_cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
            if (dist[i][j] == dist[i - 1][j - 1] + sub_cost &&
                diag[i][j] == diag[i - 1][j - 1] + 1) {
                if (sub_cost) ++r.substitutions;
                --i; --j;
                continue;
            }
        }
        if (j > 0 && dist[i][j] == dist[i][j - 1] + 1 && diag[i][j] == diag[i][j - 1]) {
            ++r.insertions;
            --j;
            continue;
        }
        ++r.deletions;
        --i;
    }
    r.wer = 100.0 * (r.substitutions + r.insertions + r.deletions) / (double)m;
    return r;
}

inline wer_result wer(const std::string & reference, const std::string & hypothesis,
                      const wer_policy & policy = {}) {
    return wer_align(normalize_for_wer(reference, policy), normalize_for_wer(hypothesis, policy));
}

// ---- PQA scoring ----

// ordered label extraction: gender words / accent names appearing in
// the text, robust to paraphrase around them
inline std::vector<std::string> extract_labels(const std::string & text,
                                               const std::set<std::string> & label_space) {
    std::vector<std::string> found;
    for (const auto & w : normalize_for_wer(text))
        if (label_space.count(w)) found.push_back(w);
    return found;
}

// 1 iff the ordered labels in the output match the target's; the target
// must itself parse into at least one label
inline int score_pqa(const std::string & target, const std::string & output,
                     const std::set<std::string> & label_space) {
    auto want = extract_labels(target, label_space);
    if (want.empty())
        throw format_error("score_pqa: target carries no label from the closed space: " + target);
    auto got = extract_labels(output, label_space);
    return got == want ? 1 : 0;
}

inline std::set<std::string> gender_label_space() { return {"male", "female"}; }

// ---- judge ----

struct judge_options {
    text_generator * client = nullptr;   // null -> offline surrogate
    int retries = 1;
};

// offline deterministic surrogate: content-word recall of the reference
inline double offline_judge_score(const std::string & reference, const std::string & output) {
    auto rw = content_words(reference);
    if (rw.empty()) return 0.0;
    auto ow = content_words(output);
    std::set<std::string> oset(ow.begin(), ow.end());
    size_t hit = 0;
    for (const auto & w : rw)
        if (oset.count(w)) ++hit;
    return 100.0 * (double)hit / (double)rw.size();
}

// first standalone digit run with value in [0, 5]
inline std::optional<int> parse_judge_integer(const std::string & text) {
    size_t i = 0;
    while (i < text.size()) {
        if (!std::isdigit((unsigned char)text[i])) { ++i; continue; }
        size_t j = i;
        while (j < text.size() && std::isdigit((unsigned char)text[j])) ++j;
        if (j - i == 1) {
            int v = text[i] - '0';
            if (v <= 5) return v;
        }
        i = j;
    }
    return std::nullopt;
}

// rubric v1: integer 0-5, rescaled to [0,100]; falls back to the
// offline surrogate when the judge misbehaves (flagged by the caller
// via the returned source marker)
struct judge_score_result {
    double score = 0.0;
    bool offline = false;
};

inline judge_score_result judge_score(const std::string & reference, const std::string & instruction,
                                      const std::string & output, const judge_options & opts = {}) {
    if (opts.client) {
        std::string prompt =
            "You are grading a spoken-language answer. Rate how well the model output matches "
            "the reference for the given instruction on an integer scale from 0 (unrelated) to "
            "5 (fully correct). Reply with the integer only.\n"
            "Instruction: " + instruction + "\nReference: " + reference + "\nOutput: " + output;
        for (int attempt = 0; attempt <= opts.retries; ++attempt) {
            auto text = opts.client->generate(prompt, 8);
            if (!text) continue;
            auto v = parse_judge_integer(*text);
            if (v) return {20.0 * (double)*v, false};
        }
    }
    return {offline_judge_score(reference, output), true};
}

// ---- report ----

struct eval_row {
    std::string dataset;     // e.g. "MNSC-ASR PART 3"
    std::string metric;      // wer / judge / accuracy
    std::string direction;   // "down" for WER, "up" otherwise
    double value = 0.0;
    int n = 0;
    std::optional<double> comparison;   // static reference column, rendered as-is
    bool judge_offline = false;
};

struct eval_report {
    std::string model_name;
    uint64_t config_hash = 0;
    uint64_t policy_hash = 0;
    std::vector<eval_row> rows;

    std::string to_markdown() const {
        std::ostringstream os;
        os << "| Dataset | Metric | " << model_name;
        bool any_cmp = false;
        for (const auto & r : rows)
            if (r.comparison) any_cmp = true;
        if (any_cmp) os << " | Reference";
        os << " |\n|---|---|---";
        if (any_cmp) os << "|---";
        os << "|\n";
        os.setf(std::ios::fixed);
        os.precision(1);
        for (const auto & r : rows) {
            os << "| " << r.dataset << " | " << r.metric
               << (r.direction == "down" ? " (v)" : " (^)") << " | " << r.value;
            if (r.judge_offline) os << " (offline surrogate)";
            if (any_cmp) {
                os << " | ";
                if (r.comparison) os << *r.comparison;
            }
            os << " |\n";
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto & r : rows) {
            nlohmann::json j = {{"dataset", r.dataset}, {"metric", r.metric},
                                {"direction", r.direction}, {"value", r.value}, {"n", r.n},
                                {"judge_offline", r.judge_offline}};
            if (r.comparison) j["comparison"] = *r.comparison;
            rows_j.push_back(j);
        }
        return {{"model", model_name}, {"config_hash", config_hash},
                {"policy_hash", policy_hash}, {"rows", rows_j}};
    }
};

struct eval_options {
    wer_policy policy;
    judge_options judge;
    std::set<std::string> accent_labels = {"chinese", "malay", "indian", "singaporean", "eurasian"};
    std::string model_name = "model";
    uint64_t config_hash = 0;
    // static per-dataset reference values (e.g. published numbers)
    std::map<std::string, double> comparison;
};

struct model_output {
    std::string audio_ref, task, output;
};

inline std::string pqa_dataset_name(const task_record & rec) {
    bool accent = rec.instruction.find("accent") != std::string::npos ||
                  rec.target.find("accent") != std::string::npos;
    std::string level = rec.level == "sentence" ? "Sentence" : "Dialogue";
    return std::string("MNSC-") + (accent ? "Accent" : "Gender") + "-" + level;
}

// Groups records by (task, part), applies the task's metric, and emits
// rows in the fixed task order ASR -> SQA -> SDS -> PQA. Outputs are
// matched to records per (audio_ref, task) in file order.
inline eval_report evaluate(const std::vector<task_record> & records,
                            const std::vector<model_output> & outputs,
                            const eval_options & opts = {}) {
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> pool;
    for (const auto & o : outputs) pool[{o.audio_ref, o.task}].push_back(o.output);
    std::map<std::pair<std::string, std::string>, size_t> cursor;

    std::vector<std::string> missing;
    struct acc { double sum = 0; int n = 0; bool offline = false; };
    std::map<std::string, acc> groups;   // dataset name -> accumulator
    std::map<std::string, std::pair<int, int>> group_order;  // task rank, part

    auto task_rank = [](const std::string & t) {
        if (t == "ASR") return 0;
        if (t == "SQA") return 1;
        if (t == "SDS") return 2;
        return 3;
    };

    // stable record order so that repeated runs and permuted inputs agree
    std::vector<task_record> recs = records;
    std::stable_sort(recs.begin(), recs.end(), [&](const task_record & a, const task_record & b) {
        if (a.audio_ref != b.audio_ref) return a.audio_ref < b.audio_ref;
        if (a.task != b.task) return task_rank(a.task) < task_rank(b.task);
        return a.instruction < b.instruction;
    });

    for (const auto & rec : recs) {
        auto key = std::make_pair(rec.audio_ref, rec.task);
        auto it = pool.find(key);
        size_t & cur = cursor[key];
        if (it == pool.end() || cur >= it->second.size()) {
            missing.push_back(rec.audio_ref + "/" + rec.task);
            continue;
        }
        const std::string & out = it->second[cur++];

        std::string dataset;
        double value = 0.0;
        bool offline = false;
        if (rec.task == "ASR") {
            dataset = "MNSC-ASR PART " + std::to_string(rec.part);
            value = wer(rec.target, out, opts.policy).wer;
        } else if (rec.task == "SQA" || rec.task == "SDS") {
            dataset = "MNSC-" + rec.task + " PART " + std::to_string(rec.part);
            auto js = judge_score(rec.target, rec.instruction, out, opts.judge);
            value = js.score;
            offline = js.offline;
        } else if (rec.task == "PQA") {
            dataset = pqa_dataset_name(rec);
            std::set<std::string> space = gender_label_space();
            if (dataset.find("Accent") != std::string::npos) space = opts.accent_labels;
            value = 100.0 * score_pqa(rec.target, out, space);
        } else {
            throw format_error("evaluate: unknown task " + rec.task);
        }
        auto & g = groups[dataset];
        g.sum += value;
        g.n += 1;
        g.offline = g.offline || offline;
        group_order[dataset] = {task_rank(rec.task), rec.part};
    }

    if (!missing.empty()) {
        std::string ids;
        for (const auto & m : missing) ids += (ids.empty() ? "" : ", ") + m;
        throw format_error("evaluate: missing model outputs for: " + ids);
    }

    std::vector<std::string> names;
    for (const auto & [name, g] : groups) names.push_back(name);
    std::sort(names.begin(), names.end(), [&](const std::string & a, const std::string & b) {
        return group_order[a] != group_order[b] ? group_order[a] < group_order[b] : a < b;
    });

    eval_report report;
    report.model_name = opts.model_name;
    report.config_hash = opts.config_hash;
    report.policy_hash = opts.policy.hash();
    for (const auto & name : names) {
        const auto & g = groups[name];
        eval_row row;
        row.dataset = name;
        row.metric = name.find("ASR") != std::string::npos ? "wer"
                   : (name.find("Gender") != std::string::npos ||
                      name.find("Accent") != std::string::npos) ? "accuracy" : "judge";
        row.direction = row.metric == "wer" ? "down" : "up";
        row.value = g.sum / g.n;
        row.n = g.n;
        row.judge_offline = g.offline;
        auto it = opts.comparison.find(name);
        if (it != opts.comparison.end()) row.comparison = it->second;
        report.rows.push_back(row);
    }
    return report;
}

} // namespace singfuse
