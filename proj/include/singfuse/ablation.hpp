#pragma once

// Ablation harness: train identically-seeded grid cells (encoder
// profile x adaptor x decoder) on the same data, evaluate each per
// task, and emit a plot-ready table.

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "singfuse/eval.hpp"
#include "singfuse/model.hpp"
#include "singfuse/trainer.hpp"

namespace singfuse {

struct ablation_cell {
    std::string cell_id;
    std::map<std::string, std::string> overrides;   // config keys applied on top of the base
};

struct ablation_row {
    std::string cell_id;
    int64_t encoder_params = 0;
    std::string adaptor;
    std::string decoder;
    int speech_len = 0;
    double asr_wer = -1, sqa_score = -1, sds_score = -1, pqa_acc = -1;  // -1 when task absent
};

struct ablation_report {
    std::vector<ablation_row> rows;
    std::vector<std::string> skipped;   // invalid cells with reasons

    std::string to_csv() const {
        std::ostringstream os;
        os << "cell_id,encoder_params,adaptor,decoder,asr_wer,sqa_score,sds_score,pqa_acc\n";
        os.setf(std::ios::fixed);
        os.precision(4);
        for (const auto & r : rows)
            os << r.cell_id << "," << r.encoder_params << "," << r.adaptor << "," << r.decoder
               << "," << r.asr_wer << "," << r.sqa_score << "," << r.sds_score << ","
               << r.pqa_acc << "\n";
        return os.str();
    }
};

template <class R>
ablation_report run_ablation(const run_config & base, const std::vector<ablation_cell> & grid,
                             const std::vector<train_example> & train_examples,
                             const std::vector<train_example> & eval_examples,
                             uint64_t seed) {
    ablation_report report;
    for (const auto & cell : grid) {
        run_config cfg = base;
        for (const auto & [k, v] : cell.overrides) cfg.set(k, v);
        ablation_row row;
        row.cell_id = cell.cell_id;
        try {
            multimodal_model<R> model(cfg, seed);
            row.encoder_params = model.enc().params().trainable_params();
            row.adaptor = adaptor_variant_name(model.adapt().config().variant);
            row.decoder = model.dec().config().family_name + "-g" +
                          std::to_string(model.dec().config().gamma) + "-l" +
                          std::to_string(model.dec().config().n_layers);
            row.speech_len = model.adapt().output_len();

            train_config tc = train_config::from_run_config(cfg);
            tc.seed = seed;
            trainer<R> tr(model, tc);
            tr.run(train_examples);

            // generate and score
            std::vector<task_record> recs;
            std::vector<model_output> outs;
            for (const auto & ex : eval_examples) {
                recs.push_back(ex.record);
                int max_new = (int)ex.record.target.size() + 8;
                outs.push_back({ex.record.audio_ref, ex.record.task,
                                model.infer(ex.features, ex.record.instruction, max_new)});
            }
            eval_options opts;
            opts.model_name = cell.cell_id;
            auto rep = evaluate(recs, outs, opts);
            std::map<std::string, std::pair<double, int>> by_task;   // mean over parts
            for (const auto & er : rep.rows) {
                std::string task = er.metric == "wer" ? "ASR"
                                 : er.metric == "accuracy" ? "PQA"
                                 : er.dataset.find("SQA") != std::string::npos ? "SQA" : "SDS";
                by_task[task].first += er.value;
                by_task[task].second += 1;
            }
            auto mean_of = [&](const std::string & t) {
                auto it = by_task.find(t);
                return it == by_task.end() ? -1.0 : it->second.first / it->second.second;
            };
            row.asr_wer = mean_of("ASR");
            row.sqa_score = mean_of("SQA");
            row.sds_score = mean_of("SDS");
            row.pqa_acc = mean_of("PQA");
            report.rows.push_back(row);
        } catch (const std::exception & e) {
            report.skipped.push_back(cell.cell_id + ": " + e.what());
        }
    }
    return report;
}

} // namespace singfuse
