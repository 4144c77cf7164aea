// singfuse: corpus preparation, training, evaluation, inference and
// ablation for the speech-fusion recipe, in one executable.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/input error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "singfuse/ablation.hpp"
#include "singfuse/eval.hpp"
#include "singfuse/fixture.hpp"
#include "singfuse/http_client.hpp"
#include "singfuse/model.hpp"
#include "singfuse/prepare.hpp"
#include "singfuse/trainer.hpp"

namespace fs = std::filesystem;
using namespace singfuse;

namespace {

using model_f = multimodal_model<float>;

std::vector<train_example> load_examples(const model_f & model, const manifest & m,
                                         const std::string & audio_dir) {
    std::vector<train_example> out;
    for (const auto & rec : m.records) {
        std::string wav = (fs::path(audio_dir) / (rec.audio_ref + ".wav")).string();
        auto clip = load_channel_wav(wav);
        out.push_back({rec, model.features(clip)});
    }
    return out;
}

manifest read_manifest_dir(const std::string & dir, const std::string & suffix) {
    manifest all;
    std::vector<fs::path> files;
    for (const auto & e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto & f : files) {
        auto m = manifest::read_jsonl(f.string());
        all.records.insert(all.records.end(), m.records.begin(), m.records.end());
    }
    if (all.records.empty())
        throw config_error("no records in " + dir + " matching *" + suffix);
    all.split = all.records.front().split;
    return all;
}

int cmd_prepare(const std::string & input, const std::string & metadata,
                const std::string & out, bool stub, const std::string & generator_url,
                const std::vector<int> & parts, double test_fraction, uint64_t seed) {
    prepare_options opts;
    opts.parts.insert(parts.begin(), parts.end());
    opts.policy.test_fraction = test_fraction;
    opts.seed = seed;
    std::unique_ptr<text_generator> gen;
    if (stub || generator_url.empty()) gen = std::make_unique<stub_generator>();
    else gen = std::make_unique<http_text_generator>(generator_url);
    prepare_result res;
    try {
        res = prepare_corpus(input, metadata, out, *gen, opts);
    } catch (const config_error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    for (const auto & d : res.diagnostics) std::cerr << "note: " << d << "\n";
    std::cout << stats_table(res);
    std::cout << "train records: " << res.train.records.size()
              << ", test records: " << res.test.records.size() << "\n";
    std::cout << "manifests written to " << out << "\n";
    return 0;
}

int cmd_train(const std::string & config_path, const std::string & manifests,
              const std::string & out, const std::string & resume, bool fresh,
              const std::string & loss_log_path) {
    run_config cfg = run_config::from_file(config_path);
    std::cout << "resolved config (hash " << cfg.hash() << "):\n" << cfg.resolved();

    uint64_t seed = (uint64_t)cfg.get_int("run.seed", 0);
    model_f model(cfg, seed);
    train_config tc = train_config::from_run_config(cfg);
    trainer<float> tr(model, tc);
    if (!resume.empty()) {
        auto ck = checkpoint::load(resume);
        if (ck.meta.value("config_hash", (uint64_t)0) != cfg.hash())
            std::cerr << "warning: resume checkpoint was written under a different config\n";
        tr.restore(ck);
        std::cout << "resumed from " << resume << " at step " << tr.step() << "\n";
    }

    manifest m = read_manifest_dir(manifests, "_train.jsonl");
    auto examples = load_examples(model, m, (fs::path(manifests) / "audio").string());
    std::cout << "loaded " << examples.size() << " training examples\n";

    std::string log_path = loss_log_path.empty() ? out + ".loss.csv" : loss_log_path;
    std::ofstream loss_log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) loss_log << "step,loss,mix_hash\n";

    auto save = [&](int step) {
        tr.to_checkpoint().save(out);
        std::cout << "checkpoint saved at step " << step << " -> " << out << "\n";
    };
    try {
        tr.run(examples, &loss_log, save);
    } catch (const train_abort & e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 1;
    }
    save(tr.step());
    if (!tr.loss_history().empty())
        std::cout << "final loss: " << tr.loss_history().back().second << "\n";
    (void)fresh;
    return 0;
}

int cmd_eval(const std::string & ckpt, const std::string & manifest_path,
             const std::string & report_dir, const std::string & outputs_path,
             const std::string & audio_dir_flag, const std::string & judge_url,
             const std::string & profile) {
    auto ck = checkpoint::load(ckpt);
    if (!profile.empty() && ck.meta.value("profile", "") != profile) {
        std::cerr << "error: checkpoint profile '" << ck.meta.value("profile", "")
                  << "' does not match requested profile '" << profile << "'\n";
        return 1;
    }
    auto m = manifest::read_jsonl(manifest_path);

    std::vector<model_output> outputs;
    if (!outputs_path.empty()) {
        // scoring-only mode: the model is never touched
        std::ifstream in(outputs_path);
        if (!in) { std::cerr << "error: cannot open " << outputs_path << "\n"; return 2; }
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line);
            outputs.push_back({j.at("audio_ref").get<std::string>(),
                               j.at("task").get<std::string>(),
                               j.at("output").get<std::string>()});
        }
    } else {
        auto model = model_f::from_checkpoint(ck);
        std::string audio_dir = audio_dir_flag.empty()
            ? (fs::path(manifest_path).parent_path() / "audio").string() : audio_dir_flag;
        for (const auto & rec : m.records) {
            auto clip = load_channel_wav((fs::path(audio_dir) / (rec.audio_ref + ".wav")).string());
            int max_new = std::max(32, (int)rec.target.size() + 8);
            outputs.push_back({rec.audio_ref, rec.task,
                               model->infer(model->features(clip), rec.instruction, max_new)});
        }
    }

    eval_options opts;
    opts.config_hash = ck.meta.value("config_hash", (uint64_t)0);
    std::unique_ptr<text_generator> judge;
    if (!judge_url.empty()) {
        judge = std::make_unique<http_text_generator>(judge_url);
        opts.judge.client = judge.get();
    }
    auto report = evaluate(m.records, outputs, opts);

    fs::create_directories(report_dir);
    std::ofstream((fs::path(report_dir) / "report.md").string()) << report.to_markdown();
    std::ofstream((fs::path(report_dir) / "report.json").string()) << report.to_json().dump(2) << "\n";
    std::cout << report.to_markdown();
    return 0;
}

int cmd_infer(const std::string & ckpt, const std::string & wav,
              const std::string & instruction, int max_new) {
    auto model = model_f::from_checkpoint(checkpoint::load(ckpt));
    auto clip = load_channel_wav(wav);
    std::cout << model->infer(model->features(clip), instruction, max_new) << "\n";
    return 0;
}

// ablation grid file: JSON array of {"cell_id": str, "overrides": {key: value}}
std::vector<ablation_cell> read_grid(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open grid file " + path);
    nlohmann::json j;
    in >> j;
    std::vector<ablation_cell> grid;
    for (const auto & c : j) {
        ablation_cell cell;
        cell.cell_id = c.at("cell_id").get<std::string>();
        if (c.contains("overrides"))
            for (auto it = c["overrides"].begin(); it != c["overrides"].end(); ++it)
                cell.overrides[it.key()] = it.value().is_string()
                    ? it.value().get<std::string>() : it.value().dump();
        grid.push_back(std::move(cell));
    }
    return grid;
}

std::string ablation_svg(const ablation_report & rep) {
    // WER vs encoder size, one polyline per adaptor variant
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    double xmax = 1, ymax = 1;
    for (const auto & r : rep.rows) {
        if (r.asr_wer < 0) continue;
        series[r.adaptor].push_back({(double)r.encoder_params, r.asr_wer});
        xmax = std::max(xmax, (double)r.encoder_params);
        ymax = std::max(ymax, r.asr_wer);
    }
    const double W = 640, H = 420, L = 60, B = 40;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<line x1='" << L << "' y1='10' x2='" << L << "' y2='" << H - B
       << "' stroke='black'/>\n";
    os << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - 10 << "' y2='" << H - B
       << "' stroke='black'/>\n";
    os << "<text x='" << W / 2 << "' y='" << H - 8 << "' font-size='12'>encoder parameters</text>\n";
    os << "<text x='14' y='" << H / 2 << "' font-size='12' transform='rotate(-90 14 "
       << H / 2 << ")'>ASR WER</text>\n";
    const char * colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};
    int ci = 0;
    for (auto & [name, pts] : series) {
        std::sort(pts.begin(), pts.end());
        os << "<polyline fill='none' stroke='" << colors[ci % 4] << "' stroke-width='2' points='";
        for (const auto & [x, y] : pts)
            os << L + x / xmax * (W - L - 20) << "," << (H - B) - y / ymax * (H - B - 20) << " ";
        os << "'/>\n";
        os << "<text x='" << W - 150 << "' y='" << 24 + 16 * ci << "' font-size='12' fill='"
           << colors[ci % 4] << "'>" << name << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
    return os.str();
}

int cmd_ablate(const std::string & config_path, const std::string & grid_path,
               const std::string & out_dir, uint64_t seed) {
    run_config base = config_path.empty() ? run_config() : run_config::from_file(config_path);
    auto grid = read_grid(grid_path);

    // self-contained data: the bundled synthetic multitask fixture
    auto fixture = make_overfit_fixture();
    model_f probe(base, seed);   // feature extraction only depends on the audio config
    std::vector<train_example> examples;
    for (size_t i = 0; i < fixture.records.size(); ++i)
        examples.push_back({fixture.records[i], probe.features(fixture.clips[i])});

    auto report = run_ablation<float>(base, grid, examples, examples, seed);

    fs::create_directories(out_dir);
    std::ofstream((fs::path(out_dir) / "ablation.csv").string()) << report.to_csv();
    std::ofstream((fs::path(out_dir) / "ablation.svg").string()) << ablation_svg(report);
    std::cout << report.to_csv();
    for (const auto & s : report.skipped) std::cerr << "skipped cell: " << s << "\n";
    std::cout << "report written to " << out_dir << "\n";
    return report.skipped.empty() ? 0 : 1;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"speech-fusion pipeline: prepare, train, eval, infer, ablate"};
    app.require_subcommand(1);

    // prepare
    auto * prep = app.add_subcommand("prepare", "standardize a raw corpus into task manifests");
    std::string p_input, p_meta, p_out, p_gen_url;
    bool p_stub = false;
    std::vector<int> p_parts;
    double p_test_fraction = 0.2;
    uint64_t p_seed = 7;
    prep->add_option("--input", p_input, "session directory tree")->required();
    prep->add_option("--metadata", p_meta, "speaker metadata CSV")->required();
    prep->add_option("--out", p_out, "output directory")->required();
    prep->add_flag("--stub-generator", p_stub, "use the deterministic local generator");
    prep->add_option("--generator-url", p_gen_url, "HTTP text-generation endpoint");
    prep->add_option("--parts", p_parts, "restrict to these parts (1..6)");
    prep->add_option("--test-fraction", p_test_fraction, "speaker-group test fraction");
    prep->add_option("--seed", p_seed, "split seed");

    // train
    auto * train = app.add_subcommand("train", "train on prepared manifests");
    std::string t_config, t_manifests, t_out, t_resume, t_loss_log;
    bool t_fresh = false;
    train->add_option("--config", t_config, "run config file")->required();
    train->add_option("--manifests", t_manifests, "manifest directory")->required();
    train->add_option("--out", t_out, "checkpoint output path")->required();
    train->add_option("--resume", t_resume, "resume from this checkpoint");
    train->add_flag("--fresh", t_fresh, "force fresh initialization");
    train->add_option("--loss-log", t_loss_log, "loss CSV path");

    // eval
    auto * ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    std::string e_ckpt, e_manifest, e_report, e_outputs, e_audio, e_judge, e_profile;
    ev->add_option("--ckpt", e_ckpt, "checkpoint path")->required();
    ev->add_option("--manifest", e_manifest, "JSONL manifest")->required();
    ev->add_option("--report", e_report, "report output directory")->required();
    ev->add_option("--outputs", e_outputs, "precomputed outputs JSONL (scoring-only)");
    ev->add_option("--audio", e_audio, "audio directory (default: <manifest dir>/audio)");
    ev->add_option("--judge-url", e_judge, "HTTP judge endpoint (default: offline surrogate)");
    ev->add_option("--profile", e_profile, "require this checkpoint profile");

    // infer
    auto * inf = app.add_subcommand("infer", "run one clip + instruction");
    std::string i_ckpt, i_wav, i_instruction;
    int i_max_new = 64;
    inf->add_option("--ckpt", i_ckpt, "checkpoint path")->required();
    inf->add_option("--wav", i_wav, "input WAV")->required();
    inf->add_option("--instruction", i_instruction, "text instruction")->required();
    inf->add_option("--max-new", i_max_new, "max generated tokens");

    // ablate
    auto * abl = app.add_subcommand("ablate", "run an ablation grid");
    std::string a_config, a_grid, a_out;
    uint64_t a_seed = 0;
    abl->add_option("--config", a_config, "base run config file");
    abl->add_option("--grid", a_grid, "grid JSON file")->required();
    abl->add_option("--out", a_out, "output directory")->required();
    abl->add_option("--seed", a_seed, "cell seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (prep->parsed())
            return cmd_prepare(p_input, p_meta, p_out, p_stub, p_gen_url, p_parts,
                               p_test_fraction, p_seed);
        if (train->parsed()) {
            if (!t_resume.empty() && t_fresh) {
                std::cerr << "usage error: --resume and --fresh are mutually exclusive\n";
                return 2;
            }
            return cmd_train(t_config, t_manifests, t_out, t_resume, t_fresh, t_loss_log);
        }
        if (ev->parsed())
            return cmd_eval(e_ckpt, e_manifest, e_report, e_outputs, e_audio, e_judge, e_profile);
        if (inf->parsed()) return cmd_infer(i_ckpt, i_wav, i_instruction, i_max_new);
        if (abl->parsed()) return cmd_ablate(a_config, a_grid, a_out, a_seed);
    } catch (const config_error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const format_error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
