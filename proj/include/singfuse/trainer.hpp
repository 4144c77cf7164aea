#pragma once

// Multitask training loop: task-mix batch sampling, AdamW on the
// trainable partition only, gradient clipping, deterministic
// checkpoint/resume, and the ablation harness.

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "singfuse/corpus.hpp"
#include "singfuse/model.hpp"

namespace singfuse {

struct train_config {
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    double adam_eps = 1e-8;
    int batch_size = 4;
    int max_steps = 2000;
    uint64_t seed = 0;
    int checkpoint_every = 500;
    std::string lr_schedule = "constant";     // or "cosine" (decays to 0 at max_steps)
    std::map<std::string, double> task_mix;   // empty -> equal weights

    static train_config from_run_config(const run_config & cfg) {
        train_config t;
        t.learning_rate = cfg.get_double("train.learning_rate", 1e-3);
        t.beta1 = cfg.get_double("train.beta1", 0.9);
        t.beta2 = cfg.get_double("train.beta2", 0.999);
        t.weight_decay = cfg.get_double("train.weight_decay", 0.0);
        t.grad_clip = cfg.get_double("train.grad_clip", 1.0);
        t.batch_size = (int)cfg.get_int("train.batch_size", 4);
        t.max_steps = (int)cfg.get_int("train.max_steps", 2000);
        t.seed = (uint64_t)cfg.get_int("train.seed", cfg.get_int("run.seed", 0));
        t.checkpoint_every = (int)cfg.get_int("train.checkpoint_every", 500);
        t.lr_schedule = cfg.get_str("train.lr_schedule", "constant");
        if (t.lr_schedule != "constant" && t.lr_schedule != "cosine")
            throw config_error("train.lr_schedule must be 'constant' or 'cosine', got " +
                               t.lr_schedule);
        return t;
    }
};

struct train_example {
    task_record record;
    mel_spectrogram features;
};

struct train_abort : std::runtime_error {
    explicit train_abort(const std::string & msg) : std::runtime_error(msg) {}
};

// tasks drawn i.i.d. from the normalized mix, records uniform within a
// task; fully determined by the rng state
inline std::vector<size_t> sample_batch(
        const std::map<std::string, std::vector<size_t>> & by_task,
        const std::map<std::string, double> & mix, int batch_size, rng & r) {
    std::vector<std::pair<std::string, double>> weights;
    double total = 0;
    for (const auto & [task, idxs] : by_task) {
        if (idxs.empty()) continue;
        double w = 1.0;
        auto it = mix.find(task);
        if (it != mix.end()) w = it->second;
        if (w < 0 || !std::isfinite(w))
            throw config_error("sample_batch: bad weight for task " + task);
        if (w == 0) continue;
        weights.emplace_back(task, w);
        total += w;
    }
    if (weights.empty()) throw config_error("sample_batch: all datasets empty or zero-weighted");

    std::vector<size_t> batch;
    for (int i = 0; i < batch_size; ++i) {
        double u = r.uniform() * total;
        size_t pick = 0;
        for (; pick + 1 < weights.size(); ++pick) {
            u -= weights[pick].second;
            if (u < 0) break;
        }
        const auto & idxs = by_task.at(weights[pick].first);
        batch.push_back(idxs[r.uniform_int(idxs.size())]);
    }
    return batch;
}

template <class R>
class trainer {
  public:
    trainer(multimodal_model<R> & model, const train_config & cfg)
        : model_(model), cfg_(cfg), sampler_(cfg.seed) {
        for (auto & [name, t] : model_.trainable()) {
            moments_m_[name].assign((size_t)t.numel(), 0.0f);
            moments_v_[name].assign((size_t)t.numel(), 0.0f);
        }
    }

    int step() const { return step_; }
    rng & sampler() { return sampler_; }
    const std::vector<std::pair<int, double>> & loss_history() const { return history_; }

    // forward/backward over the batch, clip, AdamW on the trainable
    // partition; an all-unsupervised batch changes nothing
    double train_step(const std::vector<const train_example *> & batch) {
        if (batch.empty()) throw config_error("train_step: empty batch");
        tape<R> tp;
        std::vector<tensor<R>> losses;
        int supervised = 0;
        for (const auto * ex : batch) {
            auto loss = model_.record_loss(ex->features, ex->record.instruction,
                                           ex->record.target, &tp);
            if (!ex->record.target.empty()) ++supervised;
            losses.push_back(loss);
        }
        tensor<R> total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i], &tp);
        total = scale(total, (R)(1.0 / (double)batch.size()), &tp);
        double loss_value = (double)total.at(0);
        if (!std::isfinite(loss_value)) {
            std::string ids;
            for (const auto * ex : batch) ids += (ids.empty() ? "" : ", ") + ex->record.audio_ref;
            throw train_abort("non-finite loss at step " + std::to_string(step_) +
                              " (records: " + ids + ")");
        }
        ++step_;
        history_.emplace_back(step_, loss_value);
        if (supervised == 0) return loss_value;   // nothing to learn from

        model_.zero_grads();
        tp.backward(total);
        apply_adamw();
        return loss_value;
    }

    // run max_steps steps over the examples, one line per step into the
    // optional CSV loss log
    void run(const std::vector<train_example> & examples, std::ostream * loss_log = nullptr,
             const std::function<void(int)> & on_checkpoint = {}) {
        auto by_task = index_by_task(examples);
        uint64_t mix_hash = mix_hash_of();
        while (step_ < cfg_.max_steps) {
            auto idxs = sample_batch(by_task, cfg_.task_mix, cfg_.batch_size, sampler_);
            std::vector<const train_example *> batch;
            for (size_t i : idxs) batch.push_back(&examples[i]);
            double loss = train_step(batch);
            if (loss_log)
                (*loss_log) << step_ << "," << loss << "," << mix_hash << "\n";
            if (on_checkpoint && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)
                on_checkpoint(step_);
        }
    }

    static std::map<std::string, std::vector<size_t>> index_by_task(
            const std::vector<train_example> & examples) {
        std::map<std::string, std::vector<size_t>> by_task;
        for (size_t i = 0; i < examples.size(); ++i)
            by_task[examples[i].record.task].push_back(i);
        return by_task;
    }

    // ---- train-state checkpointing ----

    checkpoint to_checkpoint() {
        checkpoint ck = model_.to_checkpoint();
        ck.meta["step"] = step_;
        ck.meta["sampler_rng"] = sampler_.serialize();
        for (auto & [name, m] : moments_m_) {
            checkpoint_tensor t;
            t.name = "opt.m." + name;
            t.shape = {(int64_t)m.size()};
            t.data = m;
            ck.tensors.push_back(std::move(t));
        }
        for (auto & [name, v] : moments_v_) {
            checkpoint_tensor t;
            t.name = "opt.v." + name;
            t.shape = {(int64_t)v.size()};
            t.data = v;
            ck.tensors.push_back(std::move(t));
        }
        return ck;
    }

    void restore(const checkpoint & ck) {
        model_.load_tensors(ck);
        step_ = ck.meta.value("step", 0);
        if (ck.meta.contains("sampler_rng"))
            sampler_.deserialize(ck.meta["sampler_rng"].get<std::string>());
        for (auto & [name, m] : moments_m_)
            if (ck.has("opt.m." + name)) m = ck.find("opt.m." + name).data;
        for (auto & [name, v] : moments_v_)
            if (ck.has("opt.v." + name)) v = ck.find("opt.v." + name).data;
    }

  private:
    uint64_t mix_hash_of() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto & [k, v] : cfg_.task_mix) {
            for (char c : k + "=" + std::to_string(v) + ";") {
                h ^= (uint64_t)(unsigned char)c;
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    void apply_adamw() {
        auto trainable = model_.trainable();
        // global grad-norm clip
        double norm_sq = 0;
        for (auto & [name, t] : trainable) {
            if (!t.has_grad()) continue;
            for (R g : t.grad_ro()) norm_sq += (double)g * (double)g;
        }
        double norm = std::sqrt(norm_sq);
        double clip_scale = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip)
                                ? cfg_.grad_clip / norm : 1.0;

        double lr = cfg_.learning_rate;
        if (cfg_.lr_schedule == "cosine" && cfg_.max_steps > 0) {
            double frac = std::min(1.0, (double)step_ / (double)cfg_.max_steps);
            lr *= 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
        }

        const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
        for (auto & [name, t] : trainable) {
            auto & m = moments_m_[name];
            auto & v = moments_v_[name];
            const bool has_grad = t.has_grad();
            for (int64_t i = 0; i < t.numel(); ++i) {
                double g = has_grad ? (double)t.grad_ro()[(size_t)i] * clip_scale : 0.0;
                m[(size_t)i] = (float)(cfg_.beta1 * m[(size_t)i] + (1.0 - cfg_.beta1) * g);
                v[(size_t)i] = (float)(cfg_.beta2 * v[(size_t)i] + (1.0 - cfg_.beta2) * g * g);
                double mhat = m[(size_t)i] / bc1;
                double vhat = v[(size_t)i] / bc2;
                double upd = mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                             cfg_.weight_decay * (double)t.at(i);
                t.at(i) = (R)((double)t.at(i) - lr * upd);
            }
        }
    }

    multimodal_model<R> & model_;
    train_config cfg_;
    rng sampler_;
    int step_ = 0;
    std::vector<std::pair<int, double>> history_;
    std::map<std::string, std::vector<float>> moments_m_, moments_v_;
};

} // namespace singfuse
