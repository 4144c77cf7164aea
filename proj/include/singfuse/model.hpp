#pragma once

// The full multimodal model: audio front end -> encoder -> adaptor ->
// LoRA-wrapped decoder, plus checkpoint save/load. Training partition:
// encoder and adaptor fully trainable, decoder trainable only through
// its LoRA factors.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "singfuse/adaptors.hpp"
#include "singfuse/audio.hpp"
#include "singfuse/checkpoint.hpp"
#include "singfuse/config.hpp"
#include "singfuse/decoder.hpp"
#include "singfuse/encoder.hpp"

namespace singfuse {

template <class R>
class multimodal_model {
  public:
    multimodal_model(const run_config & cfg, uint64_t seed) : cfg_(cfg) {
        rng r(seed);
        mel_cfg_ = mel_config::from_run_config(cfg);
        auto enc_cfg = encoder_config::from_run_config(cfg);
        enc_ = std::make_unique<encoder<R>>(enc_cfg, r);
        auto dec_cfg = decoder_config::from_run_config(cfg);
        dec_ = std::make_unique<decoder<R>>(dec_cfg, r);
        auto ad_cfg = adaptor_config::from_run_config(cfg, enc_cfg.tau(), enc_cfg.d_model,
                                                      dec_cfg.gamma);
        adaptor_ = make_adaptor<R>(ad_cfg, r);
        dec_->lora_wrap(lora_config::from_run_config(cfg), r);
    }

    const run_config & config() const { return cfg_; }
    const mel_config & mel_cfg() const { return mel_cfg_; }
    encoder<R> & enc() { return *enc_; }
    adaptor<R> & adapt() { return *adaptor_; }
    decoder<R> & dec() { return *dec_; }

    mel_spectrogram features(const audio_clip & clip) const {
        audio_clip c = clip.sample_rate == mel_cfg_.sample_rate
                           ? clip : resample(clip, mel_cfg_.sample_rate);
        return pad_or_trim(log_mel(c, mel_cfg_), mel_cfg_.canonical_frames);
    }

    tensor<R> speech_tokens(const mel_spectrogram & mel, tape<R> * tp = nullptr) {
        auto enc_out = enc_->encode(mel, tp);
        return adaptor_->forward(enc_out.h, tp);
    }

    tensor<R> record_loss(const mel_spectrogram & mel, const std::string & instruction,
                          const std::string & target, tape<R> * tp) {
        auto s = speech_tokens(mel, tp);
        std::optional<std::string> resp;
        if (!target.empty()) resp = target;
        auto seq = dec_->assemble_prompt(s, instruction, resp, tp);
        return dec_->forward_loss(seq, tp);
    }

    std::string infer(const mel_spectrogram & mel, const std::string & instruction, int max_new) {
        auto s = speech_tokens(mel);
        auto seq = dec_->assemble_prompt(s, instruction, std::nullopt);
        return dec_->generate(seq, max_new);
    }

    // trainable partition: encoder + adaptor parameters and LoRA factors
    std::vector<std::pair<std::string, tensor<R>>> trainable() {
        std::vector<std::pair<std::string, tensor<R>>> out;
        for (auto & [n, t] : enc_->params().items()) out.emplace_back("encoder." + n, t);
        for (auto & [n, t] : adaptor_->params().items()) out.emplace_back("adaptor." + n, t);
        for (auto & [n, ll] : dec_->lora_layers()) {
            out.emplace_back("lora." + n + ".a", ll.a);
            out.emplace_back("lora." + n + ".b", ll.b);
        }
        return out;
    }

    // every tensor, trainable or frozen, in checkpoint order
    std::vector<std::pair<std::string, tensor<R>>> all_tensors() {
        std::vector<std::pair<std::string, tensor<R>>> out;
        for (auto & [n, t] : enc_->params().items()) out.emplace_back("encoder." + n, t);
        for (auto & [n, t] : adaptor_->params().items()) out.emplace_back("adaptor." + n, t);
        for (auto & [n, t] : dec_->params().items()) out.emplace_back("decoder." + n, t);
        for (auto & [n, ll] : dec_->lora_layers()) {
            out.emplace_back("lora." + n + ".a", ll.a);
            out.emplace_back("lora." + n + ".b", ll.b);
        }
        return out;
    }

    void zero_grads() {
        enc_->params().zero_grads();
        adaptor_->params().zero_grads();
        dec_->params().zero_grads();
        for (auto & [n, ll] : dec_->lora_layers()) {
            ll.a.zero_grad();
            ll.b.zero_grad();
        }
    }

    checkpoint to_checkpoint() {
        checkpoint ck;
        ck.meta["profile"] = cfg_.get_str("run.profile", "toy");
        ck.meta["config"] = cfg_.values();
        ck.meta["config_hash"] = cfg_.hash();
        for (auto & [name, t] : all_tensors()) {
            checkpoint_tensor ct;
            ct.name = name;
            ct.shape = t.shape();
            ct.trainable = t.requires_grad();
            ct.data.reserve((size_t)t.numel());
            for (int64_t i = 0; i < t.numel(); ++i) ct.data.push_back((float)t.at(i));
            ck.tensors.push_back(std::move(ct));
        }
        return ck;
    }

    void load_tensors(const checkpoint & ck) {
        for (auto & [name, t] : all_tensors()) {
            const auto & ct = ck.find(name);
            if (ct.shape != t.shape())
                throw format_error("checkpoint: shape mismatch for " + name + ": file " +
                                   shape_str(ct.shape) + " vs model " + shape_str(t.shape()));
            for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = (R)ct.data[(size_t)i];
        }
    }

    // rebuild a model from a checkpoint's embedded config
    static std::unique_ptr<multimodal_model<R>> from_checkpoint(const checkpoint & ck) {
        run_config cfg;
        for (auto it = ck.meta.at("config").begin(); it != ck.meta.at("config").end(); ++it)
            cfg.set(it.key(), it.value().template get<std::string>());
        auto m = std::make_unique<multimodal_model<R>>(cfg, 0);
        m->load_tensors(ck);
        return m;
    }

  private:
    run_config cfg_;
    mel_config mel_cfg_;
    std::unique_ptr<encoder<R>> enc_;
    std::unique_ptr<adaptor<R>> adaptor_;
    std::unique_ptr<decoder<R>> dec_;
};

} // namespace singfuse
