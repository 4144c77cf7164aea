#pragma once

// Whisper-style audio encoder: two temporal conv layers (stride 1 then
// stride 2, GELU), sinusoidal positions, pre-norm bidirectional
// transformer blocks, final layer norm. Output length is always
// canonical_frames / 2 regardless of clip content.

#include <cmath>
#include <string>
#include <vector>

#include "singfuse/audio.hpp"
#include "singfuse/params.hpp"
#include "singfuse/tensor.hpp"

namespace singfuse {

struct encoder_config {
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int n_mels = 80;
    int canonical_frames = 200;
    std::string profile_name = "toy";

    void validate() const {
        if (d_model % n_heads != 0)
            throw config_error("encoder: d_model " + std::to_string(d_model) +
                               " not divisible by n_heads " + std::to_string(n_heads));
        if (canonical_frames % 2 != 0)
            throw config_error("encoder: canonical_frames must be even");
    }

    int tau() const { return canonical_frames / 2; }

    static encoder_config from_run_config(const run_config & cfg) {
        encoder_config e;
        e.d_model = (int)cfg.get_int("encoder.d_model", 32);
        e.n_layers = (int)cfg.get_int("encoder.n_layers", 2);
        e.n_heads = (int)cfg.get_int("encoder.n_heads", 4);
        e.n_mels = (int)cfg.get_int("audio.n_mels", 80);
        e.canonical_frames = (int)cfg.get_int("audio.canonical_frames", 200);
        e.profile_name = cfg.get_str("run.profile", "toy");
        return e;
    }
};

template <class R>
struct encoder_output {
    tensor<R> h;              // tau x d_model
    int64_t original_frames = 0;
};

template <class R>
class encoder {
  public:
    encoder(const encoder_config & cfg, rng & r) : cfg_(cfg) {
        cfg_.validate();
        const int d = cfg_.d_model;
        auto lin = [&](std::vector<int64_t> shape, double fan_in) {
            return randn_tensor<R>(std::move(shape), r, 1.0 / std::sqrt(fan_in));
        };
        params_.add("conv1.w", lin({3, cfg_.n_mels, d}, 3.0 * cfg_.n_mels));
        params_.add("conv1.b", tensor<R>({(int64_t)d}, true));
        params_.add("conv2.w", lin({3, d, d}, 3.0 * d));
        params_.add("conv2.b", tensor<R>({(int64_t)d}, true));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            params_.add(p + "ln1.g", full_tensor<R>({(int64_t)d}, (R)1));
            params_.add(p + "ln1.b", tensor<R>({(int64_t)d}, true));
            for (const char * w : {"wq", "wk", "wv", "wo"})
                params_.add(p + "attn." + std::string(w), lin({d, d}, (double)d));
            for (const char * b : {"bq", "bk", "bv", "bo"})
                params_.add(p + "attn." + std::string(b), tensor<R>({(int64_t)d}, true));
            params_.add(p + "ln2.g", full_tensor<R>({(int64_t)d}, (R)1));
            params_.add(p + "ln2.b", tensor<R>({(int64_t)d}, true));
            params_.add(p + "mlp.w1", lin({d, 4 * d}, (double)d));
            params_.add(p + "mlp.b1", tensor<R>({(int64_t)(4 * d)}, true));
            params_.add(p + "mlp.w2", lin({4 * d, d}, 4.0 * d));
            params_.add(p + "mlp.b2", tensor<R>({(int64_t)d}, true));
        }
        params_.add("ln_f.g", full_tensor<R>({(int64_t)d}, (R)1));
        params_.add("ln_f.b", tensor<R>({(int64_t)d}, true));

        positions_ = sinusoidal_positions(cfg_.tau(), d);
    }

    const encoder_config & config() const { return cfg_; }
    param_map<R> & params() { return params_; }
    const param_map<R> & params() const { return params_; }

    encoder_output<R> encode(const mel_spectrogram & mel, tape<R> * tp = nullptr) {
        if (mel.frames != cfg_.canonical_frames) {
            throw dim_error("encoder: expected " + std::to_string(cfg_.canonical_frames) +
                            " mel frames, got " + std::to_string(mel.frames) +
                            " (run pad_or_trim first)");
        }
        tensor<R> x({mel.frames, (int64_t)mel.n_mels});
        for (int64_t i = 0; i < x.numel(); ++i) x.at(i) = (R)mel.data[i];
        encoder_output<R> out;
        out.h = forward(x, tp);
        out.original_frames = mel.original_frames;
        return out;
    }

    // mel tensor [canonical_frames x n_mels] -> hidden [tau x d_model]
    tensor<R> forward(tensor<R> x, tape<R> * tp = nullptr) {
        // conv stem with same padding: k=3 stride 1, then k=3 stride 2
        auto c1 = conv1d(pad_rows(x, 1, 1, tp), params_.get("conv1.w"), 1, tp);
        c1 = gelu(add_rowvec(c1, params_.get("conv1.b"), tp), tp);
        auto c2 = conv1d(pad_rows(c1, 1, 1, tp), params_.get("conv2.w"), 2, tp);
        c2 = gelu(add_rowvec(c2, params_.get("conv2.b"), tp), tp);

        auto h = add(c2, positions_, tp);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            auto normed = layer_norm(h, params_.get(p + "ln1.g"), params_.get(p + "ln1.b"), 1e-5, tp);
            auto q = add_rowvec(matmul(normed, params_.get(p + "attn.wq"), tp), params_.get(p + "attn.bq"), tp);
            auto k = add_rowvec(matmul(normed, params_.get(p + "attn.wk"), tp), params_.get(p + "attn.bk"), tp);
            auto v = add_rowvec(matmul(normed, params_.get(p + "attn.wv"), tp), params_.get(p + "attn.bv"), tp);
            auto att = multihead_attention(q, k, v, cfg_.n_heads, /*causal=*/false, tp);
            att = add_rowvec(matmul(att, params_.get(p + "attn.wo"), tp), params_.get(p + "attn.bo"), tp);
            h = add(h, att, tp);

            auto normed2 = layer_norm(h, params_.get(p + "ln2.g"), params_.get(p + "ln2.b"), 1e-5, tp);
            auto m = gelu(add_rowvec(matmul(normed2, params_.get(p + "mlp.w1"), tp), params_.get(p + "mlp.b1"), tp), tp);
            m = add_rowvec(matmul(m, params_.get(p + "mlp.w2"), tp), params_.get(p + "mlp.b2"), tp);
            h = add(h, m, tp);
        }
        return layer_norm(h, params_.get("ln_f.g"), params_.get("ln_f.b"), 1e-5, tp);
    }

    static tensor<R> sinusoidal_positions(int n_ctx, int d_model) {
        tensor<R> pe({(int64_t)n_ctx, (int64_t)d_model});
        int half = d_model / 2;
        for (int pos = 0; pos < n_ctx; ++pos) {
            for (int i = 0; i < half; ++i) {
                double div = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
                pe.at(pos, i) = (R)std::sin(pos * div);
                pe.at(pos, half + i) = (R)std::cos(pos * div);
            }
        }
        return pe;
    }

  private:
    encoder_config cfg_;
    param_map<R> params_;
    tensor<R> positions_;
};

// instantiate each profile and report its trainable parameter count
template <class R>
std::vector<std::pair<std::string, int64_t>> encoder_size_sweep(
        const std::vector<encoder_config> & profiles) {
    std::vector<std::pair<std::string, int64_t>> out;
    rng r(0);
    for (const auto & cfg : profiles) {
        encoder<R> enc(cfg, r);
        out.emplace_back(cfg.profile_name, enc.params().trainable_params());
    }
    return out;
}

} // namespace singfuse
