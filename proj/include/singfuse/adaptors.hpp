#pragma once

// The three modality adaptors mapping encoder output h (tau x d) into
// the decoder embedding space (L x gamma): Rescale-MLP, Conv-1D and a
// window-based Q-Former.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "singfuse/config.hpp"
#include "singfuse/params.hpp"
#include "singfuse/tensor.hpp"

namespace singfuse {

enum class adaptor_variant { rescale_mlp, conv1d, q_former };

inline adaptor_variant parse_adaptor_variant(const std::string & s) {
    if (s == "rescale_mlp") return adaptor_variant::rescale_mlp;
    if (s == "conv1d") return adaptor_variant::conv1d;
    if (s == "q_former") return adaptor_variant::q_former;
    throw config_error("adaptor: unknown variant '" + s + "'");
}

inline std::string adaptor_variant_name(adaptor_variant v) {
    switch (v) {
        case adaptor_variant::rescale_mlp: return "rescale_mlp";
        case adaptor_variant::conv1d: return "conv1d";
        case adaptor_variant::q_former: return "q_former";
    }
    return "?";
}

struct adaptor_config {
    adaptor_variant variant = adaptor_variant::conv1d;
    int tau = 100;       // encoder output length
    int d = 32;          // encoder hidden size
    int gamma = 64;      // decoder embedding size
    int s = 15;                  // rescale_mlp
    int kernel = 8, stride = 8;  // conv1d
    int window_frames = 25, n_queries_per_window = 1, qf_layers = 2;  // q_former

    static adaptor_config from_run_config(const run_config & cfg, int tau, int d, int gamma) {
        adaptor_config a;
        a.variant = parse_adaptor_variant(cfg.get_str("adaptor.variant", "conv1d"));
        a.tau = tau;
        a.d = d;
        a.gamma = gamma;
        a.s = (int)cfg.get_int("adaptor.s", 15);
        a.kernel = (int)cfg.get_int("adaptor.kernel", 8);
        a.stride = (int)cfg.get_int("adaptor.stride", 8);
        a.window_frames = (int)cfg.get_int("adaptor.window_frames", 25);
        a.n_queries_per_window = (int)cfg.get_int("adaptor.n_queries_per_window", 1);
        a.qf_layers = (int)cfg.get_int("adaptor.qf_layers", 2);
        return a;
    }

    // closed-form output length per variant
    int output_len() const {
        switch (variant) {
            case adaptor_variant::rescale_mlp: return tau / s;
            case adaptor_variant::conv1d: return (tau - kernel) / stride + 1;
            case adaptor_variant::q_former: return (tau / window_frames) * n_queries_per_window;
        }
        return 0;
    }

    void validate() const {
        if (variant == adaptor_variant::rescale_mlp && (s <= 0 || tau % s != 0))
            throw config_error("rescale_mlp: tau " + std::to_string(tau) +
                               " not divisible by s " + std::to_string(s));
        if (variant == adaptor_variant::conv1d && tau < kernel)
            throw dim_error("conv1d adaptor: tau " + std::to_string(tau) +
                            " shorter than kernel " + std::to_string(kernel));
        if (variant == adaptor_variant::q_former &&
            (window_frames <= 0 || tau % window_frames != 0))
            throw config_error("q_former: tau " + std::to_string(tau) +
                               " not divisible by window_frames " + std::to_string(window_frames));
    }
};

template <class R>
class adaptor {
  public:
    virtual ~adaptor() = default;
    virtual tensor<R> forward(tensor<R> h, tape<R> * tp = nullptr) = 0;
    virtual param_map<R> & params() = 0;
    const adaptor_config & config() const { return cfg_; }
    int output_len() const { return cfg_.output_len(); }

  protected:
    explicit adaptor(const adaptor_config & cfg) : cfg_(cfg) { cfg_.validate(); }
    adaptor_config cfg_;
};

// reshape tau x d -> (tau/s) x (d*s) by stacking s consecutive frames,
// then linear d*s -> d -> 4d -> gamma with SiLU after the first two
template <class R>
class rescale_mlp_adaptor : public adaptor<R> {
  public:
    rescale_mlp_adaptor(const adaptor_config & cfg, rng & r) : adaptor<R>(cfg) {
        const int ds = cfg.d * cfg.s;
        auto lin = [&](int64_t in, int64_t out) {
            return randn_tensor<R>({in, out}, r, 1.0 / std::sqrt((double)in));
        };
        params_.add("mlp1.w", lin(ds, cfg.d));
        params_.add("mlp1.b", tensor<R>({(int64_t)cfg.d}, true));
        params_.add("mlp2.w", lin(cfg.d, 4 * cfg.d));
        params_.add("mlp2.b", tensor<R>({(int64_t)(4 * cfg.d)}, true));
        params_.add("mlp3.w", lin(4 * cfg.d, cfg.gamma));
        params_.add("mlp3.b", tensor<R>({(int64_t)cfg.gamma}, true));
    }

    tensor<R> forward(tensor<R> h, tape<R> * tp = nullptr) override {
        const auto & cfg = this->cfg_;
        if (h.dim(0) != cfg.tau || h.dim(1) != cfg.d)
            throw dim_error("rescale_mlp: expected " + std::to_string(cfg.tau) + "x" +
                            std::to_string(cfg.d) + ", got " + shape_str(h.shape()));
        auto hp = reshape(h, {(int64_t)(cfg.tau / cfg.s), (int64_t)(cfg.d * cfg.s)}, tp);
        auto x = add_rowvec(matmul(hp, params_.get("mlp1.w"), tp), params_.get("mlp1.b"), tp);
        x = silu(x, tp);
        x = add_rowvec(matmul(x, params_.get("mlp2.w"), tp), params_.get("mlp2.b"), tp);
        x = silu(x, tp);
        return add_rowvec(matmul(x, params_.get("mlp3.w"), tp), params_.get("mlp3.b"), tp);
    }

    param_map<R> & params() override { return params_; }

  private:
    param_map<R> params_;
};

// valid 1-D convolution (kernel 8, stride 8, out-channels gamma)
// followed by a single gamma -> gamma linear layer
template <class R>
class conv1d_adaptor : public adaptor<R> {
  public:
    conv1d_adaptor(const adaptor_config & cfg, rng & r) : adaptor<R>(cfg) {
        params_.add("conv.w", randn_tensor<R>({(int64_t)cfg.kernel, (int64_t)cfg.d, (int64_t)cfg.gamma},
                                              r, 1.0 / std::sqrt((double)(cfg.kernel * cfg.d))));
        params_.add("conv.b", tensor<R>({(int64_t)cfg.gamma}, true));
        params_.add("mlp.w", randn_tensor<R>({(int64_t)cfg.gamma, (int64_t)cfg.gamma},
                                             r, 1.0 / std::sqrt((double)cfg.gamma)));
        params_.add("mlp.b", tensor<R>({(int64_t)cfg.gamma}, true));
    }

    tensor<R> forward(tensor<R> h, tape<R> * tp = nullptr) override {
        const auto & cfg = this->cfg_;
        auto x = conv1d(h, params_.get("conv.w"), cfg.stride, tp);
        x = add_rowvec(x, params_.get("conv.b"), tp);
        return add_rowvec(matmul(x, params_.get("mlp.w"), tp), params_.get("mlp.b"), tp);
    }

    param_map<R> & params() override { return params_; }

  private:
    param_map<R> params_;
};

// Learned query tokens cross-attend to non-overlapping windows of
// frames; window outputs are concatenated in time order and projected
// to gamma. Queries carry no positional encoding, so each window's
// output is invariant to permuting the frames inside that window.
template <class R>
class qformer_adaptor : public adaptor<R> {
  public:
    qformer_adaptor(const adaptor_config & cfg, rng & r) : adaptor<R>(cfg) {
        const int d = cfg.d;
        auto lin = [&](int64_t in, int64_t out) {
            return randn_tensor<R>({in, out}, r, 1.0 / std::sqrt((double)in));
        };
        params_.add("queries", randn_tensor<R>({(int64_t)cfg.n_queries_per_window, (int64_t)d}, r, 0.02));
        for (int l = 0; l < cfg.qf_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "ln_q.g", full_tensor<R>({(int64_t)d}, (R)1));
            params_.add(p + "ln_q.b", tensor<R>({(int64_t)d}, true));
            params_.add(p + "wq", lin(d, d));
            params_.add(p + "wk", lin(d, d));
            params_.add(p + "wv", lin(d, d));
            params_.add(p + "wo", lin(d, d));
            params_.add(p + "ln_m.g", full_tensor<R>({(int64_t)d}, (R)1));
            params_.add(p + "ln_m.b", tensor<R>({(int64_t)d}, true));
            params_.add(p + "mlp.w1", lin(d, 4 * d));
            params_.add(p + "mlp.b1", tensor<R>({(int64_t)(4 * d)}, true));
            params_.add(p + "mlp.w2", lin(4 * d, d));
            params_.add(p + "mlp.b2", tensor<R>({(int64_t)d}, true));
        }
        params_.add("proj.w", lin(d, cfg.gamma));
        params_.add("proj.b", tensor<R>({(int64_t)cfg.gamma}, true));
    }

    tensor<R> forward(tensor<R> h, tape<R> * tp = nullptr) override {
        const auto & cfg = this->cfg_;
        const int n_windows = cfg.tau / cfg.window_frames;
        std::vector<tensor<R>> outs;
        outs.reserve((size_t)n_windows);
        for (int w = 0; w < n_windows; ++w) {
            auto frames = slice_rows(h, (int64_t)w * cfg.window_frames,
                                     (int64_t)(w + 1) * cfg.window_frames, tp);
            auto q = params_.get("queries");
            for (int l = 0; l < cfg.qf_layers; ++l) {
                std::string p = "layer" + std::to_string(l) + ".";
                auto qn = layer_norm(q, params_.get(p + "ln_q.g"), params_.get(p + "ln_q.b"), 1e-5, tp);
                auto qq = matmul(qn, params_.get(p + "wq"), tp);
                auto kk = matmul(frames, params_.get(p + "wk"), tp);
                auto vv = matmul(frames, params_.get(p + "wv"), tp);
                auto att = multihead_attention(qq, kk, vv, 1, /*causal=*/false, tp);
                q = add(q, matmul(att, params_.get(p + "wo"), tp), tp);
                auto mn = layer_norm(q, params_.get(p + "ln_m.g"), params_.get(p + "ln_m.b"), 1e-5, tp);
                auto m = silu(add_rowvec(matmul(mn, params_.get(p + "mlp.w1"), tp),
                                         params_.get(p + "mlp.b1"), tp), tp);
                q = add(q, add_rowvec(matmul(m, params_.get(p + "mlp.w2"), tp),
                                      params_.get(p + "mlp.b2"), tp), tp);
            }
            outs.push_back(q);
        }
        auto cat = concat_rows(outs, tp);
        return add_rowvec(matmul(cat, params_.get("proj.w"), tp), params_.get("proj.b"), tp);
    }

    param_map<R> & params() override { return params_; }

  private:
    param_map<R> params_;
};

template <class R>
std::unique_ptr<adaptor<R>> make_adaptor(const adaptor_config & cfg, rng & r) {
    cfg.validate();
    switch (cfg.variant) {
        case adaptor_variant::rescale_mlp: return std::make_unique<rescale_mlp_adaptor<R>>(cfg, r);
        case adaptor_variant::conv1d: return std::make_unique<conv1d_adaptor<R>>(cfg, r);
        case adaptor_variant::q_former: return std::make_unique<qformer_adaptor<R>>(cfg, r);
    }
    throw config_error("adaptor: unknown variant");
}

} // namespace singfuse
