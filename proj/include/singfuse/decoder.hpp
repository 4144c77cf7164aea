#pragma once

// Decoder-only causal language model with LoRA-wrapped projections.
// Speech tokens from an adaptor are spliced between <speech> markers
// ahead of the instruction; loss is computed on response positions only.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "singfuse/config.hpp"
#include "singfuse/params.hpp"
#include "singfuse/tensor.hpp"
#include "singfuse/tokenizer.hpp"

namespace singfuse {

struct decoder_config {
    int gamma = 64;
    int n_layers = 2;
    int n_heads = 4;
    int vocab_size = tokenizer::vocab_size;
    std::string family_name = "toy-gemma";

    void validate() const {
        if (gamma % n_heads != 0)
            throw config_error("decoder: gamma " + std::to_string(gamma) +
                               " not divisible by n_heads " + std::to_string(n_heads));
    }

    static decoder_config from_run_config(const run_config & cfg) {
        decoder_config d;
        d.gamma = (int)cfg.get_int("decoder.gamma", 64);
        d.n_layers = (int)cfg.get_int("decoder.n_layers", 2);
        d.n_heads = (int)cfg.get_int("decoder.n_heads", 4);
        d.family_name = cfg.get_str("decoder.family", "toy-gemma");
        return d;
    }
};

struct lora_config {
    int r = 8;
    double alpha = 16.0;
    std::vector<std::string> targets = {"attn.wq", "attn.wv"};

    static lora_config from_run_config(const run_config & cfg) {
        lora_config l;
        l.r = (int)cfg.get_int("lora.r", 8);
        l.alpha = cfg.get_double("lora.alpha", 16.0);
        std::string t = cfg.get_str("lora.targets", "attn.wq,attn.wv");
        l.targets.clear();
        size_t pos = 0;
        while (pos < t.size()) {
            size_t comma = t.find(',', pos);
            if (comma == std::string::npos) comma = t.size();
            std::string item = trim(t.substr(pos, comma - pos));
            if (!item.empty()) l.targets.push_back(item);
            pos = comma + 1;
        }
        return l;
    }
};

// Low-rank additive update on a frozen base weight W [in x out]:
// effective weight = W + (alpha/r) * A * B with A [in x r], B [r x out].
// B starts at zero so a freshly wrapped layer matches the base exactly.
template <class R>
struct lora_layer {
    tensor<R> a, b;
    int r = 0;
    double alpha = 0.0;

    R scaling() const { return (R)(alpha / (double)r); }
};

struct span {
    int64_t begin = 0, end = 0;
    int64_t len() const { return end - begin; }
};

// assembled "<preamble> <speech> s_tokens </speech> instruction
// <assistant> [response <eos>]" sequence, embedded
template <class R>
struct fused_sequence {
    tensor<R> embeddings;            // N x gamma
    std::vector<int> token_ids;      // -1 on speech rows
    std::vector<bool> loss_mask;     // true on response + eos positions only
    span speech, prompt, response;
};

template <class R>
class decoder {
  public:
    decoder(const decoder_config & cfg, rng & r) : cfg_(cfg) {
        cfg_.validate();
        const int g = cfg_.gamma;
        auto lin = [&](int64_t in, int64_t out) {
            return randn_tensor<R>({in, out}, r, 1.0 / std::sqrt((double)in));
        };
        params_.add("embed", randn_tensor<R>({(int64_t)cfg_.vocab_size, (int64_t)g}, r, 0.02));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            params_.add(p + "ln1.g", full_tensor<R>({(int64_t)g}, (R)1));
            params_.add(p + "ln1.b", tensor<R>({(int64_t)g}, true));
            for (const char * w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
                params_.add(p + w, lin(g, g));
            for (const char * b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
                params_.add(p + b, tensor<R>({(int64_t)g}, true));
            params_.add(p + "ln2.g", full_tensor<R>({(int64_t)g}, (R)1));
            params_.add(p + "ln2.b", tensor<R>({(int64_t)g}, true));
            params_.add(p + "mlp.w1", lin(g, 4 * g));
            params_.add(p + "mlp.b1", tensor<R>({(int64_t)(4 * g)}, true));
            params_.add(p + "mlp.w2", lin(4 * g, g));
            params_.add(p + "mlp.b2", tensor<R>({(int64_t)g}, true));
        }
        params_.add("ln_f.g", full_tensor<R>({(int64_t)g}, (R)1));
        params_.add("ln_f.b", tensor<R>({(int64_t)g}, true));
        params_.add("head.w", lin(g, cfg_.vocab_size));
        positions_ = max_positions_cache(0);
    }

    const decoder_config & config() const { return cfg_; }
    param_map<R> & params() { return params_; }
    const param_map<R> & params() const { return params_; }

    bool wrapped() const { return !lora_.empty(); }
    const lora_config & lora_cfg() const { return lora_cfg_; }
    std::map<std::string, lora_layer<R>> & lora_layers() { return lora_; }

    // Freeze every base parameter and attach zero-initialized LoRA
    // factors to the named projections (matched per block, or exact
    // names like "head.w").
    void lora_wrap(const lora_config & lc, rng & r) {
        if (lc.r < 1) throw config_error("lora: rank must be >= 1");
        for (auto & [name, t] : params_.items()) t.set_requires_grad(false);
        lora_cfg_ = lc;
        lora_.clear();
        for (const auto & target : lc.targets) {
            bool matched = false;
            for (auto & [name, t] : params_.items()) {
                // "attn.wq" matches every block's attn.wq; full names match directly
                if (name != target &&
                    !(name.size() > target.size() &&
                      name.compare(name.size() - target.size() - 1, target.size() + 1,
                                   "." + target) == 0))
                    continue;
                if (t.shape().size() != 2)
                    throw config_error("lora: target " + name + " is not a matrix");
                matched = true;
                lora_layer<R> ll;
                ll.r = lc.r;
                ll.alpha = lc.alpha;
                ll.a = randn_tensor<R>({t.dim(0), (int64_t)lc.r}, r, 0.01);
                ll.b = tensor<R>({(int64_t)lc.r, t.dim(1)}, true);  // zeros
                lora_[name] = std::move(ll);
            }
            if (!matched) throw config_error("lora: no projection matches target '" + target + "'");
        }
    }

    // Fold every LoRA delta into its base weight and drop the factors;
    // merged forward equals the wrapped forward.
    void lora_merge() {
        for (auto & [name, ll] : lora_) {
            auto & w = params_.get(name);
            const int64_t in = w.dim(0), out = w.dim(1);
            const R s = ll.scaling();
            for (int64_t i = 0; i < in; ++i)
                for (int64_t k = 0; k < ll.r; ++k) {
                    const R av = ll.a.at(i, k);
                    if (av == R(0)) continue;
                    for (int64_t j = 0; j < out; ++j)
                        w.at(i, j) += s * av * ll.b.at(k, j);
                }
        }
        lora_.clear();
    }

    fused_sequence<R> assemble_prompt(tensor<R> s_tokens, const std::string & instruction,
                                      const std::optional<std::string> & response,
                                      tape<R> * tp = nullptr) {
        if (instruction.empty()) throw config_error("assemble_prompt: empty instruction");
        std::vector<int> pre = {tokenizer::bos, tokenizer::role_user, tokenizer::speech_open};
        std::vector<int> instr_ids = tokenizer::encode(instruction);
        std::vector<int> post = {tokenizer::speech_close};
        post.insert(post.end(), instr_ids.begin(), instr_ids.end());
        post.push_back(tokenizer::role_assistant);

        std::vector<int> resp_ids;
        if (response) {
            resp_ids = tokenizer::encode(*response);
            resp_ids.push_back(tokenizer::eos);
        }

        fused_sequence<R> seq;
        const int64_t sl = s_tokens.dim(0);
        seq.speech   = {(int64_t)pre.size(), (int64_t)pre.size() + sl};
        seq.prompt   = {seq.speech.end + 1, seq.speech.end + 1 + (int64_t)instr_ids.size()};
        seq.response = {seq.speech.end + (int64_t)post.size() + 0,
                        seq.speech.end + (int64_t)post.size() + (int64_t)resp_ids.size()};

        std::vector<tensor<R>> parts;
        parts.push_back(embedding_lookup(params_.get("embed"), pre, tp));
        parts.push_back(s_tokens);
        std::vector<int> tail = post;
        tail.insert(tail.end(), resp_ids.begin(), resp_ids.end());
        parts.push_back(embedding_lookup(params_.get("embed"), tail, tp));
        seq.embeddings = concat_rows(parts, tp);

        seq.token_ids.assign(pre.begin(), pre.end());
        seq.token_ids.insert(seq.token_ids.end(), (size_t)sl, -1);
        seq.token_ids.insert(seq.token_ids.end(), tail.begin(), tail.end());

        seq.loss_mask.assign(seq.token_ids.size(), false);
        for (int64_t i = seq.response.begin; i < seq.response.end; ++i) seq.loss_mask[i] = true;
        return seq;
    }

    // causal transformer over embeddings -> logits [N x vocab]
    tensor<R> forward_logits(tensor<R> emb, tape<R> * tp = nullptr) {
        const int64_t n = emb.dim(0);
        auto h = add(emb, position_slice(n), tp);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            auto normed = layer_norm(h, params_.get(p + "ln1.g"), params_.get(p + "ln1.b"), 1e-5, tp);
            auto q = add_rowvec(proj(normed, p + "attn.wq", tp), params_.get(p + "attn.bq"), tp);
            auto k = add_rowvec(proj(normed, p + "attn.wk", tp), params_.get(p + "attn.bk"), tp);
            auto v = add_rowvec(proj(normed, p + "attn.wv", tp), params_.get(p + "attn.bv"), tp);
            auto att = multihead_attention(q, k, v, cfg_.n_heads, /*causal=*/true, tp);
            att = add_rowvec(proj(att, p + "attn.wo", tp), params_.get(p + "attn.bo"), tp);
            h = add(h, att, tp);

            auto normed2 = layer_norm(h, params_.get(p + "ln2.g"), params_.get(p + "ln2.b"), 1e-5, tp);
            auto m = gelu(add_rowvec(proj(normed2, p + "mlp.w1", tp), params_.get(p + "mlp.b1"), tp), tp);
            m = add_rowvec(proj(m, p + "mlp.w2", tp), params_.get(p + "mlp.b2"), tp);
            h = add(h, m, tp);
        }
        h = layer_norm(h, params_.get("ln_f.g"), params_.get("ln_f.b"), 1e-5, tp);
        return proj(h, "head.w", tp);
    }

    // mean masked CE; the token at a masked position is predicted from
    // the logits one position earlier
    tensor<R> forward_loss(const fused_sequence<R> & seq, tape<R> * tp = nullptr) {
        const int64_t n = seq.embeddings.dim(0);
        auto logits = forward_logits(seq.embeddings, tp);
        std::vector<int> targets((size_t)n, 0);
        std::vector<bool> mask((size_t)n, false);
        for (int64_t i = 0; i + 1 < n; ++i) {
            if (seq.loss_mask[i + 1]) {
                if (seq.token_ids[i + 1] < 0)
                    throw config_error("forward_loss: masked position has no token id");
                targets[i] = seq.token_ids[i + 1];
                mask[i] = true;
            }
        }
        return softmax_cross_entropy(logits, targets, mask, tp);
    }

    // greedy decoding until eos or max_new tokens
    std::string generate(const fused_sequence<R> & seq, int max_new) {
        std::vector<tensor<R>> parts = {seq.embeddings};
        std::vector<int> out_ids;
        for (int step = 0; step < max_new; ++step) {
            auto emb = parts.size() == 1 ? parts[0] : concat_rows(parts);
            auto logits = forward_logits(emb);
            const int64_t last = logits.dim(0) - 1;
            int best = 0;
            R best_v = logits.at(last, 0);
            for (int j = 1; j < cfg_.vocab_size; ++j)
                if (logits.at(last, j) > best_v) { best_v = logits.at(last, j); best = j; }
            if (best == tokenizer::eos) break;
            out_ids.push_back(best);
            parts.push_back(embedding_lookup(params_.get("embed"), {best}));
        }
        return tokenizer::decode(out_ids);
    }

  private:
    tensor<R> proj(tensor<R> x, const std::string & name, tape<R> * tp) {
        auto & w = params_.get(name);
        auto y = matmul(x, w, tp);
        auto it = lora_.find(name);
        if (it != lora_.end()) {
            auto & ll = it->second;
            auto delta = matmul(matmul(x, ll.a, tp), ll.b, tp);
            y = add(y, scale(delta, ll.scaling(), tp), tp);
        }
        return y;
    }

    tensor<R> position_slice(int64_t n) {
        if (n > positions_.dim(0)) positions_ = max_positions_cache(n);
        return slice_rows(positions_, 0, n);
    }

    tensor<R> max_positions_cache(int64_t need) {
        int64_t cap = std::max<int64_t>(need, 512);
        tensor<R> pe({cap, (int64_t)cfg_.gamma});
        int half = cfg_.gamma / 2;
        for (int64_t pos = 0; pos < cap; ++pos)
            for (int i = 0; i < half; ++i) {
                double div = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
                pe.at(pos, i) = (R)std::sin((double)pos * div);
                pe.at(pos, half + i) = (R)std::cos((double)pos * div);
            }
        return pe;
    }

    decoder_config cfg_;
    param_map<R> params_;
    std::map<std::string, lora_layer<R>> lora_;
    lora_config lora_cfg_;
    tensor<R> positions_;
};

} // namespace singfuse
