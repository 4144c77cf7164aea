#pragma once

// Reverse-mode autodiff over dense tensors. Templated on the scalar type:
// float for training, double for finite-difference verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "singfuse/common.hpp"

namespace singfuse {

inline int64_t numel_of(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int64_t> & shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <class R>
struct tensor_node {
    std::vector<int64_t> shape;
    std::vector<R> data;
    std::vector<R> grad;          // empty until backward touches it
    bool requires_grad = false;   // leaf parameter flag
    bool produced = false;        // set when an op on a tape created it
};

template <class R>
class tensor {
  public:
    tensor() = default;

    explicit tensor(std::vector<int64_t> shape, bool requires_grad = false) {
        p_ = std::make_shared<tensor_node<R>>();
        p_->shape = std::move(shape);
        p_->data.assign(numel_of(p_->shape), R(0));
        p_->requires_grad = requires_grad;
    }

    tensor(std::vector<int64_t> shape, std::vector<R> data, bool requires_grad = false) {
        p_ = std::make_shared<tensor_node<R>>();
        p_->shape = std::move(shape);
        p_->data  = std::move(data);
        p_->requires_grad = requires_grad;
        if ((int64_t)p_->data.size() != numel_of(p_->shape)) {
            throw dim_error("tensor: data size " + std::to_string(p_->data.size()) +
                            " does not match shape " + shape_str(p_->shape));
        }
    }

    bool defined() const { return (bool)p_; }

    const std::vector<int64_t> & shape() const { return p_->shape; }
    int64_t dim(int i) const { return p_->shape[i]; }
    int64_t numel() const { return (int64_t)p_->data.size(); }

    std::vector<R> & data() { return p_->data; }
    const std::vector<R> & data() const { return p_->data; }

    R & at(int64_t i) { return p_->data[i]; }
    R at(int64_t i) const { return p_->data[i]; }

    // row-major 2-D access
    R & at(int64_t r, int64_t c) { return p_->data[r * p_->shape[1] + c]; }
    R at(int64_t r, int64_t c) const { return p_->data[r * p_->shape[1] + c]; }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool v) { p_->requires_grad = v; }

    bool produced() const { return p_->produced; }
    void mark_produced() { p_->produced = true; }

    // grads flow into leaves marked trainable and into every op output
    bool needs_grad() const { return p_->requires_grad || p_->produced; }

    bool has_grad() const { return !p_->grad.empty(); }

    std::vector<R> & grad() {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), R(0));
        return p_->grad;
    }

    const std::vector<R> & grad_ro() const { return p_->grad; }

    void zero_grad() { p_->grad.clear(); }

    void accumulate(const std::vector<R> & g) {
        auto & dst = grad();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }

    tensor_node<R> * node() const { return p_.get(); }

    bool all_finite() const {
        for (R v : p_->data) if (!std::isfinite((double)v)) return false;
        return true;
    }

  private:
    std::shared_ptr<tensor_node<R>> p_;
};

// Ordered record of executed differentiable ops. Backward replays the
// closures in exact reverse order; every closure accumulates (adds)
// into its inputs' grads, never overwrites.
template <class R>
class tape {
  public:
    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    size_t size() const { return ops_.size(); }

    void backward(tensor<R> loss) {
        if (loss.numel() != 1) throw dim_error("backward: loss must be scalar");
        loss.grad()[0] += R(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }

  private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {

template <class R>
tensor<R> make_output(std::vector<int64_t> shape, tape<R> * tp) {
    tensor<R> out(std::move(shape));
    if (tp) out.mark_produced();
    return out;
}

} // namespace detail

// ---- elementwise ----

template <class R>
tensor<R> add(tensor<R> a, tensor<R> b, tape<R> * tp = nullptr) {
    if (a.shape() != b.shape()) {
        throw dim_error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = detail::make_output<R>(a.shape(), tp);
    for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
    if (tp) tp->record([a, b, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        if (a.needs_grad()) a.accumulate(g);
        if (b.needs_grad()) b.accumulate(g);
    });
    return out;
}

template <class R>
tensor<R> mul(tensor<R> a, tensor<R> b, tape<R> * tp = nullptr) {
    if (a.shape() != b.shape()) {
        throw dim_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = detail::make_output<R>(a.shape(), tp);
    for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
    if (tp) tp->record([a, b, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        if (a.needs_grad()) {
            auto & ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.at((int64_t)i);
        }
        if (b.needs_grad()) {
            auto & gb = b.grad();
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.at((int64_t)i);
        }
    });
    return out;
}

template <class R>
tensor<R> scale(tensor<R> a, R c, tape<R> * tp = nullptr) {
    auto out = detail::make_output<R>(a.shape(), tp);
    for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * c;
    if (tp) tp->record([a, out, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !a.needs_grad()) return;
        auto & ga = a.grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * c;
    });
    return out;
}

// x[N x C] + b[C], broadcast over rows
template <class R>
tensor<R> add_rowvec(tensor<R> x, tensor<R> b, tape<R> * tp = nullptr) {
    if (x.shape().size() != 2 || b.numel() != x.dim(1)) {
        throw dim_error("add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    auto out = detail::make_output<R>(x.shape(), tp);
    const int64_t n = x.dim(0), c = x.dim(1);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
    if (tp) tp->record([x, b, out, n, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        if (x.needs_grad()) x.accumulate(g);
        if (b.needs_grad()) {
            auto & gb = b.grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
    });
    return out;
}

template <class R>
tensor<R> silu(tensor<R> x, tape<R> * tp = nullptr) {
    auto out = detail::make_output<R>(x.shape(), tp);
    for (int64_t i = 0; i < x.numel(); ++i) {
        double v = (double)x.at(i);
        out.at(i) = (R)(v / (1.0 + std::exp(-v)));
    }
    if (tp) tp->record([x, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (size_t i = 0; i < gx.size(); ++i) {
            double v = (double)x.at((int64_t)i);
            double s = 1.0 / (1.0 + std::exp(-v));
            gx[i] += g[i] * (R)(s * (1.0 + v * (1.0 - s)));
        }
    });
    return out;
}

// tanh-approximation GELU, used in the encoder conv stem
template <class R>
tensor<R> gelu(tensor<R> x, tape<R> * tp = nullptr) {
    constexpr double k = 0.7978845608028654; // sqrt(2/pi)
    auto out = detail::make_output<R>(x.shape(), tp);
    for (int64_t i = 0; i < x.numel(); ++i) {
        double v = (double)x.at(i);
        out.at(i) = (R)(0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v))));
    }
    if (tp) tp->record([x, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (size_t i = 0; i < gx.size(); ++i) {
            double v = (double)x.at((int64_t)i);
            double u = k * (v + 0.044715 * v * v * v);
            double t = std::tanh(u);
            double du = k * (1.0 + 3.0 * 0.044715 * v * v);
            gx[i] += g[i] * (R)(0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
    });
    return out;
}

// ---- linear algebra ----

template <class R>
tensor<R> matmul(tensor<R> a, tensor<R> b, tape<R> * tp = nullptr) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
        throw dim_error("matmul: incompatible shapes " + shape_str(a.shape()) +
                        " x " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::make_output<R>({m, n}, tp);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const R av = a.at(i, p);
            if (av == R(0)) continue;
            for (int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    if (tp) tp->record([a, b, out, m, k, n]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        if (a.needs_grad()) {
            auto & ga = a.grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    const R gv = g[i * n + j];
                    if (gv == R(0)) continue;
                    for (int64_t p = 0; p < k; ++p) ga[i * k + p] += gv * b.at(p, j);
                }
        }
        if (b.needs_grad()) {
            auto & gb = b.grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    const R av = a.at(i, p);
                    if (av == R(0)) continue;
                    for (int64_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
        }
    });
    return out;
}

template <class R>
tensor<R> transpose2d(tensor<R> x, tape<R> * tp = nullptr) {
    if (x.shape().size() != 2) throw dim_error("transpose2d: need 2-D, got " + shape_str(x.shape()));
    const int64_t r = x.dim(0), c = x.dim(1);
    auto out = detail::make_output<R>({c, r}, tp);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
    if (tp) tp->record([x, out, r, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
    return out;
}

// flat data order is preserved; element count must match
template <class R>
tensor<R> reshape(tensor<R> x, std::vector<int64_t> new_shape, tape<R> * tp = nullptr) {
    if (numel_of(new_shape) != x.numel()) {
        throw dim_error("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                        " changes element count");
    }
    auto out = detail::make_output<R>(new_shape, tp);
    out.data() = x.data();
    if (tp) tp->record([x, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        x.accumulate(g);
    });
    return out;
}

// valid (unpadded) 1-D convolution: x[L x Cin], w[K x Cin x Cout]
template <class R>
tensor<R> conv1d(tensor<R> x, tensor<R> w, int64_t stride, tape<R> * tp = nullptr) {
    if (x.shape().size() != 2 || w.shape().size() != 3 || x.dim(1) != w.dim(1)) {
        throw dim_error("conv1d: incompatible shapes " + shape_str(x.shape()) +
                        " * " + shape_str(w.shape()));
    }
    const int64_t len = x.dim(0), cin = x.dim(1), k = w.dim(0), cout = w.dim(2);
    if (len < k) {
        throw dim_error("conv1d: input length " + std::to_string(len) +
                        " shorter than kernel " + std::to_string(k));
    }
    const int64_t lout = (len - k) / stride + 1;
    auto out = detail::make_output<R>({lout, cout}, tp);
    auto widx = [cin, cout](int64_t kk, int64_t ci, int64_t co) {
        return (kk * cin + ci) * cout + co;
    };
    for (int64_t l = 0; l < lout; ++l)
        for (int64_t kk = 0; kk < k; ++kk)
            for (int64_t ci = 0; ci < cin; ++ci) {
                const R xv = x.at(l * stride + kk, ci);
                if (xv == R(0)) continue;
                for (int64_t co = 0; co < cout; ++co)
                    out.at(l, co) += xv * w.at(widx(kk, ci, co));
            }
    if (tp) tp->record([x, w, out, stride, len, cin, k, cout, lout, widx]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        if (x.needs_grad()) {
            auto & gx = x.grad();
            for (int64_t l = 0; l < lout; ++l)
                for (int64_t co = 0; co < cout; ++co) {
                    const R gv = g[l * cout + co];
                    if (gv == R(0)) continue;
                    for (int64_t kk = 0; kk < k; ++kk)
                        for (int64_t ci = 0; ci < cin; ++ci)
                            gx[(l * stride + kk) * cin + ci] += gv * w.at(widx(kk, ci, co));
                }
        }
        if (w.needs_grad()) {
            auto & gw = w.grad();
            for (int64_t l = 0; l < lout; ++l)
                for (int64_t kk = 0; kk < k; ++kk)
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        const R xv = x.at(l * stride + kk, ci);
                        if (xv == R(0)) continue;
                        for (int64_t co = 0; co < cout; ++co)
                            gw[widx(kk, ci, co)] += xv * g[l * cout + co];
                    }
        }
    });
    return out;
}

// zero-pad rows of a 2-D tensor (used for same-padding conv stems)
template <class R>
tensor<R> pad_rows(tensor<R> x, int64_t before, int64_t after, tape<R> * tp = nullptr) {
    const int64_t r = x.dim(0), c = x.dim(1);
    auto out = detail::make_output<R>({r + before + after, c}, tp);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(i + before, j) = x.at(i, j);
    if (tp) tp->record([x, out, before, r, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[(i + before) * c + j];
    });
    return out;
}

template <class R>
tensor<R> slice_rows(tensor<R> x, int64_t r0, int64_t r1, tape<R> * tp = nullptr) {
    const int64_t c = x.dim(1);
    if (r0 < 0 || r1 > x.dim(0) || r0 > r1) throw dim_error("slice_rows: bad range");
    auto out = detail::make_output<R>({r1 - r0, c}, tp);
    std::copy(x.data().begin() + r0 * c, x.data().begin() + r1 * c, out.data().begin());
    if (tp) tp->record([x, out, r0, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i) gx[r0 * c + (int64_t)i] += g[i];
    });
    return out;
}

template <class R>
tensor<R> slice_cols(tensor<R> x, int64_t c0, int64_t c1, tape<R> * tp = nullptr) {
    const int64_t r = x.dim(0), c = x.dim(1);
    if (c0 < 0 || c1 > c || c0 > c1) throw dim_error("slice_cols: bad range");
    auto out = detail::make_output<R>({r, c1 - c0}, tp);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
    if (tp) tp->record([x, out, c0, c1, r, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        const int64_t w = c1 - c0;
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < w; ++j) gx[i * c + c0 + j] += g[i * w + j];
    });
    return out;
}

template <class R>
tensor<R> concat_rows(const std::vector<tensor<R>> & parts, tape<R> * tp = nullptr) {
    if (parts.empty()) throw dim_error("concat_rows: empty input");
    const int64_t c = parts[0].dim(1);
    int64_t rows = 0;
    for (const auto & p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != c)
            throw dim_error("concat_rows: column mismatch " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    auto out = detail::make_output<R>({rows, c}, tp);
    int64_t off = 0;
    for (const auto & p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.numel();
    }
    std::vector<tensor<R>> kept(parts.begin(), parts.end());
    if (tp) tp->record([kept, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        int64_t off = 0;
        for (auto & p : kept) {
            if (p.needs_grad()) {
                auto & gp = p.grad();
                for (int64_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
            }
            off += p.numel();
        }
    });
    return out;
}

template <class R>
tensor<R> concat_cols(const std::vector<tensor<R>> & parts, tape<R> * tp = nullptr) {
    if (parts.empty()) throw dim_error("concat_cols: empty input");
    const int64_t r = parts[0].dim(0);
    int64_t cols = 0;
    for (const auto & p : parts) {
        if (p.shape().size() != 2 || p.dim(0) != r)
            throw dim_error("concat_cols: row mismatch " + shape_str(p.shape()));
        cols += p.dim(1);
    }
    auto out = detail::make_output<R>({r, cols}, tp);
    int64_t off = 0;
    for (const auto & p : parts) {
        const int64_t pc = p.dim(1);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < pc; ++j) out.at(i, off + j) = p.at(i, j);
        off += pc;
    }
    std::vector<tensor<R>> kept(parts.begin(), parts.end());
    if (tp) tp->record([kept, out, r, cols]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        int64_t off = 0;
        for (auto & p : kept) {
            const int64_t pc = p.dim(1);
            if (p.needs_grad()) {
                auto & gp = p.grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + off + j];
            }
            off += pc;
        }
    });
    return out;
}

// gather rows of a table: out[i] = table[ids[i]]
template <class R>
tensor<R> embedding_lookup(tensor<R> table, const std::vector<int> & ids, tape<R> * tp = nullptr) {
    const int64_t v = table.dim(0), c = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v)
            throw dim_error("embedding_lookup: id " + std::to_string(id) +
                            " out of range [0," + std::to_string(v) + ")");
    }
    auto out = detail::make_output<R>({(int64_t)ids.size(), c}, tp);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table.data().begin() + ids[i] * c, table.data().begin() + (ids[i] + 1) * c,
                  out.data().begin() + (int64_t)i * c);
    if (tp) tp->record([table, out, ids, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !table.needs_grad()) return;
        auto & gt = table.grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < c; ++j) gt[ids[i] * c + j] += g[(int64_t)i * c + j];
    });
    return out;
}

// ---- normalization / softmax / loss ----

template <class R>
tensor<R> layer_norm(tensor<R> x, tensor<R> gain, tensor<R> bias, double eps = 1e-5,
                     tape<R> * tp = nullptr) {
    const int64_t n = x.dim(0), c = x.dim(1);
    if (gain.numel() != c || bias.numel() != c)
        throw dim_error("layer_norm: affine size mismatch");
    auto out = detail::make_output<R>(x.shape(), tp);
    std::vector<double> means(n), istds(n);
    for (int64_t i = 0; i < n; ++i) {
        double m = 0;
        for (int64_t j = 0; j < c; ++j) m += (double)x.at(i, j);
        m /= (double)c;
        double var = 0;
        for (int64_t j = 0; j < c; ++j) {
            double d = (double)x.at(i, j) - m;
            var += d * d;
        }
        var /= (double)c;
        double istd = 1.0 / std::sqrt(var + eps);
        means[i] = m;
        istds[i] = istd;
        for (int64_t j = 0; j < c; ++j)
            out.at(i, j) = (R)(((double)x.at(i, j) - m) * istd) * gain.at(j) + bias.at(j);
    }
    if (tp) tp->record([x, gain, bias, out, means, istds, n, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty()) return;
        for (int64_t i = 0; i < n; ++i) {
            double sum_gy = 0, sum_gyxhat = 0;
            std::vector<double> xhat(c), gy(c);
            for (int64_t j = 0; j < c; ++j) {
                xhat[j] = ((double)x.at(i, j) - means[i]) * istds[i];
                gy[j] = (double)g[i * c + j] * (double)gain.at(j);
                sum_gy += gy[j];
                sum_gyxhat += gy[j] * xhat[j];
            }
            if (x.needs_grad()) {
                auto & gx = x.grad();
                for (int64_t j = 0; j < c; ++j)
                    gx[i * c + j] += (R)(istds[i] * (gy[j] - sum_gy / c - xhat[j] * sum_gyxhat / c));
            }
            if (gain.needs_grad()) {
                auto & gg = gain.grad();
                for (int64_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * (R)xhat[j];
            }
            if (bias.needs_grad()) {
                auto & gb = bias.grad();
                for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
            }
        }
    });
    return out;
}

// row-wise softmax with max-subtraction
template <class R>
tensor<R> softmax_rows(tensor<R> x, tape<R> * tp = nullptr) {
    const int64_t n = x.dim(0), c = x.dim(1);
    auto out = detail::make_output<R>(x.shape(), tp);
    for (int64_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < c; ++j) mx = std::max(mx, (double)x.at(i, j));
        double z = 0;
        for (int64_t j = 0; j < c; ++j) z += std::exp((double)x.at(i, j) - mx);
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = (R)(std::exp((double)x.at(i, j) - mx) / z);
    }
    if (tp) tp->record([x, out, n, c]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (int64_t i = 0; i < n; ++i) {
            double dot = 0;
            for (int64_t j = 0; j < c; ++j) dot += (double)g[i * c + j] * (double)out.at(i, j);
            for (int64_t j = 0; j < c; ++j)
                gx[i * c + j] += (R)(((double)g[i * c + j] - dot) * (double)out.at(i, j));
        }
    });
    return out;
}

// mean NLL over unmasked positions; all-masked input yields zero loss
template <class R>
tensor<R> softmax_cross_entropy(tensor<R> logits, const std::vector<int> & targets,
                                const std::vector<bool> & mask, tape<R> * tp = nullptr) {
    const int64_t n = logits.dim(0), v = logits.dim(1);
    if ((int64_t)targets.size() != n || (int64_t)mask.size() != n)
        throw dim_error("softmax_cross_entropy: targets/mask length must equal row count");
    int64_t count = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        ++count;
        if (targets[i] < 0 || targets[i] >= v)
            throw dim_error("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                            " out of range [0," + std::to_string(v) + ")");
    }
    auto out = detail::make_output<R>({1}, tp);
    if (count == 0) return out;

    // cache softmax for the backward pass
    auto probs = std::make_shared<std::vector<double>>((size_t)(n * v));
    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < v; ++j) mx = std::max(mx, (double)logits.at(i, j));
        double z = 0;
        for (int64_t j = 0; j < v; ++j) z += std::exp((double)logits.at(i, j) - mx);
        for (int64_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp((double)logits.at(i, j) - mx) / z;
        if (mask[i]) loss -= std::log(std::max((*probs)[i * v + targets[i]], 1e-300));
    }
    out.at(0) = (R)(loss / (double)count);
    if (tp) tp->record([logits, out, probs, targets, mask, n, v, count]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !logits.needs_grad()) return;
        const double go = (double)g[0] / (double)count;
        auto & gl = logits.grad();
        for (int64_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            for (int64_t j = 0; j < v; ++j) {
                double p = (*probs)[i * v + j];
                gl[i * v + j] += (R)(go * (p - (j == targets[i] ? 1.0 : 0.0)));
            }
        }
    });
    return out;
}

template <class R>
tensor<R> sum(tensor<R> x, tape<R> * tp = nullptr) {
    auto out = detail::make_output<R>({1}, tp);
    double s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += (double)x.at(i);
    out.at(0) = (R)s;
    if (tp) tp->record([x, out]() mutable {
        const auto & g = out.grad_ro();
        if (g.empty() || !x.needs_grad()) return;
        auto & gx = x.grad();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
    });
    return out;
}

template <class R>
tensor<R> mean(tensor<R> x, tape<R> * tp = nullptr) {
    auto s = sum(x, tp);
    return scale(s, (R)(1.0 / (double)x.numel()), tp);
}

// ---- attention (composite of the primitives above) ----

// scaled dot-product attention with optional causal mask; q [Nq x C],
// k,v [Nk x C], C split across n_heads
template <class R>
tensor<R> multihead_attention(tensor<R> q, tensor<R> k, tensor<R> v, int n_heads,
                              bool causal, tape<R> * tp = nullptr) {
    const int64_t c = q.dim(1);
    if (c % n_heads != 0) throw dim_error("attention: width not divisible by head count");
    if (k.dim(1) != c || v.dim(1) != c || k.dim(0) != v.dim(0))
        throw dim_error("attention: k/v shape mismatch");
    const int64_t hd = c / n_heads;
    const int64_t nq = q.dim(0), nk = k.dim(0);

    tensor<R> neg_mask;
    if (causal) {
        neg_mask = tensor<R>({nq, nk});
        for (int64_t i = 0; i < nq; ++i)
            for (int64_t j = 0; j < nk; ++j)
                if (j > i + (nk - nq)) neg_mask.at(i, j) = (R)-1e9;
    }

    std::vector<tensor<R>> heads;
    heads.reserve((size_t)n_heads);
    const R inv_sqrt = (R)(1.0 / std::sqrt((double)hd));
    for (int h = 0; h < n_heads; ++h) {
        auto qh = slice_cols(q, h * hd, (h + 1) * hd, tp);
        auto kh = slice_cols(k, h * hd, (h + 1) * hd, tp);
        auto vh = slice_cols(v, h * hd, (h + 1) * hd, tp);
        auto scores = scale(matmul(qh, transpose2d(kh, tp), tp), inv_sqrt, tp);
        if (causal) scores = add(scores, neg_mask, tp);
        auto w = softmax_rows(scores, tp);
        heads.push_back(matmul(w, vh, tp));
    }
    return concat_cols(heads, tp);
}

// ---- initialization ----

template <class R>
tensor<R> randn_tensor(std::vector<int64_t> shape, rng & r, double stddev,
                       bool requires_grad = true) {
    tensor<R> t(std::move(shape), requires_grad);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = (R)(r.gaussian() * stddev);
    return t;
}

template <class R>
tensor<R> full_tensor(std::vector<int64_t> shape, R value, bool requires_grad = true) {
    tensor<R> t(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

} // namespace singfuse
