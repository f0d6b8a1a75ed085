#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftbench/exec.hpp"
#include "driftbench/instance.hpp"
#include "driftbench/rng.hpp"
#include "driftbench/tensor.hpp"

namespace driftbench {

struct EncoderConfig {
    int vocab_size = 0;
    int hidden = 64;
    int layers = 2;
    int heads = 2;
    int ffn_hidden = 128;
    int visual_dim = 32;
    int max_objects = 8;
    int max_text_len = 24;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double init_std = 0.02;
    double ln_eps = 1e-5;
    std::uint64_t seed = 1;

    void validate() const {
        if (vocab_size <= 3) throw ConfigError("vocab_size must exceed the 3 special tokens");
        if (hidden <= 0 || layers <= 0 || heads <= 0 || ffn_hidden <= 0 || visual_dim <= 0 ||
            max_objects <= 0 || max_text_len <= 0)
            throw ConfigError("encoder dimensions must be positive");
        if (hidden % heads != 0) throw ConfigError("hidden must be divisible by heads");
    }
};

enum class InitKind : std::uint8_t { Gaussian, Zero, One };

struct ParamSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    InitKind init = InitKind::Gaussian;
};

// Tensor order is the contract for checkpoints and moment buffers.
inline std::vector<ParamSpec> param_specs(const EncoderConfig& cfg) {
    std::vector<ParamSpec> specs;
    specs.push_back({"tok_emb", cfg.vocab_size, cfg.hidden, InitKind::Gaussian});
    specs.push_back({"pos_emb", cfg.max_text_len, cfg.hidden, InitKind::Gaussian});
    specs.push_back({"vis_proj_w", cfg.visual_dim, cfg.hidden, InitKind::Gaussian});
    specs.push_back({"vis_proj_b", 1, cfg.hidden, InitKind::Zero});
    specs.push_back({"type_emb", 2, cfg.hidden, InitKind::Gaussian});
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        specs.push_back({p + "attn_wq", cfg.hidden, cfg.hidden, InitKind::Gaussian});
        specs.push_back({p + "attn_bq", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "attn_wk", cfg.hidden, cfg.hidden, InitKind::Gaussian});
        specs.push_back({p + "attn_bk", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "attn_wv", cfg.hidden, cfg.hidden, InitKind::Gaussian});
        specs.push_back({p + "attn_bv", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "attn_wo", cfg.hidden, cfg.hidden, InitKind::Gaussian});
        specs.push_back({p + "attn_bo", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "ln1_g", 1, cfg.hidden, InitKind::One});
        specs.push_back({p + "ln1_b", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "ff_w1", cfg.hidden, cfg.ffn_hidden, InitKind::Gaussian});
        specs.push_back({p + "ff_b1", 1, cfg.ffn_hidden, InitKind::Zero});
        specs.push_back({p + "ff_w2", cfg.ffn_hidden, cfg.hidden, InitKind::Gaussian});
        specs.push_back({p + "ff_b2", 1, cfg.hidden, InitKind::Zero});
        specs.push_back({p + "ln2_g", 1, cfg.hidden, InitKind::One});
        specs.push_back({p + "ln2_b", 1, cfg.hidden, InitKind::Zero});
    }
    specs.push_back({"out_bias", 1, cfg.vocab_size, InitKind::Zero});
    return specs;
}

// One tensor per parameter tensor; doubles as the gradient container.
template <typename T>
struct ParamSet {
    std::vector<Tensor<T>> tensors;

    ParamSet() = default;
    explicit ParamSet(const EncoderConfig& cfg) {
        for (const auto& s : param_specs(cfg)) tensors.emplace_back(s.rows, s.cols);
    }

    void zero() {
        for (auto& t : tensors) t.zero();
    }

    // this += alpha * other
    void axpy(double alpha, const ParamSet& other) {
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& src = other.tensors[i].data;
            auto& dst = tensors[i].data;
            for (std::size_t j = 0; j < dst.size(); ++j)
                dst[j] += static_cast<T>(alpha * static_cast<double>(src[j]));
        }
    }

    bool all_finite() const {
        for (const auto& t : tensors)
            for (T v : t.data)
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
double param_dot(const ParamSet<T>& a, const ParamSet<T>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& x = a.tensors[i].data;
        const auto& y = b.tensors[i].data;
        for (std::size_t j = 0; j < x.size(); ++j)
            acc += static_cast<double>(x[j]) * static_cast<double>(y[j]);
    }
    return acc;
}

template <typename T>
struct ModelState {
    EncoderConfig cfg;
    ParamSet<T> params;
    ParamSet<T> moment1, moment2;
    std::int64_t step = 0;
};

// Tensor indices within a ParamSet.
struct ParamIndex {
    static constexpr int kTokEmb = 0, kPosEmb = 1, kVisW = 2, kVisB = 3, kTypeEmb = 4;
    static constexpr int kPerLayer = 16;
    static constexpr int kWq = 0, kBq = 1, kWk = 2, kBk = 3, kWv = 4, kBv = 5, kWo = 6, kBo = 7,
                         kLn1G = 8, kLn1B = 9, kW1 = 10, kB1 = 11, kW2 = 12, kB2 = 13, kLn2G = 14,
                         kLn2B = 15;
    static int layer_base(int l) { return 5 + l * kPerLayer; }
    static int out_bias(const EncoderConfig& cfg) { return 5 + cfg.layers * kPerLayer; }
};

template <typename T>
ModelState<T> init_model(const EncoderConfig& cfg) {
    cfg.validate();
    ModelState<T> state;
    state.cfg = cfg;
    state.params = ParamSet<T>(cfg);
    state.moment1 = ParamSet<T>(cfg);
    state.moment2 = ParamSet<T>(cfg);
    Rng rng = Rng::derive(cfg.seed, 0x9a7a);
    auto specs = param_specs(cfg);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto& data = state.params.tensors[i].data;
        switch (specs[i].init) {
            case InitKind::Gaussian:
                for (auto& v : data) v = static_cast<T>(rng.normal(0.0, cfg.init_std));
                break;
            case InitKind::Zero:
                break;  // already zeroed
            case InitKind::One:
                for (auto& v : data) v = T(1);
                break;
        }
    }
    return state;
}

namespace detail {

template <typename T>
inline void softmax_row(T* row, int n) {
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    T inv = T(1) / sum;
    for (int i = 0; i < n; ++i) row[i] *= inv;
}

template <typename T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
}

template <typename T>
inline T gelu_grad(T x) {
    T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
    T pdf = std::exp(T(-0.5) * x * x) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
    return cdf + x * pdf;
}

template <typename T>
struct LayerCache {
    Tensor<T> x_in, q, k, v, ctx, res1, xhat1, x1, z1, h1, res2, xhat2, x2;
    std::vector<Tensor<T>> probs;  // per head, [S x S]
    std::vector<T> inv_std1, inv_std2;
};

template <typename T>
struct ForwardCache {
    int seq_len = 0, n_vis = 0, n_txt = 0;
    Tensor<T> x0;
    std::vector<LayerCache<T>> layers;
    std::vector<int> masked_rows;  // sequence rows of masked tokens
    Tensor<T> out_probs;           // [span_len x V]
};

template <typename T>
inline void layer_norm_forward(const Tensor<T>& in, const Tensor<T>& gain, const Tensor<T>& bias,
                               double eps, Tensor<T>& xhat, std::vector<T>& inv_std, Tensor<T>& out) {
    const int s = in.rows, d = in.cols;
    xhat = Tensor<T>(s, d);
    out = Tensor<T>(s, d);
    inv_std.assign(static_cast<std::size_t>(s), T(0));
    for (int r = 0; r < s; ++r) {
        const T* x = in.row(r);
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) {
            T c = x[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[static_cast<std::size_t>(r)] = inv;
        T* xh = xhat.row(r);
        T* y = out.row(r);
        for (int j = 0; j < d; ++j) {
            xh[j] = (x[j] - mean) * inv;
            y[j] = gain.data[static_cast<std::size_t>(j)] * xh[j] + bias.data[static_cast<std::size_t>(j)];
        }
    }
}

// d_in gets the gradient w.r.t. the layer-norm input (accumulated).
template <typename T>
inline void layer_norm_backward(const Tensor<T>& d_out, const Tensor<T>& xhat,
                                const std::vector<T>& inv_std, const Tensor<T>& gain,
                                Tensor<T>& d_in, Tensor<T>& d_gain, Tensor<T>& d_bias) {
    const int s = d_out.rows, d = d_out.cols;
    for (int r = 0; r < s; ++r) {
        const T* dy = d_out.row(r);
        const T* xh = xhat.row(r);
        T m1 = T(0), m2 = T(0);
        for (int j = 0; j < d; ++j) {
            T dxh = dy[j] * gain.data[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        T inv = inv_std[static_cast<std::size_t>(r)];
        T* dx = d_in.row(r);
        for (int j = 0; j < d; ++j) {
            T dxh = dy[j] * gain.data[static_cast<std::size_t>(j)];
            dx[j] += inv * (dxh - m1 - xh[j] * m2);
            d_gain.data[static_cast<std::size_t>(j)] += dy[j] * xh[j];
            d_bias.data[static_cast<std::size_t>(j)] += dy[j];
        }
    }
}

template <typename T>
ForwardCache<T> forward_instance(const ModelState<T>& state, const Instance& inst, bool zero_visual) {
    const auto& cfg = state.cfg;
    const int d = cfg.hidden;
    const int n_obj = static_cast<int>(inst.object_features.size());
    const int n_txt = static_cast<int>(inst.tokens.size());
    if (n_txt > cfg.max_text_len)
        throw DimensionMismatch("caption length " + std::to_string(n_txt) + " exceeds max_text_len");
    if (n_obj > cfg.max_objects)
        throw DimensionMismatch("object count " + std::to_string(n_obj) + " exceeds max_objects");
    if (static_cast<int>(inst.image_feature.size()) != cfg.visual_dim)
        throw DimensionMismatch("image feature dimension mismatch");

    ForwardCache<T> cache;
    cache.n_vis = 1 + n_obj;
    cache.n_txt = n_txt;
    cache.seq_len = cache.n_vis + n_txt;
    const int S = cache.seq_len;

    const auto& P = state.params.tensors;
    const Tensor<T>& tok_emb = P[ParamIndex::kTokEmb];
    const Tensor<T>& pos_emb = P[ParamIndex::kPosEmb];
    const Tensor<T>& vis_w = P[ParamIndex::kVisW];
    const Tensor<T>& vis_b = P[ParamIndex::kVisB];
    const Tensor<T>& type_emb = P[ParamIndex::kTypeEmb];

    cache.x0 = Tensor<T>(S, d);
    auto project_visual = [&](const std::vector<float>& feature, T* out_row) {
        for (int j = 0; j < d; ++j)
            out_row[j] = vis_b.data[static_cast<std::size_t>(j)] + type_emb.at(0, j);
        if (zero_visual) return;
        if (static_cast<int>(feature.size()) != cfg.visual_dim)
            throw DimensionMismatch("object feature dimension mismatch");
        for (int i = 0; i < cfg.visual_dim; ++i) {
            T f = static_cast<T>(feature[static_cast<std::size_t>(i)]);
            const T* wrow = vis_w.row(i);
            for (int j = 0; j < d; ++j) out_row[j] += f * wrow[j];
        }
    };
    project_visual(inst.image_feature, cache.x0.row(0));
    for (int o = 0; o < n_obj; ++o)
        project_visual(inst.object_features[static_cast<std::size_t>(o)], cache.x0.row(1 + o));
    for (int i = 0; i < n_txt; ++i) {
        TokenId tok = inst.tokens[static_cast<std::size_t>(i)];
        if (tok < 0 || tok >= cfg.vocab_size) throw DimensionMismatch("token id out of vocabulary range");
        T* row = cache.x0.row(cache.n_vis + i);
        const T* e = tok_emb.row(tok);
        const T* p = pos_emb.row(i);
        for (int j = 0; j < d; ++j) row[j] = e[j] + p[j] + type_emb.at(1, j);
    }

    const int H = cfg.heads, dh = d / H;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    cache.layers.resize(static_cast<std::size_t>(cfg.layers));
    const Tensor<T>* x = &cache.x0;
    for (int l = 0; l < cfg.layers; ++l) {
        auto& lc = cache.layers[static_cast<std::size_t>(l)];
        const int base = ParamIndex::layer_base(l);
        lc.x_in = *x;

        auto linear = [&](const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
            out = Tensor<T>(S, w.cols);
            kernels::matmul(lc.x_in.data.data(), w.data.data(), out.data.data(), S, d, w.cols, false);
            for (int r = 0; r < S; ++r) {
                T* row = out.row(r);
                for (int j = 0; j < w.cols; ++j) row[j] += b.data[static_cast<std::size_t>(j)];
            }
        };
        linear(P[base + ParamIndex::kWq], P[base + ParamIndex::kBq], lc.q);
        linear(P[base + ParamIndex::kWk], P[base + ParamIndex::kBk], lc.k);
        linear(P[base + ParamIndex::kWv], P[base + ParamIndex::kBv], lc.v);

        lc.ctx = Tensor<T>(S, d);
        lc.probs.assign(static_cast<std::size_t>(H), Tensor<T>(S, S));
        for (int h = 0; h < H; ++h) {
            Tensor<T>& probs = lc.probs[static_cast<std::size_t>(h)];
            const int off = h * dh;
            for (int s1 = 0; s1 < S; ++s1) {
                const T* qr = lc.q.row(s1) + off;
                T* prow = probs.row(s1);
                for (int s2 = 0; s2 < S; ++s2) {
                    const T* kr = lc.k.row(s2) + off;
                    T acc = T(0);
                    for (int j = 0; j < dh; ++j) acc += qr[j] * kr[j];
                    prow[s2] = acc * inv_sqrt_dh;
                }
                softmax_row(prow, S);
                T* crow = lc.ctx.row(s1) + off;
                for (int j = 0; j < dh; ++j) crow[j] = T(0);
                for (int s2 = 0; s2 < S; ++s2) {
                    T p = prow[s2];
                    const T* vr = lc.v.row(s2) + off;
                    for (int j = 0; j < dh; ++j) crow[j] += p * vr[j];
                }
            }
        }

        Tensor<T> attn_out(S, d);
        kernels::matmul(lc.ctx.data.data(), P[base + ParamIndex::kWo].data.data(), attn_out.data.data(),
                        S, d, d, false);
        lc.res1 = Tensor<T>(S, d);
        for (int r = 0; r < S; ++r) {
            const T* bo = P[base + ParamIndex::kBo].data.data();
            const T* xi = lc.x_in.row(r);
            const T* ao = attn_out.row(r);
            T* out = lc.res1.row(r);
            for (int j = 0; j < d; ++j) out[j] = xi[j] + ao[j] + bo[j];
        }
        layer_norm_forward(lc.res1, P[base + ParamIndex::kLn1G], P[base + ParamIndex::kLn1B], cfg.ln_eps,
                           lc.xhat1, lc.inv_std1, lc.x1);

        lc.z1 = Tensor<T>(S, cfg.ffn_hidden);
        kernels::matmul(lc.x1.data.data(), P[base + ParamIndex::kW1].data.data(), lc.z1.data.data(), S, d,
                        cfg.ffn_hidden, false);
        lc.h1 = Tensor<T>(S, cfg.ffn_hidden);
        for (int r = 0; r < S; ++r) {
            const T* b1 = P[base + ParamIndex::kB1].data.data();
            T* z = lc.z1.row(r);
            T* h1 = lc.h1.row(r);
            for (int j = 0; j < cfg.ffn_hidden; ++j) {
                z[j] += b1[j];
                h1[j] = gelu(z[j]);
            }
        }
        Tensor<T> ffn_out(S, d);
        kernels::matmul(lc.h1.data.data(), P[base + ParamIndex::kW2].data.data(), ffn_out.data.data(), S,
                        cfg.ffn_hidden, d, false);
        lc.res2 = Tensor<T>(S, d);
        for (int r = 0; r < S; ++r) {
            const T* b2 = P[base + ParamIndex::kB2].data.data();
            const T* x1 = lc.x1.row(r);
            const T* fo = ffn_out.row(r);
            T* out = lc.res2.row(r);
            for (int j = 0; j < d; ++j) out[j] = x1[j] + fo[j] + b2[j];
        }
        layer_norm_forward(lc.res2, P[base + ParamIndex::kLn2G], P[base + ParamIndex::kLn2B], cfg.ln_eps,
                           lc.xhat2, lc.inv_std2, lc.x2);
        x = &lc.x2;
    }

    const int span_len = inst.span_end - inst.span_begin;
    cache.out_probs = Tensor<T>(span_len, cfg.vocab_size);
    cache.masked_rows.resize(static_cast<std::size_t>(span_len));
    const Tensor<T>& bias = P[ParamIndex::out_bias(cfg)];
    for (int i = 0; i < span_len; ++i) {
        const int row = cache.n_vis + inst.span_begin + i;
        cache.masked_rows[static_cast<std::size_t>(i)] = row;
        T* logits = cache.out_probs.row(i);
        kernels::matmul_nt(x->row(row), tok_emb.data.data(), logits, 1, d, cfg.vocab_size, false);
        for (int v = 0; v < cfg.vocab_size; ++v) logits[v] += bias.data[static_cast<std::size_t>(v)];
        softmax_row(logits, cfg.vocab_size);
    }
    return cache;
}

// Accumulates into grads; d_probs_scale multiplies (p - onehot) at each
// masked position (1/total_masked_tokens for a batch-mean loss).
template <typename T>
void backward_instance(const ModelState<T>& state, const Instance& inst, const ForwardCache<T>& cache,
                       bool zero_visual, double d_probs_scale, ParamSet<T>& grads) {
    const auto& cfg = state.cfg;
    const int d = cfg.hidden, S = cache.seq_len, H = cfg.heads, dh = d / H;
    const auto& P = state.params.tensors;
    auto& G = grads.tensors;

    // Output head: tied embeddings plus vocabulary bias.
    Tensor<T> dx(S, d);
    const Tensor<T>& x2 = cfg.layers > 0 ? cache.layers.back().x2 : cache.x0;
    Tensor<T>& g_tok = G[ParamIndex::kTokEmb];
    Tensor<T>& g_out_bias = G[ParamIndex::out_bias(cfg)];
    const Tensor<T>& tok_emb = P[ParamIndex::kTokEmb];
    const int span_len = inst.span_end - inst.span_begin;
    std::vector<T> dlogits(static_cast<std::size_t>(cfg.vocab_size));
    for (int i = 0; i < span_len; ++i) {
        const int row = cache.masked_rows[static_cast<std::size_t>(i)];
        const T* probs = cache.out_probs.row(i);
        const TokenId label = inst.label_tokens[static_cast<std::size_t>(i)];
        for (int v = 0; v < cfg.vocab_size; ++v) dlogits[static_cast<std::size_t>(v)] = probs[v];
        dlogits[static_cast<std::size_t>(label)] -= T(1);
        for (int v = 0; v < cfg.vocab_size; ++v) dlogits[static_cast<std::size_t>(v)] *= static_cast<T>(d_probs_scale);

        const T* hrow = x2.row(row);
        T* dxrow = dx.row(row);
        for (int v = 0; v < cfg.vocab_size; ++v) {
            T dv = dlogits[static_cast<std::size_t>(v)];
            g_out_bias.data[static_cast<std::size_t>(v)] += dv;
            const T* erow = tok_emb.row(v);
            T* grow = g_tok.row(v);
            for (int j = 0; j < d; ++j) {
                dxrow[j] += dv * erow[j];
                grow[j] += dv * hrow[j];
            }
        }
    }

    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const auto& lc = cache.layers[static_cast<std::size_t>(l)];
        const int base = ParamIndex::layer_base(l);

        // LN2
        Tensor<T> d_res2(S, d);
        layer_norm_backward(dx, lc.xhat2, lc.inv_std2, P[base + ParamIndex::kLn2G], d_res2,
                            G[base + ParamIndex::kLn2G], G[base + ParamIndex::kLn2B]);

        // Feed-forward; d_res2 also flows to x1 through the residual.
        Tensor<T> d_x1 = d_res2;
        for (int r = 0; r < S; ++r) {
            const T* drow = d_res2.row(r);
            T* b2g = G[base + ParamIndex::kB2].data.data();
            for (int j = 0; j < d; ++j) b2g[j] += drow[j];
        }
        kernels::matmul_tn(lc.h1.data.data(), d_res2.data.data(), G[base + ParamIndex::kW2].data.data(),
                           cfg.ffn_hidden, S, d, true);
        Tensor<T> d_h1(S, cfg.ffn_hidden);
        kernels::matmul_nt(d_res2.data.data(), P[base + ParamIndex::kW2].data.data(), d_h1.data.data(), S,
                           d, cfg.ffn_hidden, false);
        for (int r = 0; r < S; ++r) {
            T* dh1 = d_h1.row(r);
            const T* z = lc.z1.row(r);
            T* b1g = G[base + ParamIndex::kB1].data.data();
            for (int j = 0; j < cfg.ffn_hidden; ++j) {
                dh1[j] *= gelu_grad(z[j]);
                b1g[j] += dh1[j];
            }
        }
        kernels::matmul_tn(lc.x1.data.data(), d_h1.data.data(), G[base + ParamIndex::kW1].data.data(), d,
                           S, cfg.ffn_hidden, true);
        kernels::matmul_nt(d_h1.data.data(), P[base + ParamIndex::kW1].data.data(), d_x1.data.data(), S,
                           cfg.ffn_hidden, d, true);

        // LN1
        Tensor<T> d_res1(S, d);
        layer_norm_backward(d_x1, lc.xhat1, lc.inv_std1, P[base + ParamIndex::kLn1G], d_res1,
                            G[base + ParamIndex::kLn1G], G[base + ParamIndex::kLn1B]);

        // Attention output projection; residual flows to x_in.
        Tensor<T> d_x_in = d_res1;
        for (int r = 0; r < S; ++r) {
            const T* drow = d_res1.row(r);
            T* bog = G[base + ParamIndex::kBo].data.data();
            for (int j = 0; j < d; ++j) bog[j] += drow[j];
        }
        kernels::matmul_tn(lc.ctx.data.data(), d_res1.data.data(), G[base + ParamIndex::kWo].data.data(),
                           d, S, d, true);
        Tensor<T> d_ctx(S, d);
        kernels::matmul_nt(d_res1.data.data(), P[base + ParamIndex::kWo].data.data(), d_ctx.data.data(), S,
                           d, d, false);

        Tensor<T> d_q(S, d), d_k(S, d), d_v(S, d);
        std::vector<T> d_probs(static_cast<std::size_t>(S));
        for (int h = 0; h < H; ++h) {
            const Tensor<T>& probs = lc.probs[static_cast<std::size_t>(h)];
            const int off = h * dh;
            for (int s1 = 0; s1 < S; ++s1) {
                const T* dctx = d_ctx.row(s1) + off;
                const T* prow = probs.row(s1);
                T dot_sum = T(0);
                for (int s2 = 0; s2 < S; ++s2) {
                    const T* vr = lc.v.row(s2) + off;
                    T acc = T(0);
                    for (int j = 0; j < dh; ++j) acc += dctx[j] * vr[j];
                    d_probs[static_cast<std::size_t>(s2)] = acc;
                    dot_sum += acc * prow[s2];
                    T* dvr = d_v.row(s2) + off;
                    T p = prow[s2];
                    for (int j = 0; j < dh; ++j) dvr[j] += p * dctx[j];
                }
                // softmax backward, then the scaled dot product.
                const T* qr = lc.q.row(s1) + off;
                T* dqr = d_q.row(s1) + off;
                for (int s2 = 0; s2 < S; ++s2) {
                    T ds = prow[s2] * (d_probs[static_cast<std::size_t>(s2)] - dot_sum) * inv_sqrt_dh;
                    const T* kr = lc.k.row(s2) + off;
                    T* dkr = d_k.row(s2) + off;
                    for (int j = 0; j < dh; ++j) {
                        dqr[j] += ds * kr[j];
                        dkr[j] += ds * qr[j];
                    }
                }
            }
        }

        auto linear_backward = [&](const Tensor<T>& d_out, int w_idx, int b_idx) {
            for (int r = 0; r < S; ++r) {
                const T* drow = d_out.row(r);
                T* bg = G[b_idx].data.data();
                for (int j = 0; j < d; ++j) bg[j] += drow[j];
            }
            kernels::matmul_tn(lc.x_in.data.data(), d_out.data.data(), G[w_idx].data.data(), d, S, d, true);
            kernels::matmul_nt(d_out.data.data(), P[w_idx].data.data(), d_x_in.data.data(), S, d, d, true);
        };
        linear_backward(d_q, base + ParamIndex::kWq, base + ParamIndex::kBq);
        linear_backward(d_k, base + ParamIndex::kWk, base + ParamIndex::kBk);
        linear_backward(d_v, base + ParamIndex::kWv, base + ParamIndex::kBv);

        dx = std::move(d_x_in);
    }

    // Input embeddings.
    Tensor<T>& g_pos = G[ParamIndex::kPosEmb];
    Tensor<T>& g_vis_w = G[ParamIndex::kVisW];
    Tensor<T>& g_vis_b = G[ParamIndex::kVisB];
    Tensor<T>& g_type = G[ParamIndex::kTypeEmb];
    auto visual_row_backward = [&](const std::vector<float>& feature, const T* drow) {
        for (int j = 0; j < d; ++j) {
            g_vis_b.data[static_cast<std::size_t>(j)] += drow[j];
            g_type.at(0, j) += drow[j];
        }
        if (zero_visual) return;
        for (int i = 0; i < cfg.visual_dim; ++i) {
            T f = static_cast<T>(feature[static_cast<std::size_t>(i)]);
            T* grow = g_vis_w.row(i);
            for (int j = 0; j < d; ++j) grow[j] += f * drow[j];
        }
    };
    visual_row_backward(inst.image_feature, dx.row(0));
    for (std::size_t o = 0; o < inst.object_features.size(); ++o)
        visual_row_backward(inst.object_features[o], dx.row(1 + static_cast<int>(o)));
    for (int i = 0; i < cache.n_txt; ++i) {
        const T* drow = dx.row(cache.n_vis + i);
        T* trow = g_tok.row(inst.tokens[static_cast<std::size_t>(i)]);
        T* prow = g_pos.row(i);
        for (int j = 0; j < d; ++j) {
            trow[j] += drow[j];
            prow[j] += drow[j];
            g_type.at(1, j) += drow[j];
        }
    }
}

constexpr double kProbFloor = 1e-12;

}  // namespace detail

// Probability rows over the vocabulary for each masked position, one tensor
// per instance.
template <typename T>
std::vector<Tensor<T>> forward_batch(const ModelState<T>& state, std::span<const Instance> batch,
                                     bool zero_visual, Exec exec) {
    std::vector<Tensor<T>> out(batch.size());
    parallel_for(exec, static_cast<int>(batch.size()), [&](int i) {
        auto cache = detail::forward_instance(state, batch[static_cast<std::size_t>(i)], zero_visual);
        out[static_cast<std::size_t>(i)] = std::move(cache.out_probs);
    });
    return out;
}

// Mean cross-entropy over all masked tokens in the batch plus full gradients.
// Per-instance gradient buffers are reduced in instance order, so Serial and
// Parallel execution produce bitwise-identical results.
template <typename T>
double loss_and_grad(const ModelState<T>& state, std::span<const Instance> batch, bool zero_visual,
                     Exec exec, ParamSet<T>& grads,
                     std::vector<std::vector<double>>* token_losses = nullptr) {
    if (batch.empty()) throw ConfigError("loss_and_grad needs a non-empty batch");
    std::int64_t total_masked = 0;
    for (const auto& inst : batch) total_masked += inst.span_end - inst.span_begin;
    const double scale = 1.0 / static_cast<double>(total_masked);

    std::vector<ParamSet<T>> partial(batch.size());
    std::vector<std::vector<double>> losses(batch.size());
    parallel_for(exec, static_cast<int>(batch.size()), [&](int i) {
        const auto& inst = batch[static_cast<std::size_t>(i)];
        auto cache = detail::forward_instance(state, inst, zero_visual);
        auto& local = losses[static_cast<std::size_t>(i)];
        local.resize(inst.label_tokens.size());
        for (std::size_t t = 0; t < inst.label_tokens.size(); ++t) {
            double p = static_cast<double>(cache.out_probs.at(static_cast<int>(t), inst.label_tokens[t]));
            local[t] = -std::log(std::max(p, detail::kProbFloor));
        }
        partial[static_cast<std::size_t>(i)] = ParamSet<T>(state.cfg);
        detail::backward_instance(state, inst, cache, zero_visual, scale, partial[static_cast<std::size_t>(i)]);
    });

    grads = std::move(partial[0]);
    for (std::size_t i = 1; i < partial.size(); ++i) grads.axpy(1.0, partial[i]);

    double loss = 0.0;
    for (const auto& local : losses)
        for (double v : local) loss += v;
    loss *= scale;
    if (token_losses != nullptr) *token_losses = std::move(losses);
    return loss;
}

// Per-token -log p(label) for each instance, no gradients.
template <typename T>
std::vector<std::vector<double>> per_token_losses(const ModelState<T>& state,
                                                  std::span<const Instance> batch, bool zero_visual,
                                                  Exec exec) {
    std::vector<std::vector<double>> losses(batch.size());
    parallel_for(exec, static_cast<int>(batch.size()), [&](int i) {
        const auto& inst = batch[static_cast<std::size_t>(i)];
        auto cache = detail::forward_instance(state, inst, zero_visual);
        auto& local = losses[static_cast<std::size_t>(i)];
        local.resize(inst.label_tokens.size());
        for (std::size_t t = 0; t < inst.label_tokens.size(); ++t) {
            double p = static_cast<double>(cache.out_probs.at(static_cast<int>(t), inst.label_tokens[t]));
            local[t] = -std::log(std::max(p, detail::kProbFloor));
        }
    });
    return losses;
}

// Decoupled weight decay Adam update. Throws on non-finite gradients.
template <typename T>
void optimizer_step(ModelState<T>& state, const ParamSet<T>& grads) {
    if (!grads.all_finite()) throw std::runtime_error("non-finite gradient in optimizer_step");
    state.step += 1;
    const auto& cfg = state.cfg;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
        auto& p = state.params.tensors[i].data;
        auto& m = state.moment1.tensors[i].data;
        auto& v = state.moment2.tensors[i].data;
        const auto& g = grads.tensors[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            double gj = static_cast<double>(g[j]);
            double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
            double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double mhat = mj / bc1;
            double vhat = vj / bc2;
            double pj = static_cast<double>(p[j]);
            pj -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps));
            pj -= cfg.lr * cfg.weight_decay * static_cast<double>(p[j]);
            p[j] = static_cast<T>(pj);
        }
    }
}

// Per-position argmax; ties resolve to the lowest token id.
template <typename T>
std::vector<TokenId> decode_span(const Tensor<T>& prob_rows) {
    std::vector<TokenId> out(static_cast<std::size_t>(prob_rows.rows));
    for (int r = 0; r < prob_rows.rows; ++r) {
        const T* row = prob_rows.row(r);
        int best = 0;
        for (int v = 1; v < prob_rows.cols; ++v)
            if (row[v] > row[best]) best = v;
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

}  // namespace driftbench
