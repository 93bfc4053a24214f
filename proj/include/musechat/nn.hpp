#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"
#include "musechat/params.hpp"
#include "musechat/rng.hpp"
#include "musechat/tape.hpp"

namespace musechat {

/// Additive mask constant: exp(-1e30) underflows to exactly zero, so a
/// masked slot gets softmax weight 0 while the math stays well-defined.
inline constexpr double kMaskValue = -1e30;

/// N(0, scale^2) matrix whose entries depend only on (seed, name), so the
/// same named component is initialized identically wherever it appears.
inline Matrix named_randn(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols,
                          double scale) {
    Rng rng(mix_seed(seed, name));
    return Matrix::randn(rng, rows, cols, scale);
}

inline Parameter* add_randn(ParameterStore& store, std::uint64_t seed, const std::string& name,
                            std::size_t rows, std::size_t cols, double scale) {
    return &store.add(name, named_randn(seed, name, rows, cols, scale));
}

inline Parameter* add_const(ParameterStore& store, const std::string& name, std::size_t rows,
                            std::size_t cols, double v) {
    return &store.add(name, Matrix::full(rows, cols, v));
}

/// Lower-triangular causal mask (n x n): 0 on and below the diagonal,
/// kMaskValue above.
inline Matrix causal_mask(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = kMaskValue;
    return m;
}

struct AttentionResult {
    Node out;
    Node weights;
};

/// Scaled dot-product attention: softmax(q k^T / sqrt(d_k)) v.
/// `mask` (q.rows x k.rows), if given, is added to the scores.
inline AttentionResult attention(Tape& t, Node q, Node k, Node v, std::optional<Node> mask = {}) {
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    if (Q.cols != K.cols) throw DimensionError("attention: q " + Q.shape_str() + " vs k " + K.shape_str());
    if (K.rows != V.rows) throw DimensionError("attention: k " + K.shape_str() + " vs v " + V.shape_str());
    Node scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(static_cast<double>(K.cols)));
    if (mask) scores = t.add(scores, *mask);
    Node w = t.softmax_rows(scores);
    return {t.matmul(w, v), w};
}

/// Weight-only multi-head attention: project q/k/v with square matrices,
/// split columns into heads, attend per head, concatenate, project out.
struct MultiHeadAttention {
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* wo = nullptr;
    std::size_t heads = 1;

    static MultiHeadAttention create(ParameterStore& store, const std::string& prefix, std::size_t d,
                                     std::size_t heads, std::uint64_t seed) {
        if (heads == 0 || d % heads != 0)
            throw ConfigError("attention heads " + std::to_string(heads) + " must divide width " +
                              std::to_string(d));
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        MultiHeadAttention m;
        m.wq = add_randn(store, seed, prefix + ".wq", d, d, s);
        m.wk = add_randn(store, seed, prefix + ".wk", d, d, s);
        m.wv = add_randn(store, seed, prefix + ".wv", d, d, s);
        m.wo = add_randn(store, seed, prefix + ".wo", d, d, s);
        m.heads = heads;
        return m;
    }

    static MultiHeadAttention bind(ParameterStore& store, const std::string& prefix, std::size_t heads) {
        MultiHeadAttention m;
        m.wq = store.require(prefix + ".wq");
        m.wk = store.require(prefix + ".wk");
        m.wv = store.require(prefix + ".wv");
        m.wo = store.require(prefix + ".wo");
        m.heads = heads;
        return m;
    }

    Node apply(Tape& t, Node q_in, Node k_in, Node v_in, std::optional<Node> mask = {},
               std::vector<Node>* head_weights = nullptr) const {
        std::size_t d = wq->value.cols;
        std::size_t dh = d / heads;
        Node q = t.matmul(q_in, t.param(*wq));
        Node k = t.matmul(k_in, t.param(*wk));
        Node v = t.matmul(v_in, t.param(*wv));
        std::vector<Node> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            AttentionResult r = attention(t, t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh),
                                          t.slice_cols(v, h * dh, dh), mask);
            if (head_weights) head_weights->push_back(r.weights);
            outs.push_back(r.out);
        }
        return t.matmul(t.concat_cols(outs), t.param(*wo));
    }
};

/// Fusion-stack layer: LayerNorm(x + MHA(x, x, x)). Attention plus a
/// residual and a norm, no feed-forward sublayer.
struct SelfAttentionLayer {
    MultiHeadAttention mha;
    Parameter* ln_g = nullptr;
    Parameter* ln_b = nullptr;

    static SelfAttentionLayer create(ParameterStore& store, const std::string& prefix, std::size_t d,
                                     std::size_t heads, std::uint64_t seed) {
        SelfAttentionLayer l;
        l.mha = MultiHeadAttention::create(store, prefix, d, heads, seed);
        l.ln_g = add_const(store, prefix + ".ln_g", 1, d, 1.0);
        l.ln_b = add_const(store, prefix + ".ln_b", 1, d, 0.0);
        return l;
    }

    static SelfAttentionLayer bind(ParameterStore& store, const std::string& prefix, std::size_t heads) {
        SelfAttentionLayer l;
        l.mha = MultiHeadAttention::bind(store, prefix, heads);
        l.ln_g = store.require(prefix + ".ln_g");
        l.ln_b = store.require(prefix + ".ln_b");
        return l;
    }

    Node apply(Tape& t, Node x, std::optional<Node> mask = {}) const {
        Node a = mha.apply(t, x, x, x, mask);
        return t.layer_norm_rows(t.add(x, a), t.param(*ln_g), t.param(*ln_b));
    }
};

/// Affine map x W + b with b broadcast over rows.
struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    static Linear create(ParameterStore& store, const std::string& prefix, std::size_t d_in,
                         std::size_t d_out, std::uint64_t seed, bool zero_init = false) {
        Linear l;
        if (zero_init) {
            l.w = add_const(store, prefix + ".w", d_in, d_out, 0.0);
        } else {
            l.w = add_randn(store, seed, prefix + ".w", d_in, d_out,
                            1.0 / std::sqrt(static_cast<double>(d_in)));
        }
        l.b = add_const(store, prefix + ".b", 1, d_out, 0.0);
        return l;
    }

    static Linear bind(ParameterStore& store, const std::string& prefix) {
        Linear l;
        l.w = store.require(prefix + ".w");
        l.b = store.require(prefix + ".b");
        return l;
    }

    Node apply(Tape& t, Node x) const { return t.add_row_broadcast(t.matmul(x, t.param(*w)), t.param(*b)); }
};

}  // namespace musechat
