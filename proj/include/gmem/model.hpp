#pragma once

// Transformer forward engine. Attention scores are S = (W_K X)^T (W_Q X) with
// no 1/sqrt(d) scaling; A is column-stochastic over the key axis; the head
// output is W_O (W_V X) A^T. Residuals: X~ = X + Z, X_out = X~ + MLP(X~), with
// optional pre-RMSNorm (eps 1e-6) before the attention and MLP reads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmem/linalg.hpp"
#include "gmem/matrix.hpp"

namespace gmem {

enum class AttentionMode { softmax_full, softmax_causal, uniform_full, uniform_causal };
enum class NormMode { none, pre_rmsnorm };
enum class Activation { relu, gelu };
enum class DecodeMode { entity, paired_attribute };

inline const char* to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::softmax_full: return "softmax-full";
        case AttentionMode::softmax_causal: return "softmax-causal";
        case AttentionMode::uniform_full: return "uniform-full";
        case AttentionMode::uniform_causal: return "uniform-causal";
    }
    return "?";
}
inline const char* to_string(NormMode m) {
    return m == NormMode::none ? "none" : "pre-rmsnorm";
}
inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }
inline const char* to_string(DecodeMode d) {
    return d == DecodeMode::entity ? "entity" : "paired-attribute";
}

template <class Enum>
Enum enum_from_string(const std::string& s);

template <>
inline AttentionMode enum_from_string<AttentionMode>(const std::string& s) {
    if (s == "softmax-full") return AttentionMode::softmax_full;
    if (s == "softmax-causal") return AttentionMode::softmax_causal;
    if (s == "uniform-full") return AttentionMode::uniform_full;
    if (s == "uniform-causal") return AttentionMode::uniform_causal;
    throw std::invalid_argument("unknown attention mode: " + s);
}
template <>
inline NormMode enum_from_string<NormMode>(const std::string& s) {
    if (s == "none") return NormMode::none;
    if (s == "pre-rmsnorm") return NormMode::pre_rmsnorm;
    throw std::invalid_argument("unknown norm mode: " + s);
}
template <>
inline Activation enum_from_string<Activation>(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw std::invalid_argument("unknown activation: " + s);
}
template <>
inline DecodeMode enum_from_string<DecodeMode>(const std::string& s) {
    if (s == "entity") return DecodeMode::entity;
    if (s == "paired-attribute") return DecodeMode::paired_attribute;
    throw std::invalid_argument("unknown decode mode: " + s);
}

struct HeadParams {
    Matrix wq;  // dh x d (ignored by uniform modes; may be empty then)
    Matrix wk;  // dh x d
    Matrix wv;  // dh x d
    Matrix wo;  // d x dh
};

struct MlpLayer {
    Matrix w;               // out x in
    std::vector<double> b;  // out
};

struct LayerParams {
    std::vector<HeadParams> heads;  // empty = attention disabled
    std::vector<MlpLayer> mlp;      // activation between consecutive maps, none after the last
    std::vector<double> norm_attn;  // gamma, length d (empty when norm is none)
    std::vector<double> norm_mlp;
};

struct ModelParams {
    std::size_t n_subjects = 0;
    std::size_t n_relations = 0;
    std::size_t d = 0;
    AttentionMode attention = AttentionMode::uniform_full;
    NormMode norm = NormMode::none;
    Activation activation = Activation::relu;
    DecodeMode decode = DecodeMode::entity;
    bool prepend_bos = false;

    Matrix embed_in;   // vocab_in x d; rows: subjects, relations, [bos]
    Matrix embed_out;  // vocab_out x d; entity decode: subjects then relations
    Matrix positions;  // max_len x d, empty when unused
    std::vector<LayerParams> layers;

    std::size_t vocab_in() const { return embed_in.rows; }
    std::size_t vocab_out() const { return embed_out.rows; }
    std::size_t max_len() const { return positions.rows; }
    std::uint32_t bos_id() const { return static_cast<std::uint32_t>(vocab_in() - 1); }
};

struct ForwardTrace {
    Matrix x0;                                  // d x n: embeddings (+positions)
    std::vector<Matrix> z;                      // per layer, d x n: attention output
    std::vector<Matrix> x_attn;                 // per layer, d x n: X~ = X + Z
    std::vector<Matrix> mlp_out;                // per layer, d x n (zero when no MLP)
    std::vector<Matrix> x_out;                  // per layer, d x n
    std::vector<std::vector<Matrix>> attn;      // [layer][head], n x n, keys x queries
    Matrix logits;                              // vocab_out x n

    const Matrix& final_hidden() const { return x_out.back(); }
};

inline constexpr double kRmsNormEps = 1e-6;

inline Matrix rmsnorm_columns(const Matrix& x, const std::vector<double>& gamma) {
    if (gamma.size() != x.rows) {
        throw std::invalid_argument("rmsnorm: gamma length mismatch");
    }
    Matrix y(x.rows, x.cols);
    for (std::size_t t = 0; t < x.cols; ++t) {
        double ms = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            ms += x(i, t) * x(i, t);
        }
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.rows) + kRmsNormEps);
        for (std::size_t i = 0; i < x.rows; ++i) {
            y(i, t) = x(i, t) * inv * gamma[i];
        }
    }
    return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double activate(Activation a, double x) {
    return a == Activation::relu ? (x > 0.0 ? x : 0.0) : gelu(x);
}

namespace detail {

inline Matrix attention_weights(const ModelParams& params, const HeadParams& head,
                                const Matrix& xn) {
    const std::size_t n = xn.cols;
    switch (params.attention) {
        case AttentionMode::uniform_full: {
            Matrix a(n, n, 1.0 / static_cast<double>(n));
            return a;
        }
        case AttentionMode::uniform_causal: {
            Matrix a(n, n, 0.0);
            for (std::size_t q = 0; q < n; ++q) {
                for (std::size_t k = 0; k <= q; ++k) {
                    a(k, q) = 1.0 / static_cast<double>(q + 1);
                }
            }
            return a;
        }
        case AttentionMode::softmax_full:
        case AttentionMode::softmax_causal: {
            if (head.wq.empty() || head.wk.empty()) {
                throw std::invalid_argument("forward: softmax attention needs wq/wk");
            }
            const Matrix keys = matmul(head.wk, xn);
            const Matrix queries = matmul(head.wq, xn);
            const Matrix scores = matmul(transpose(keys), queries);  // n x n, keys x queries
            return softmax_columns(scores, params.attention == AttentionMode::softmax_causal);
        }
    }
    throw std::logic_error("unreachable attention mode");
}

}  // namespace detail

inline ForwardTrace forward(const ModelParams& params, const std::vector<std::uint32_t>& tokens) {
    std::vector<std::uint32_t> ids;
    if (params.prepend_bos) {
        ids.reserve(tokens.size() + 1);
        ids.push_back(params.bos_id());
    }
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    if (ids.empty()) {
        throw std::invalid_argument("forward: empty token sequence");
    }
    const std::size_t n = ids.size();
    const std::size_t d = params.d;
    if (!params.positions.empty() && n > params.max_len()) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(n) +
                                    " exceeds max_len " + std::to_string(params.max_len()));
    }

    ForwardTrace trace;
    trace.x0 = Matrix(d, n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::uint32_t id = ids[t];
        if (id >= params.vocab_in()) {
            throw std::out_of_range("forward: token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(params.vocab_in()));
        }
        const double* row = params.embed_in.row(id);
        for (std::size_t i = 0; i < d; ++i) {
            trace.x0(i, t) = row[i];
        }
        if (!params.positions.empty()) {
            const double* pos = params.positions.row(t);
            for (std::size_t i = 0; i < d; ++i) {
                trace.x0(i, t) += pos[i];
            }
        }
    }

    const Matrix* x = &trace.x0;
    for (const LayerParams& layer : params.layers) {
        const Matrix& xin = *x;
        const Matrix xn = params.norm == NormMode::pre_rmsnorm
                              ? rmsnorm_columns(xin, layer.norm_attn)
                              : xin;
        Matrix z(d, n);
        std::vector<Matrix> head_weights;
        head_weights.reserve(layer.heads.size());
        for (const HeadParams& head : layer.heads) {
            Matrix a = detail::attention_weights(params, head, xn);
            const Matrix values = matmul(head.wv, xn);  // dh x n
            // A is keys x queries and column-stochastic, so column t of V*A
            // mixes the key values with query t's weights A[., t].
            const Matrix mixed = matmul(values, a);  // dh x n
            const Matrix zh = matmul(head.wo, mixed);  // d x n
            for (std::size_t i = 0; i < z.data.size(); ++i) {
                z.data[i] += zh.data[i];
            }
            head_weights.push_back(std::move(a));
        }
        trace.attn.push_back(std::move(head_weights));
        trace.z.push_back(std::move(z));
        trace.x_attn.push_back(add(xin, trace.z.back()));

        const Matrix& xt = trace.x_attn.back();
        Matrix m(d, n);
        if (!layer.mlp.empty()) {
            Matrix h = params.norm == NormMode::pre_rmsnorm ? rmsnorm_columns(xt, layer.norm_mlp)
                                                            : xt;
            for (std::size_t li = 0; li < layer.mlp.size(); ++li) {
                const MlpLayer& ml = layer.mlp[li];
                Matrix zl = matmul(ml.w, h);
                if (ml.b.size() != zl.rows) {
                    throw std::invalid_argument("forward: mlp bias length mismatch");
                }
                for (std::size_t i = 0; i < zl.rows; ++i) {
                    for (std::size_t t = 0; t < n; ++t) {
                        zl(i, t) += ml.b[i];
                    }
                }
                if (li + 1 < layer.mlp.size()) {
                    for (double& v : zl.data) {
                        v = activate(params.activation, v);
                    }
                }
                h = std::move(zl);
            }
            if (h.rows != d) {
                throw std::invalid_argument("forward: mlp output dimension mismatch");
            }
            m = std::move(h);
        }
        trace.mlp_out.push_back(std::move(m));
        trace.x_out.push_back(add(xt, trace.mlp_out.back()));
        x = &trace.x_out.back();
    }
    if (params.layers.empty()) {
        // No layers: final hidden is the embedding itself.
        trace.x_out.push_back(trace.x0);
    }

    trace.logits = matmul(params.embed_out, trace.final_hidden());
    return trace;
}

// argmax over subject logits at the final position; ties resolve to the lowest
// index. Paired-attribute decode argmaxes over all N*R rows (row j*N + a) and
// maps the winner to its entity a.
inline std::uint32_t decode_prediction(const ModelParams& params, const Matrix& logits,
                                       std::size_t position) {
    const std::size_t limit = params.decode == DecodeMode::entity
                                  ? params.n_subjects
                                  : params.vocab_out();
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < limit; ++v) {
        const double val = logits(v, position);
        if (val > best_val) {
            best_val = val;
            best = v;
        }
    }
    if (params.decode == DecodeMode::paired_attribute) {
        return static_cast<std::uint32_t>(best % params.n_subjects);
    }
    return static_cast<std::uint32_t>(best);
}

// Margin between the winning and runner-up decodes (entity space).
inline double decode_margin(const ModelParams& params, const Matrix& logits, std::size_t position) {
    const std::size_t limit = params.decode == DecodeMode::entity
                                  ? params.n_subjects
                                  : params.vocab_out();
    double best = -std::numeric_limits<double>::infinity();
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < limit; ++v) {
        const double val = logits(v, position);
        if (val > best) {
            second = best;
            best = val;
        } else if (val > second) {
            second = val;
        }
    }
    if (!std::isfinite(second)) {
        return std::numeric_limits<double>::infinity();
    }
    return best - second;
}

inline std::uint32_t predict_final(const ModelParams& params,
                                   const std::vector<std::uint32_t>& prompt) {
    const ForwardTrace trace = forward(params, prompt);
    return decode_prediction(params, trace.logits, trace.logits.cols - 1);
}

// Autoregressively appends argmax-over-subject tokens `steps` times and
// returns the generated tokens.
inline std::vector<std::uint32_t> generate_cot(const ModelParams& params,
                                               const std::vector<std::uint32_t>& prompt,
                                               std::size_t steps) {
    if (steps < 1) {
        throw std::invalid_argument("generate_cot: steps must be >= 1");
    }
    std::vector<std::uint32_t> sequence = prompt;
    std::vector<std::uint32_t> generated;
    generated.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const ForwardTrace trace = forward(params, sequence);
        std::size_t best = 0;
        double best_val = -std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < params.n_subjects; ++v) {
            const double val = trace.logits(v, trace.logits.cols - 1);
            if (val > best_val) {
                best_val = val;
                best = v;
            }
        }
        const auto tok = static_cast<std::uint32_t>(best);
        generated.push_back(tok);
        sequence.push_back(tok);
    }
    return generated;
}

}  // namespace gmem
