#pragma once

// Weight-for-weight builders for the explicit constructions (single-hop
// disjoint/shared-attribute in three attention/MLP variants, and the three
// k-hop solutions: key-value lookup, tree pre-computation, chain-of-thought),
// plus the exhaustive verifier that certifies zero error with its margin.
//
// Saturation scales are finite (beta/tau, default 16); softmax leakage at that
// scale is ~e^-256 .. e^-16 per off-target key and every builder is certified
// by verify_exact rather than trusted.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gmem/codes.hpp"
#include "gmem/model.hpp"
#include "gmem/task.hpp"

namespace gmem {

struct ConstructOptions {
    double beta = 16.0;   // attention saturation for the single-hop/k-hop fetch heads
    double tau = 16.0;    // CoT routing saturation
    std::size_t mem_cap_bytes = std::size_t{2} << 30;  // 2 GiB for KV/tree tables
    std::size_t code_retries = 100;
    std::size_t strict_code_retries = 20000;  // multi-head relation book
};

struct ResourceCapError : std::runtime_error {
    std::size_t required_bytes;
    std::size_t cap_bytes;
    ResourceCapError(std::size_t required, std::size_t cap)
        : std::runtime_error("memory cap exceeded: construction needs " + std::to_string(required) +
                             " bytes > cap " + std::to_string(cap)),
          required_bytes(required),
          cap_bytes(cap) {}
};

struct VerifyReport {
    bool exhaustive = false;
    std::size_t queries_checked = 0;
    struct Mismatch {
        std::uint32_t subject;
        std::vector<std::uint32_t> path;
        std::uint32_t predicted;
        std::uint32_t expected;
    };
    std::vector<Mismatch> errors;
    double margin_slack = std::numeric_limits<double>::infinity();

    bool certified() const { return errors.empty() && margin_slack > 0.0; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["mode"] = exhaustive ? "exhaustive" : "sampled";
        j["queries_checked"] = queries_checked;
        j["error_count"] = errors.size();
        nlohmann::json errs = nlohmann::json::array();
        for (const auto& e : errors) {
            errs.push_back({{"subject", e.subject},
                            {"path", e.path},
                            {"predicted", e.predicted},
                            {"expected", e.expected}});
        }
        j["errors"] = errs;
        j["margin"] = margin_slack;
        j["certified"] = certified();
        return j;
    }
};

namespace cdetail {

inline void set_identity_block(Matrix& m, std::size_t row0, std::size_t col0, std::size_t count,
                               double value = 1.0) {
    for (std::size_t i = 0; i < count; ++i) {
        m(row0 + i, col0 + i) = value;
    }
}

inline void copy_code(double* dst, const double* code, std::size_t dim) {
    for (std::size_t t = 0; t < dim; ++t) {
        dst[t] = code[t];
    }
}

// bin(g_r(s)) for all r, concatenated: the 1-hop neighborhood block.
inline std::vector<double> hop_block(const RelationSet& rels, std::uint32_t s, std::size_t d_s) {
    std::vector<double> out(rels.n_relations() * d_s, 0.0);
    for (std::size_t r = 0; r < rels.n_relations(); ++r) {
        const auto bits = binary_code(rels.apply(r, s), d_s);
        for (std::size_t t = 0; t < d_s; ++t) {
            out[r * d_s + t] = bits[t];
        }
    }
    return out;
}

inline MlpLayer make_mlp_layer(std::size_t out, std::size_t in) {
    MlpLayer layer;
    layer.w = Matrix(out, in);
    layer.b.assign(out, 0.0);
    return layer;
}

}  // namespace cdetail

// ---------------------------------------------------------------------------
// Disjoint attributes: uniform attention, W_V = 2 I, no MLP; output vocabulary
// is the N*R attribute tokens (row j*N + a), decoded back to the entity a.
// ---------------------------------------------------------------------------
inline ModelParams build_disjoint_attr(const TaskSpec& spec, const RelationSet& rels, Prng& prng,
                                       const ConstructOptions& opts = {}) {
    spec.validate();
    if (spec.hops != 1) {
        throw std::invalid_argument("build_disjoint_attr: single-hop construction (k must be 1)");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const CodeBook vbook = sample_codes(n, prng, opts.code_retries);
    const CodeBook ubook = sample_codes(r, prng, opts.code_retries);
    const std::size_t dv = vbook.dim;
    const std::size_t du = ubook.dim;
    const std::size_t d = dv + du;

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::uniform_full;
    params.decode = DecodeMode::paired_attribute;
    params.embed_in = Matrix(n + r, d);
    for (std::size_t i = 0; i < n; ++i) {
        cdetail::copy_code(params.embed_in.row(i), vbook.code(i), dv);
    }
    for (std::size_t j = 0; j < r; ++j) {
        cdetail::copy_code(params.embed_in.row(n + j) + dv, ubook.code(j), du);
    }
    // Attribute token (j, a) carries the codes of its unique source pair
    // (g_j^{-1}(a), j).
    params.embed_out = Matrix(n * r, d);
    for (std::size_t j = 0; j < r; ++j) {
        for (std::uint32_t a = 0; a < n; ++a) {
            double* row = params.embed_out.row(j * n + a);
            cdetail::copy_code(row, vbook.code(rels.apply_inverse(j, a)), dv);
            cdetail::copy_code(row + dv, ubook.code(j), du);
        }
    }

    LayerParams layer;
    HeadParams head;
    head.wv = Matrix(d, d);
    cdetail::set_identity_block(head.wv, 0, 0, d, 2.0);
    head.wo = Matrix::identity(d);
    layer.heads.push_back(std::move(head));
    params.layers.push_back(std::move(layer));
    return params;
}

// ---------------------------------------------------------------------------
// Shared attributes, MLP selector: subject embeddings stack the R attribute
// codes, uniform attention with W_V = 2 I merges in the relation scalar, and a
// 3-layer ReLU MLP gates out everything but the queried block. The MLP also
// cancels the residual so the final hidden state is exactly (v_{g_j(i)}, 0).
// ---------------------------------------------------------------------------
inline ModelParams build_shared_attr_mlp(const TaskSpec& spec, const RelationSet& rels, Prng& prng,
                                         const ConstructOptions& opts = {}) {
    spec.validate();
    if (spec.hops != 1) {
        throw std::invalid_argument("build_shared_attr_mlp: single-hop construction (k must be 1)");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const CodeBook vbook = sample_codes(n, prng, opts.code_retries);
    const std::size_t dv = vbook.dim;
    const std::size_t d = r * dv + 1;
    const std::size_t scalar = d - 1;  // relation scalar coordinate, values 1..R

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::uniform_full;
    params.embed_in = Matrix(n + r, d);
    for (std::uint32_t i = 0; i < n; ++i) {
        double* row = params.embed_in.row(i);
        for (std::size_t rel = 0; rel < r; ++rel) {
            cdetail::copy_code(row + rel * dv, vbook.code(rels.apply(rel, i)), dv);
        }
    }
    for (std::size_t j = 0; j < r; ++j) {
        params.embed_in(n + j, scalar) = static_cast<double>(j + 1);
    }
    params.embed_out = Matrix(n + r, d);
    for (std::size_t a = 0; a < n; ++a) {
        cdetail::copy_code(params.embed_out.row(a), vbook.code(a), dv);
    }

    LayerParams layer;
    HeadParams head;
    head.wv = Matrix(d, d);
    cdetail::set_identity_block(head.wv, 0, 0, d, 2.0);
    head.wo = Matrix::identity(d);
    layer.heads.push_back(std::move(head));

    // Hidden 1: stack split a/b, gate halves p/q (the relation scalar arrives
    // doubled through W_V = 2I + residual, so the gate reads it at weight 1/2),
    // and a passthrough of the scalar itself.
    const std::size_t h1 = 2 * r * dv + 2 * r + 1;
    MlpLayer l1 = cdetail::make_mlp_layer(h1, d);
    const std::size_t off_a = 0;
    const std::size_t off_b = r * dv;
    const std::size_t off_p = 2 * r * dv;
    const std::size_t off_q = off_p + r;
    const std::size_t off_c = off_q + r;
    for (std::size_t c = 0; c < r * dv; ++c) {
        l1.w(off_a + c, c) = 1.0;
        l1.w(off_b + c, c) = -1.0;
    }
    for (std::size_t rel = 0; rel < r; ++rel) {
        l1.w(off_p + rel, scalar) = -0.5;
        l1.b[off_p + rel] = static_cast<double>(rel + 1);
        l1.w(off_q + rel, scalar) = 0.5;
        l1.b[off_q + rel] = -static_cast<double>(rel + 1);
    }
    l1.w(off_c, scalar) = 1.0;

    // Hidden 2: gated blocks y+/y- = [ +/- stack_block - f ]_+ with
    // f_r(j) = 2(p_r + q_r), plus identity relays for the residual cancel.
    const std::size_t h2 = 4 * r * dv + 1;
    MlpLayer l2 = cdetail::make_mlp_layer(h2, h1);
    const std::size_t off_yp = 0;
    const std::size_t off_ym = r * dv;
    const std::size_t off_ar = 2 * r * dv;
    const std::size_t off_br = 3 * r * dv;
    const std::size_t off_t1 = 4 * r * dv;
    for (std::size_t rel = 0; rel < r; ++rel) {
        for (std::size_t t = 0; t < dv; ++t) {
            const std::size_t c = rel * dv + t;
            l2.w(off_yp + c, off_a + c) = 1.0;
            l2.w(off_yp + c, off_b + c) = -1.0;
            l2.w(off_yp + c, off_p + rel) = -2.0;
            l2.w(off_yp + c, off_q + rel) = -2.0;
            l2.w(off_ym + c, off_a + c) = -1.0;
            l2.w(off_ym + c, off_b + c) = 1.0;
            l2.w(off_ym + c, off_p + rel) = -2.0;
            l2.w(off_ym + c, off_q + rel) = -2.0;
            l2.w(off_ar + c, off_a + c) = 1.0;
            l2.w(off_br + c, off_b + c) = 1.0;
        }
    }
    l2.w(off_t1, off_c) = 1.0;

    // Output: selected block minus the residual stack; also clears the scalar.
    MlpLayer l3 = cdetail::make_mlp_layer(d, h2);
    for (std::size_t rel = 0; rel < r; ++rel) {
        for (std::size_t t = 0; t < dv; ++t) {
            const std::size_t c = rel * dv + t;
            l3.w(t, off_yp + c) += 1.0;
            l3.w(t, off_ym + c) -= 1.0;
            l3.w(c, off_ar + c) -= 1.0;
            l3.w(c, off_br + c) += 1.0;
        }
    }
    l3.w(scalar, off_t1) = -1.0;

    layer.mlp = {std::move(l1), std::move(l2), std::move(l3)};
    params.layers.push_back(std::move(layer));
    return params;
}

// ---------------------------------------------------------------------------
// Shared attributes, multi-head attention: one head per relation; the matched
// head attends the subject and extracts its block, mismatched heads park on
// the (zero-valued) relation token. Needs the relation codebook coherence
// strictly below d_u/2 so every mismatched score 2<u_j,u_j'> - d_u stays
// negative; sampled with that acceptance.
// ---------------------------------------------------------------------------
inline ModelParams build_shared_attr_multihead(const TaskSpec& spec, const RelationSet& rels,
                                               Prng& prng, double beta = 16.0,
                                               const ConstructOptions& opts = {}) {
    spec.validate();
    if (spec.hops != 1) {
        throw std::invalid_argument(
            "build_shared_attr_multihead: single-hop construction (k must be 1)");
    }
    if (beta <= 0.0) {
        throw std::invalid_argument("build_shared_attr_multihead: beta must be positive");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const CodeBook vbook = sample_codes(n, prng, opts.code_retries);
    const std::size_t du_target = code_dim(r);
    const double strict_bound = (static_cast<double>(du_target) - 2.0) / 2.0;
    const CodeBook ubook =
        sample_codes(r, prng, opts.strict_code_retries, std::max(strict_bound, 0.0));
    const std::size_t dv = vbook.dim;
    const std::size_t du = ubook.dim;
    const std::size_t d = r * dv + du + 1;
    const std::size_t flag = d - 1;
    const std::size_t ublock = r * dv;

    // Worst-case decode margin at this beta: the matched head holds at least
    // 1 - e^{-2 beta d_u} mass on the subject; each mismatched head leaks at
    // most 1/(1 + e^{2 beta gap}) onto it.
    if (r >= 2) {
        const double gap = static_cast<double>(du) - 2.0 * ubook.max_abs_dot;  // = |q| lower bound
        const double leak = 1.0 / (1.0 + std::exp(2.0 * beta * gap));
        const double matched = 1.0 - 1.0 / (1.0 + std::exp(2.0 * beta * static_cast<double>(du)));
        const double margin_bound = matched * (static_cast<double>(dv) - vbook.max_abs_dot) -
                                    2.0 * static_cast<double>(dv) * static_cast<double>(r - 1) * leak;
        if (!(margin_bound > 0.0)) {
            throw std::runtime_error(
                "build_shared_attr_multihead: beta too small: worst-case decode margin " +
                std::to_string(margin_bound) + " <= 0 for a relation pair at score gap " +
                std::to_string(gap));
        }
    }

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::softmax_full;
    params.embed_in = Matrix(n + r, d);
    for (std::uint32_t i = 0; i < n; ++i) {
        double* row = params.embed_in.row(i);
        for (std::size_t rel = 0; rel < r; ++rel) {
            cdetail::copy_code(row + rel * dv, vbook.code(rels.apply(rel, i)), dv);
        }
        row[flag] = 1.0;
    }
    for (std::size_t j = 0; j < r; ++j) {
        double* row = params.embed_in.row(n + j);
        cdetail::copy_code(row + ublock, ubook.code(j), du);
        row[flag] = -1.0;
    }
    params.embed_out = Matrix(n + r, d);
    for (std::size_t a = 0; a < n; ++a) {
        cdetail::copy_code(params.embed_out.row(a), vbook.code(a), dv);
    }

    LayerParams layer;
    for (std::size_t j = 0; j < r; ++j) {
        HeadParams head;
        head.wk = Matrix(dv, d);
        head.wk(0, flag) = beta;
        head.wq = Matrix(dv, d);
        for (std::size_t t = 0; t < du; ++t) {
            head.wq(0, ublock + t) = 2.0 * ubook.code(j)[t];
        }
        head.wq(0, flag) = static_cast<double>(du);
        head.wv = Matrix(dv, d);
        cdetail::set_identity_block(head.wv, 0, j * dv, dv);
        head.wo = Matrix(d, dv);
        cdetail::set_identity_block(head.wo, 0, 0, dv);
        layer.heads.push_back(std::move(head));
    }
    params.layers.push_back(std::move(layer));
    return params;
}

// ---------------------------------------------------------------------------
// Shared attributes, hierarchical attention: layer 0 is a uniform-causal copy
// of the answer stack into the relation token; each of the log2(R) filter
// layers installs two polarity heads that zero the stack slots disagreeing
// with the queried relation's bit, parking on BOS when silent. Sequence is
// (BOS, subject, relation); a constant-1 coordinate carries the query bias.
// ---------------------------------------------------------------------------
inline ModelParams build_shared_attr_hierarchical(const TaskSpec& spec, const RelationSet& rels,
                                                  Prng& prng, double beta = 16.0,
                                                  const ConstructOptions& opts = {}) {
    spec.validate();
    if (spec.hops != 1) {
        throw std::invalid_argument(
            "build_shared_attr_hierarchical: single-hop construction (k must be 1)");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    if (r < 2 || (r & (r - 1)) != 0) {
        throw std::invalid_argument(
            "build_shared_attr_hierarchical: R must be a power of two >= 2, got " +
            std::to_string(r));
    }
    if (beta <= 0.0) {
        throw std::invalid_argument("build_shared_attr_hierarchical: beta must be positive");
    }
    const std::size_t bits = ceil_log2(r);
    const CodeBook vbook = sample_codes(n, prng, opts.code_retries);
    const std::size_t dv = vbook.dim;
    const std::size_t d = r * dv + bits + 3;
    const std::size_t bit0 = r * dv;
    const std::size_t flag = bit0 + bits;
    const std::size_t bosflag = flag + 1;
    const std::size_t cst = bosflag + 1;

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::softmax_causal;
    params.prepend_bos = true;
    params.embed_in = Matrix(n + r + 1, d);  // BOS is the last row
    for (std::uint32_t i = 0; i < n; ++i) {
        double* row = params.embed_in.row(i);
        for (std::size_t rel = 0; rel < r; ++rel) {
            cdetail::copy_code(row + rel * dv, vbook.code(rels.apply(rel, i)), dv);
        }
        row[flag] = 1.0;
        row[cst] = 1.0;
    }
    for (std::size_t j = 0; j < r; ++j) {
        double* row = params.embed_in.row(n + j);
        const auto jbits = binary_code(j, bits);
        for (std::size_t t = 0; t < bits; ++t) {
            row[bit0 + t] = jbits[t] ? 1.0 : -1.0;
        }
        row[flag] = -1.0;
        row[cst] = 1.0;
    }
    {
        double* bos = params.embed_in.row(n + r);
        bos[bosflag] = 1.0;
        bos[cst] = 1.0;
    }
    // Readout sums the answer stack: row a repeats v_a across all R slots.
    params.embed_out = Matrix(n + r + 1, d);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t rel = 0; rel < r; ++rel) {
            cdetail::copy_code(params.embed_out.row(a) + rel * dv, vbook.code(a), dv);
        }
    }

    // Layer 0: W_Q = W_K = 0 (uniform over the causal prefix), W_VO = 3 on the
    // answer stack.
    {
        LayerParams layer;
        HeadParams head;
        const std::size_t dh = r * dv;
        head.wq = Matrix(dh, d);
        head.wk = Matrix(dh, d);
        head.wv = Matrix(dh, d);
        cdetail::set_identity_block(head.wv, 0, 0, dh, 3.0);
        head.wo = Matrix(d, dh);
        cdetail::set_identity_block(head.wo, 0, 0, dh);
        layer.heads.push_back(std::move(head));
        params.layers.push_back(std::move(layer));
    }

    // Filter layers: at level l, head A fires when bit l of the queried
    // relation is 1 and removes the bit-0 slots (-P_l^-); head B mirrors it.
    for (std::size_t level = 0; level < bits; ++level) {
        LayerParams layer;
        const std::size_t dh = std::max<std::size_t>(r * dv / 2, 2);
        for (int polarity = 0; polarity < 2; ++polarity) {
            HeadParams head;
            head.wk = Matrix(dh, d);
            head.wk(0, flag) = beta;
            head.wk(1, bosflag) = beta;
            head.wq = Matrix(dh, d);
            const double sign = polarity == 0 ? 1.0 : -1.0;  // head A then head B
            head.wq(0, cst) = -beta / 2.0;
            head.wq(0, bit0 + level) = -sign * beta / 2.0;
            head.wq(1, cst) = beta / 2.0;
            head.wq(1, bit0 + level) = -sign * beta / 2.0;
            // Head A removes slots whose bit is 0; head B removes bit-1 slots.
            head.wv = Matrix(dh, d);
            head.wo = Matrix(d, dh);
            std::size_t row = 0;
            for (std::size_t slot = 0; slot < r; ++slot) {
                const bool slot_bit = ((slot >> level) & 1u) != 0;
                const bool removed = polarity == 0 ? !slot_bit : slot_bit;
                if (!removed) {
                    continue;
                }
                for (std::size_t t = 0; t < dv; ++t) {
                    head.wv(row, slot * dv + t) = 1.0;
                    head.wo(slot * dv + t, row) = -1.0;
                    ++row;
                }
            }
            layer.heads.push_back(std::move(head));
        }
        params.layers.push_back(std::move(layer));
    }
    return params;
}

// ---------------------------------------------------------------------------
// k-hop key-value memory: the subject token walks the relations with a moving
// position pointer; an O(N*R) lookup MLP rewrites its subject bits each layer.
// Layers 1..k share weights; a (k+1)-th attention-only layer copies the answer
// to the final position as 2*bin(s_k) - 1. Keys carry a -beta*flag row so the
// subject's own key never ties with the fetched relation.
// ---------------------------------------------------------------------------
inline ModelParams build_khop_kv(const TaskSpec& spec, const RelationSet& rels, Prng& prng,
                                 const ConstructOptions& opts = {}) {
    spec.validate();
    (void)prng;  // layout is deterministic; kept for builder-signature uniformity
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const std::size_t k = spec.hops;
    const std::size_t ds = std::max<std::size_t>(ceil_log2(n), 1);
    const std::size_t dr = ceil_log2(r);
    const std::size_t d = 1 + ds + 2 * dr + k;
    const double beta = opts.beta;

    const std::size_t lookup = n * r;
    const std::size_t h1 = lookup + 2 * dr + k;
    const std::size_t approx_bytes = (h1 * d + d * h1 + (n + r) * d * 2) * sizeof(double);
    if (approx_bytes > opts.mem_cap_bytes) {
        throw ResourceCapError(approx_bytes, opts.mem_cap_bytes);
    }

    const std::size_t subj0 = 1;
    const std::size_t rel0 = subj0 + ds;
    const std::size_t scr0 = rel0 + dr;
    const std::size_t pos0 = scr0 + dr;

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::softmax_full;
    params.embed_in = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        double* row = params.embed_in.row(s);
        row[0] = 1.0;
        const auto bits = binary_code(s, ds);
        for (std::size_t t = 0; t < ds; ++t) {
            row[subj0 + t] = bits[t];
        }
        row[pos0 + 0] = 1.0;  // pointer starts at relation 1
    }
    for (std::uint32_t rel = 0; rel < r; ++rel) {
        double* row = params.embed_in.row(n + rel);
        const auto bits = binary_code(rel, dr);
        for (std::size_t t = 0; t < dr; ++t) {
            row[rel0 + t] = bits[t];
        }
    }
    // Position identities for the relation slots (sequence position t >= 1
    // holds relation t, key e_t at pos coordinate t-1). The subject's pointer
    // lives in its embedding.
    params.positions = Matrix(k + 1, d);
    for (std::size_t t = 1; t <= k; ++t) {
        params.positions(t, pos0 + (t - 1)) = 1.0;
    }
    params.embed_out = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        const auto bits = binary_code(s, ds);
        for (std::size_t t = 0; t < ds; ++t) {
            params.embed_out(s, subj0 + t) = bits[t] ? 1.0 : -1.0;
        }
    }

    // Hop layer, shared by layers 1..k.
    LayerParams hop_layer;
    {
        HeadParams head;
        const std::size_t dh = std::max(k + 1, dr);
        head.wq = Matrix(dh, d);
        head.wk = Matrix(dh, d);
        for (std::size_t c = 0; c < k; ++c) {
            head.wq(c, pos0 + c) = beta;
            head.wk(c, pos0 + c) = beta;
        }
        head.wq(k, 0) = beta;   // flag row: query carries +beta*flag
        head.wk(k, 0) = -beta;  // key carries -beta*flag, cancelling self-match
        head.wv = Matrix(dh, d);
        for (std::size_t c = 0; c < dr; ++c) {
            head.wv(c, rel0 + c) = 1.0;
        }
        head.wo = Matrix(d, dh);
        for (std::size_t c = 0; c < dr; ++c) {
            head.wo(scr0 + c, c) = 1.0;
        }
        hop_layer.heads.push_back(std::move(head));

        MlpLayer l1 = cdetail::make_mlp_layer(h1, d);
        MlpLayer l2 = cdetail::make_mlp_layer(d, h1);
        for (std::uint32_t s = 0; s < n; ++s) {
            const auto sbits = binary_code(s, ds);
            for (std::uint32_t rel = 0; rel < r; ++rel) {
                const auto rbits = binary_code(rel, dr);
                const std::size_t neuron = static_cast<std::size_t>(s) * r + rel;
                l1.w(neuron, 0) = 1.0;
                for (std::size_t t = 0; t < ds; ++t) {
                    l1.w(neuron, subj0 + t) = sbits[t] ? 1.0 : -1.0;
                }
                for (std::size_t t = 0; t < dr; ++t) {
                    l1.w(neuron, scr0 + t) = rbits[t] ? 1.0 : -1.0;
                }
                l1.b[neuron] = -static_cast<double>(popcount_bits(sbits)) -
                               static_cast<double>(popcount_bits(rbits));
                // Projection: replace bin(s) with bin(g_rel(s)).
                const auto obits = binary_code(rels.apply(rel, s), ds);
                for (std::size_t t = 0; t < ds; ++t) {
                    const double delta = static_cast<double>(obits[t]) - static_cast<double>(sbits[t]);
                    if (delta != 0.0) {
                        l2.w(subj0 + t, neuron) = delta;
                    }
                }
            }
        }
        // Scratch cleanup via sign-split identity.
        for (std::size_t c = 0; c < dr; ++c) {
            l1.w(lookup + 2 * c, scr0 + c) = 1.0;
            l1.w(lookup + 2 * c + 1, scr0 + c) = -1.0;
            l2.w(scr0 + c, lookup + 2 * c) = -1.0;
            l2.w(scr0 + c, lookup + 2 * c + 1) = 1.0;
        }
        // Flag-gated pointer shift: g_t = [pos_t + flag - 1]_+ fires only on
        // the subject token; position e_k falls off the end after the last hop.
        const std::size_t gate0 = lookup + 2 * dr;
        for (std::size_t t = 0; t < k; ++t) {
            l1.w(gate0 + t, pos0 + t) = 1.0;
            l1.w(gate0 + t, 0) = 1.0;
            l1.b[gate0 + t] = -1.0;
            l2.w(pos0 + t, gate0 + t) -= 1.0;
            if (t + 1 < k) {
                l2.w(pos0 + t + 1, gate0 + t) += 1.0;
            }
        }
        hop_layer.mlp = {std::move(l1), std::move(l2)};
    }
    for (std::size_t layer = 0; layer < k; ++layer) {
        params.layers.push_back(hop_layer);
    }

    // Copy layer: the last relation token fetches the subject's answer bits,
    // written as 2*bin - 1 using the flag as the constant.
    {
        LayerParams layer;
        HeadParams head;
        const std::size_t dh = ds + 1;
        head.wq = Matrix(dh, d);
        head.wq(0, pos0 + (k - 1)) = beta;  // only relation k queries
        head.wk = Matrix(dh, d);
        head.wk(0, 0) = beta;  // subject key
        head.wv = Matrix(dh, d);
        for (std::size_t t = 0; t < ds; ++t) {
            head.wv(t, subj0 + t) = 2.0;
        }
        head.wv(ds, 0) = 1.0;  // flag -> constant 1
        head.wo = Matrix(d, dh);
        for (std::size_t t = 0; t < ds; ++t) {
            head.wo(subj0 + t, t) = 1.0;
            head.wo(subj0 + t, ds) = -1.0;
        }
        layer.heads.push_back(std::move(head));
        params.layers.push_back(std::move(layer));
    }
    return params;
}

// ---------------------------------------------------------------------------
// k-hop tree pre-computation: the subject embedding carries the full depth-k
// evaluation tree (r_1 outermost, lexicographic); each layer fetches the
// previous token's tree, a Boolean selector keeps the queried branch and the
// compaction erases the rest. The last layer emits 2*bin(s_k) - 1.
// ---------------------------------------------------------------------------
inline ModelParams build_khop_tree(const TaskSpec& spec, const RelationSet& rels, Prng& prng,
                                   const ConstructOptions& opts = {}) {
    spec.validate();
    (void)prng;
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const std::size_t k = spec.hops;
    const std::size_t ds = std::max<std::size_t>(ceil_log2(n), 1);
    const std::size_t dr = ceil_log2(r);

    double tree_width_f = static_cast<double>(ds);
    for (std::size_t h = 0; h < k; ++h) {
        tree_width_f *= static_cast<double>(r);
    }
    const double embed_bytes_f = tree_width_f * static_cast<double>(n) * 8.0 * 2.0;
    if (embed_bytes_f > static_cast<double>(opts.mem_cap_bytes)) {
        throw ResourceCapError(static_cast<std::size_t>(std::min(
                                   embed_bytes_f, 9e18)),
                               opts.mem_cap_bytes);
    }
    std::size_t tree_width = ds;
    for (std::size_t h = 0; h < k; ++h) {
        tree_width *= r;
    }
    const std::size_t d = tree_width + dr + k + 1;
    const std::size_t rel0 = tree_width;
    const std::size_t pos0 = rel0 + dr;
    const double beta = opts.beta;

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::softmax_full;
    params.embed_in = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        double* row = params.embed_in.row(s);
        // Leaf at path index sum (r_i * R^{k-i}) holds bin of the composition.
        std::vector<std::uint32_t> path(k, 0);
        for (std::size_t leaf = 0; leaf < tree_width / ds; ++leaf) {
            std::size_t rest = leaf;
            for (std::size_t h = k; h-- > 0;) {
                path[h] = static_cast<std::uint32_t>(rest % r);
                rest /= r;
            }
            const auto bits = binary_code(compose_path(rels, s, path), ds);
            for (std::size_t t = 0; t < ds; ++t) {
                row[leaf * ds + t] = bits[t];
            }
        }
    }
    for (std::uint32_t rel = 0; rel < r; ++rel) {
        double* row = params.embed_in.row(n + rel);
        const auto bits = binary_code(rel, dr);
        for (std::size_t t = 0; t < dr; ++t) {
            row[rel0 + t] = bits[t];
        }
    }
    params.positions = Matrix(k + 1, d);
    for (std::size_t t = 0; t <= k; ++t) {
        params.positions(t, pos0 + t) = 1.0;
    }
    params.embed_out = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        const auto bits = binary_code(s, ds);
        for (std::size_t t = 0; t < ds; ++t) {
            params.embed_out(s, t) = bits[t] ? 1.0 : -1.0;
        }
    }

    for (std::size_t level = 1; level <= k; ++level) {
        LayerParams layer;
        HeadParams head;
        const std::size_t dh = std::max(tree_width, k + 1);
        head.wq = Matrix(dh, d);
        head.wk = Matrix(dh, d);
        for (std::size_t c = 0; c <= k; ++c) {
            head.wk(c, pos0 + c) = beta;
            if (c >= 1) {
                head.wq(c - 1, pos0 + c) = beta;  // Q_pos = sum e_{i-1} e_i^T
            }
        }
        head.wv = Matrix(dh, d);
        cdetail::set_identity_block(head.wv, 0, 0, tree_width);
        head.wo = Matrix(d, dh);
        cdetail::set_identity_block(head.wo, 0, 0, tree_width);
        layer.heads.push_back(std::move(head));

        std::size_t v_level = tree_width;  // R^{k-level} * d_S, the selected width
        for (std::size_t h = 0; h < level; ++h) {
            v_level /= r;
        }
        const std::size_t selector = r * v_level;
        const std::size_t h1 = selector + tree_width;
        MlpLayer l1 = cdetail::make_mlp_layer(h1, d);
        MlpLayer l2 = cdetail::make_mlp_layer(d, h1);
        for (std::uint32_t branch = 0; branch < r; ++branch) {
            const auto rbits = binary_code(branch, dr);
            const double pop = static_cast<double>(popcount_bits(rbits));
            for (std::size_t j = 0; j < v_level; ++j) {
                const std::size_t neuron = static_cast<std::size_t>(branch) * v_level + j;
                l1.w(neuron, static_cast<std::size_t>(branch) * v_level + j) = 1.0;
                for (std::size_t t = 0; t < dr; ++t) {
                    l1.w(neuron, rel0 + t) = rbits[t] ? 1.0 : -1.0;
                }
                for (std::size_t t = 0; t <= k; ++t) {
                    l1.w(neuron, pos0 + t) = t == level ? 1.0 : -1.0;
                }
                l1.b[neuron] = -pop - 1.0;
                if (level == k) {
                    l2.w(j, neuron) = 2.0;  // final layer emits signed bits
                } else {
                    l2.w(j, neuron) = 1.0;
                }
            }
        }
        for (std::size_t c = 0; c < tree_width; ++c) {
            l1.w(selector + c, c) = 1.0;
            l2.w(c, selector + c) = -1.0;  // erase the residual tree
        }
        if (level == k) {
            for (std::size_t j = 0; j < v_level; ++j) {
                l2.b[j] = -1.0;
            }
        }
        layer.mlp = {std::move(l1), std::move(l2)};
        params.layers.push_back(std::move(layer));
    }
    return params;
}

// ---------------------------------------------------------------------------
// k-hop chain of thought: single layer, three position-routed heads. At
// generation step j (active position k+j-1... the j-th emission), head A
// fetches bin(r_j), head B fetches the subject payload of s_0 at the first
// step (and a zero-valued relation token afterwards), head C cancels the
// active token's own relation bits. The selector then emits 2*bin(s_j) - 1,
// so the generated tokens are exactly s_1..s_k.
// ---------------------------------------------------------------------------
inline ModelParams build_khop_cot(const TaskSpec& spec, const RelationSet& rels, Prng& prng,
                                  double tau = 16.0, const ConstructOptions& opts = {}) {
    spec.validate();
    (void)prng;
    (void)opts;
    if (tau <= 0.0) {
        throw std::invalid_argument("build_khop_cot: tau must be positive");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const std::size_t k = spec.hops;
    const std::size_t ds = std::max<std::size_t>(ceil_log2(n), 1);
    const std::size_t dr = ceil_log2(r);
    const std::size_t seq = 2 * k + 1;
    const std::size_t d = 1 + ds + dr + r * ds + seq;
    const std::size_t subj0 = 1;
    const std::size_t rel0 = subj0 + ds;
    const std::size_t hop0 = rel0 + dr;
    const std::size_t pos0 = hop0 + r * ds;

    // Saturation sanity: the selector gates have margin 1 and the decode
    // margin is 2; routing leakage must stay well under both.
    const double leakage = static_cast<double>(seq) * std::exp(-tau) *
                           static_cast<double>(1 + ds + dr + r * ds + 2);
    if (!(leakage < 0.25)) {
        throw std::runtime_error("build_khop_cot: tau too small: routing leakage bound " +
                                 std::to_string(leakage) + " >= 0.25 breaks the argmax margin");
    }

    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = AttentionMode::softmax_full;
    params.embed_in = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        double* row = params.embed_in.row(s);
        row[0] = 1.0;
        const auto bits = binary_code(s, ds);
        for (std::size_t t = 0; t < ds; ++t) {
            row[subj0 + t] = bits[t];
        }
        const auto hop = cdetail::hop_block(rels, s, ds);
        for (std::size_t t = 0; t < hop.size(); ++t) {
            row[hop0 + t] = hop[t];
        }
    }
    for (std::uint32_t rel = 0; rel < r; ++rel) {
        double* row = params.embed_in.row(n + rel);
        const auto bits = binary_code(rel, dr);
        for (std::size_t t = 0; t < dr; ++t) {
            row[rel0 + t] = bits[t];
        }
    }
    params.positions = Matrix(seq, d);
    for (std::size_t t = 0; t < seq; ++t) {
        params.positions(t, pos0 + t) = 1.0;
    }
    params.embed_out = Matrix(n + r, d);
    for (std::uint32_t s = 0; s < n; ++s) {
        const auto bits = binary_code(s, ds);
        for (std::size_t t = 0; t < ds; ++t) {
            params.embed_out(s, subj0 + t) = bits[t] ? 1.0 : -1.0;
        }
    }

    LayerParams layer;
    const std::size_t dh = std::max(seq, 1 + ds + r * ds);
    auto routed_head = [&](const std::vector<std::pair<std::size_t, std::size_t>>& routes) {
        HeadParams head;
        head.wq = Matrix(dh, d);
        head.wk = Matrix(dh, d);
        for (std::size_t c = 0; c < seq; ++c) {
            head.wk(c, pos0 + c) = 1.0;
        }
        for (const auto& [target, source] : routes) {
            head.wq(target, pos0 + source) = tau;
        }
        head.wv = Matrix(dh, d);
        head.wo = Matrix(d, dh);
        return head;
    };

    // Head A: active position k+j-1 fetches relation j+1's bits (j = 0..k-1)
    // into the relation block.
    {
        std::vector<std::pair<std::size_t, std::size_t>> routes;
        for (std::size_t j = 0; j < k; ++j) {
            routes.push_back({j + 1, k + j});
        }
        HeadParams head = routed_head(routes);
        for (std::size_t t = 0; t < dr; ++t) {
            head.wv(t, rel0 + t) = 1.0;
            head.wo(rel0 + t, t) = 1.0;
        }
        layer.heads.push_back(std::move(head));
    }
    // Head B: position k fetches s_0's flag/bits/hop; later active positions
    // target a relation token, whose payload is zero there.
    {
        std::vector<std::pair<std::size_t, std::size_t>> routes;
        routes.push_back({0, k});
        for (std::size_t j = 1; j < k; ++j) {
            routes.push_back({j + 1, k + j});
        }
        HeadParams head = routed_head(routes);
        head.wv(0, 0) = 1.0;
        head.wo(0, 0) = 1.0;
        for (std::size_t t = 0; t < ds; ++t) {
            head.wv(1 + t, subj0 + t) = 1.0;
            head.wo(subj0 + t, 1 + t) = 1.0;
        }
        for (std::size_t t = 0; t < r * ds; ++t) {
            head.wv(1 + ds + t, hop0 + t) = 1.0;
            head.wo(hop0 + t, 1 + ds + t) = 1.0;
        }
        layer.heads.push_back(std::move(head));
    }
    // Head C: every position attends itself and subtracts its own relation
    // bits; only r_k carries any at an active position.
    {
        std::vector<std::pair<std::size_t, std::size_t>> routes;
        for (std::size_t t = 0; t < seq; ++t) {
            routes.push_back({t, t});
        }
        HeadParams head = routed_head(routes);
        for (std::size_t t = 0; t < dr; ++t) {
            head.wv(t, rel0 + t) = 1.0;
            head.wo(rel0 + t, t) = -1.0;
        }
        layer.heads.push_back(std::move(head));
    }

    // MLP: selector over (relation, bit) plus a residual cancel on the subject
    // bits; output is 2*bin(next subject) - 1 on the subject block.
    const std::size_t selector = r * ds;
    const std::size_t h1 = selector + ds;
    MlpLayer l1 = cdetail::make_mlp_layer(h1, d);
    MlpLayer l2 = cdetail::make_mlp_layer(d, h1);
    for (std::uint32_t rel = 0; rel < r; ++rel) {
        const auto rbits = binary_code(rel, dr);
        const double pop = static_cast<double>(popcount_bits(rbits));
        for (std::size_t j = 0; j < ds; ++j) {
            const std::size_t neuron = static_cast<std::size_t>(rel) * ds + j;
            for (std::size_t t = 0; t < dr; ++t) {
                l1.w(neuron, rel0 + t) = rbits[t] ? 1.0 : -1.0;
            }
            l1.w(neuron, hop0 + static_cast<std::size_t>(rel) * ds + j) = 1.0;
            for (std::size_t t = 0; t < seq; ++t) {
                const bool active = t >= k && t < 2 * k;
                l1.w(neuron, pos0 + t) = active ? 1.0 : -1.0;
            }
            l1.b[neuron] = -pop - 1.0;
            l2.w(subj0 + j, neuron) = 2.0;
        }
    }
    for (std::size_t t = 0; t < ds; ++t) {
        l1.w(selector + t, subj0 + t) = 1.0;
        l2.w(subj0 + t, selector + t) = -1.0;
        l2.b[subj0 + t] = -1.0;
    }
    layer.mlp = {std::move(l1), std::move(l2)};
    params.layers.push_back(std::move(layer));
    return params;
}

// ---------------------------------------------------------------------------
// Exhaustive / sampled certification against the composition oracle.
// ---------------------------------------------------------------------------
inline VerifyReport verify_exact(const ModelParams& params, const TaskSpec& spec,
                                 const RelationSet& rels, std::size_t budget, bool use_cot,
                                 Prng& prng, std::size_t workers = 0) {
    if (params.n_subjects != spec.n_subjects || params.n_relations != spec.n_relations) {
        throw std::invalid_argument("verify_exact: model and task vocabularies disagree");
    }
    const QueryBatch batch = enumerate_queries(spec, rels, budget, prng);
    VerifyReport report;
    report.exhaustive = batch.exhaustive;
    report.queries_checked = batch.size();

    if (workers == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        workers = hw == 0 ? 1 : std::min<std::size_t>(hw, 8);
    }
    workers = std::min<std::size_t>(workers, std::max<std::size_t>(batch.size() / 64, 1));

    struct Shard {
        std::vector<VerifyReport::Mismatch> errors;
        double margin = std::numeric_limits<double>::infinity();
    };
    std::vector<Shard> shards(workers);

    auto run_shard = [&](std::size_t w) {
        Shard& shard = shards[w];
        for (std::size_t i = w; i < batch.size(); i += workers) {
            const auto tokens = batch.prompt_tokens(i, spec.n_subjects);
            std::uint32_t predicted = 0;
            double margin = std::numeric_limits<double>::infinity();
            if (use_cot) {
                std::vector<std::uint32_t> sequence = tokens;
                for (std::size_t step = 0; step < spec.hops; ++step) {
                    const ForwardTrace trace = forward(params, sequence);
                    const std::size_t last = trace.logits.cols - 1;
                    std::size_t best = 0;
                    double best_val = -std::numeric_limits<double>::infinity();
                    double second = -std::numeric_limits<double>::infinity();
                    for (std::size_t v = 0; v < params.n_subjects; ++v) {
                        const double val = trace.logits(v, last);
                        if (val > best_val) {
                            second = best_val;
                            best_val = val;
                            best = v;
                        } else if (val > second) {
                            second = val;
                        }
                    }
                    if (std::isfinite(second)) {
                        margin = std::min(margin, best_val - second);
                    }
                    sequence.push_back(static_cast<std::uint32_t>(best));
                }
                predicted = sequence.back();
            } else {
                const ForwardTrace trace = forward(params, tokens);
                const std::size_t last = trace.logits.cols - 1;
                predicted = decode_prediction(params, trace.logits, last);
                margin = decode_margin(params, trace.logits, last);
            }
            shard.margin = std::min(shard.margin, margin);
            if (predicted != batch.answers[i]) {
                shard.errors.push_back({batch.subjects[i], batch.path_vector(i), predicted,
                                        batch.answers[i]});
            }
        }
    };

    if (workers <= 1) {
        run_shard(0);
    } else {
        std::vector<std::thread> threads;
        threads.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) {
            threads.emplace_back(run_shard, w);
        }
        run_shard(0);
        for (auto& t : threads) {
            t.join();
        }
    }
    for (const Shard& shard : shards) {
        report.margin_slack = std::min(report.margin_slack, shard.margin);
        report.errors.insert(report.errors.end(), shard.errors.begin(), shard.errors.end());
    }
    return report;
}

}  // namespace gmem
