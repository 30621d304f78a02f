#pragma once

// Gradient training of the single-layer architecture with hand-derived
// backprop: uniform-causal or learned-softmax attention, GELU/ReLU MLP,
// pre-RMSNorm, AdamW with decoupled weight decay and global-norm clipping.
// The batched forward/backward is fused, computes the MLP only at predicted
// positions, and shards examples across worker threads; shard-ordered
// reduction keeps results bit-deterministic.
//
// Loss: mean cross-entropy over the entity-prediction positions, softmax
// restricted to the N entity logits (targets are always entities, so the
// uniform-logit loss is exactly ln N).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gmem/model.hpp"
#include "gmem/prng.hpp"
#include "gmem/task.hpp"

namespace gmem {

struct TrainConfig {
    TaskSpec task;
    std::size_t d = 64;
    std::size_t mlp_width = 0;  // 0 -> 4d
    AttentionMode attention = AttentionMode::uniform_causal;
    Activation activation = Activation::gelu;
    NormMode norm = NormMode::pre_rmsnorm;
    bool learned_positions = false;
    bool cot = false;
    bool freeze_embeddings = false;
    double lr = 1.0;
    double weight_decay = 0.1;
    std::size_t steps = 15000;
    std::size_t batch = 1024;
    double clip_norm = 1.0;
    double early_stop_loss = 1e-4;
    double early_stop_acc = 0.999;
    std::size_t early_stop_consecutive = 3;
    double init_std = 0.02;
    std::size_t log_every = 100;
    std::size_t eval_budget = 1 << 16;
    std::uint64_t seed = 0;
    std::size_t workers = 0;  // 0 -> $GMEM_WORKERS or hardware

    std::size_t width() const { return mlp_width == 0 ? 4 * d : mlp_width; }
    std::size_t seq_len() const { return cot ? 2 * task.hops : task.hops + 1; }
    std::size_t max_len() const { return cot ? 2 * task.hops + 1 : task.hops + 1; }

    void validate() const {
        task.validate();
        if (d < 1 || width() < 1 || batch < 1 || lr < 0.0 || weight_decay < 0.0 ||
            clip_norm <= 0.0 || init_std <= 0.0 || log_every < 1) {
            throw std::invalid_argument("TrainConfig: hyperparameters must be positive");
        }
        if (attention != AttentionMode::uniform_causal &&
            attention != AttentionMode::softmax_causal) {
            throw std::invalid_argument(
                "TrainConfig: trainer supports uniform-causal or softmax-causal attention");
        }
    }
};

inline std::size_t default_workers() {
    if (const char* env = std::getenv("GMEM_WORKERS")) {
        const long v = std::atol(env);
        if (v >= 1 && v <= 64) {
            return static_cast<std::size_t>(v);
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : std::min<unsigned>(hw, 8);
}

// ---------------------------------------------------------------------------
// Parameter views: a flat, canonically ordered list of tensors. The optimizer,
// gradients, and the finite-difference oracle all iterate this order.
// ---------------------------------------------------------------------------
struct TensorView {
    std::string name;
    double* data;
    std::size_t size;
    bool trainable;
};

inline std::vector<TensorView> parameter_views(ModelParams& params, bool freeze_embeddings) {
    if (params.layers.size() != 1 || params.layers[0].heads.size() != 1 ||
        params.layers[0].mlp.size() != 2) {
        throw std::invalid_argument("parameter_views: expected 1 layer, 1 head, 2-map MLP");
    }
    std::vector<TensorView> views;
    auto add = [&](const std::string& name, std::vector<double>& v, bool trainable) {
        views.push_back({name, v.data(), v.size(), trainable});
    };
    add("embed_in", params.embed_in.data, !freeze_embeddings);
    add("embed_out", params.embed_out.data, true);
    if (!params.positions.empty()) {
        add("positions", params.positions.data, true);
    }
    LayerParams& layer = params.layers[0];
    HeadParams& head = layer.heads[0];
    if (params.attention == AttentionMode::softmax_causal ||
        params.attention == AttentionMode::softmax_full) {
        add("wq", head.wq.data, true);
        add("wk", head.wk.data, true);
    }
    add("wv", head.wv.data, true);
    add("wo", head.wo.data, true);
    add("mlp0.w", layer.mlp[0].w.data, true);
    add("mlp0.b", layer.mlp[0].b, true);
    add("mlp1.w", layer.mlp[1].w.data, true);
    add("mlp1.b", layer.mlp[1].b, true);
    if (params.norm == NormMode::pre_rmsnorm) {
        add("norm_attn", layer.norm_attn, true);
        add("norm_mlp", layer.norm_mlp, true);
    }
    return views;
}

struct GradientSet {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;

    const std::vector<double>& by_name(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) {
                return values[i];
            }
        }
        throw std::out_of_range("GradientSet: no tensor named " + name);
    }

    double global_norm() const {
        double sum = 0.0;
        for (const auto& v : values) {
            for (double x : v) {
                sum += x * x;
            }
        }
        return std::sqrt(sum);
    }
};

// ---------------------------------------------------------------------------
// Model initialization: embeddings and weights ~ Normal(0, init_std^2), biases
// zero, norm gains one.
// ---------------------------------------------------------------------------
inline ModelParams init_model(const TrainConfig& cfg, Prng& prng) {
    cfg.validate();
    const std::size_t n = cfg.task.n_subjects;
    const std::size_t r = cfg.task.n_relations;
    const std::size_t d = cfg.d;
    ModelParams params;
    params.n_subjects = n;
    params.n_relations = r;
    params.d = d;
    params.attention = cfg.attention;
    params.norm = cfg.norm;
    params.activation = cfg.activation;

    auto fill = [&](Matrix& m, std::size_t rows, std::size_t cols) {
        m = Matrix(rows, cols);
        for (double& v : m.data) {
            v = prng.normal(0.0, cfg.init_std);
        }
    };
    fill(params.embed_in, n + r, d);
    fill(params.embed_out, n + r, d);
    if (cfg.learned_positions) {
        fill(params.positions, cfg.max_len(), d);
    }
    LayerParams layer;
    HeadParams head;
    if (cfg.attention == AttentionMode::softmax_causal) {
        fill(head.wq, d, d);
        fill(head.wk, d, d);
    }
    fill(head.wv, d, d);
    fill(head.wo, d, d);
    layer.heads.push_back(std::move(head));
    MlpLayer m0, m1;
    fill(m0.w, cfg.width(), d);
    m0.b.assign(cfg.width(), 0.0);
    fill(m1.w, d, cfg.width());
    m1.b.assign(d, 0.0);
    layer.mlp = {std::move(m0), std::move(m1)};
    if (cfg.norm == NormMode::pre_rmsnorm) {
        layer.norm_attn.assign(d, 1.0);
        layer.norm_mlp.assign(d, 1.0);
    }
    params.layers.push_back(std::move(layer));
    return params;
}

// ---------------------------------------------------------------------------
// Token/target assembly. CoT sequences are teacher-forced:
// (s0, r_1..r_k, s_1..s_{k-1}) with entity targets s_1..s_k read at positions
// k..2k-1; otherwise the answer is read at the final position.
// ---------------------------------------------------------------------------
struct TrainBatch {
    std::size_t n_seq = 0;
    std::size_t seq_len = 0;
    std::vector<std::uint32_t> tokens;   // n_seq * seq_len
    std::vector<std::size_t> pred_pos;   // shared across examples
    std::vector<std::uint32_t> targets;  // n_seq * pred_pos.size(), entity ids
};

inline TrainBatch make_train_batch(const QueryBatch& queries, const TaskSpec& task, bool cot,
                                   const RelationSet* rels) {
    const std::size_t k = task.hops;
    TrainBatch batch;
    batch.n_seq = queries.size();
    batch.seq_len = cot ? 2 * k : k + 1;
    batch.tokens.resize(batch.n_seq * batch.seq_len);
    if (cot) {
        if (rels == nullptr) {
            throw std::invalid_argument("make_train_batch: cot teacher forcing needs relations");
        }
        for (std::size_t p = k; p < 2 * k; ++p) {
            batch.pred_pos.push_back(p);
        }
    } else {
        batch.pred_pos.push_back(k);
    }
    batch.targets.resize(batch.n_seq * batch.pred_pos.size());
    for (std::size_t e = 0; e < batch.n_seq; ++e) {
        std::uint32_t* toks = batch.tokens.data() + e * batch.seq_len;
        toks[0] = queries.subjects[e];
        for (std::size_t h = 0; h < k; ++h) {
            toks[1 + h] = static_cast<std::uint32_t>(task.n_subjects) + queries.path(e)[h];
        }
        if (cot) {
            std::uint32_t s = queries.subjects[e];
            for (std::size_t h = 0; h < k; ++h) {
                s = rels->apply(queries.path(e)[h], s);
                if (h + 1 < k) {
                    toks[k + 1 + h] = s;
                }
                batch.targets[e * k + h] = s;
            }
        } else {
            batch.targets[e] = queries.answers[e];
        }
    }
    return batch;
}

namespace tdetail {

inline void gemm(double* y, const double* w, const double* x, std::size_t m, std::size_t d,
                 std::size_t cols) {
    // y (m x cols) = w (m x d) * x (d x cols), row-major, y pre-zeroed.
    // Two-row blocking halves the x traffic; the t loop is branch-free and
    // streams contiguously, so it vectorizes.
    std::size_t o = 0;
    for (; o + 2 <= m; o += 2) {
        double* y0 = y + o * cols;
        double* y1 = y + (o + 1) * cols;
        const double* w0 = w + o * d;
        const double* w1 = w + (o + 1) * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double a0 = w0[i];
            const double a1 = w1[i];
            const double* xi = x + i * cols;
            for (std::size_t t = 0; t < cols; ++t) {
                y0[t] += a0 * xi[t];
                y1[t] += a1 * xi[t];
            }
        }
    }
    for (; o < m; ++o) {
        double* yo = y + o * cols;
        const double* wo = w + o * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = wo[i];
            const double* xi = x + i * cols;
            for (std::size_t t = 0; t < cols; ++t) {
                yo[t] += a * xi[t];
            }
        }
    }
}

inline double block_dot(const double* a, const double* b, std::size_t n) {
    // Fixed four-lane accumulation: deterministic and SIMD-friendly.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t t = 0;
    for (; t + 4 <= n; t += 4) {
        s0 += a[t] * b[t];
        s1 += a[t + 1] * b[t + 1];
        s2 += a[t + 2] * b[t + 2];
        s3 += a[t + 3] * b[t + 3];
    }
    double sum = (s0 + s1) + (s2 + s3);
    for (; t < n; ++t) {
        sum += a[t] * b[t];
    }
    return sum;
}

inline void gemm_acc_wgrad(double* dw, const double* dy, const double* x, std::size_t m,
                           std::size_t d, std::size_t cols) {
    // dw (m x d) += dy (m x cols) * x^T (cols x d)
    for (std::size_t o = 0; o < m; ++o) {
        const double* dyo = dy + o * cols;
        double* dwo = dw + o * d;
        for (std::size_t i = 0; i < d; ++i) {
            dwo[i] += block_dot(dyo, x + i * cols, cols);
        }
    }
}

inline void gemm_acc_xgrad(double* dx, const double* w, const double* dy, std::size_t m,
                           std::size_t d, std::size_t cols) {
    // dx (d x cols) += w^T (d x m) * dy (m x cols)
    std::size_t o = 0;
    for (; o + 2 <= m; o += 2) {
        const double* dy0 = dy + o * cols;
        const double* dy1 = dy + (o + 1) * cols;
        const double* w0 = w + o * d;
        const double* w1 = w + (o + 1) * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double a0 = w0[i];
            const double a1 = w1[i];
            double* dxi = dx + i * cols;
            for (std::size_t t = 0; t < cols; ++t) {
                dxi[t] += a0 * dy0[t] + a1 * dy1[t];
            }
        }
    }
    for (; o < m; ++o) {
        const double* dyo = dy + o * cols;
        const double* wo = w + o * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = wo[i];
            double* dxi = dx + i * cols;
            for (std::size_t t = 0; t < cols; ++t) {
                dxi[t] += a * dyo[t];
            }
        }
    }
}

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return cdf + x * pdf;
}

struct ShardResult {
    std::vector<std::vector<double>> grads;  // canonical order, empty if not requested
    double loss_sum = 0.0;
    std::vector<std::uint32_t> predictions;  // per (example, pred position)
};

}  // namespace tdetail

// Mean cross-entropy over all predicted positions; optionally accumulates
// gradients (canonical view order) and argmax entity predictions.
inline double fused_loss_and_grads(const ModelParams& params, const TrainBatch& batch,
                                   const TrainConfig& cfg, GradientSet* grads,
                                   std::vector<std::uint32_t>* predictions = nullptr) {
    const std::size_t d = params.d;
    const std::size_t n_entities = params.n_subjects;
    const std::size_t seq = batch.seq_len;
    const std::size_t n_pred = batch.pred_pos.size();
    const bool softmax_attn = params.attention == AttentionMode::softmax_causal;
    const bool normed = params.norm == NormMode::pre_rmsnorm;
    const LayerParams& layer = params.layers[0];
    const HeadParams& head = layer.heads[0];
    const std::size_t width = layer.mlp[0].w.rows;
    if (!params.positions.empty() && seq > params.positions.rows) {
        throw std::invalid_argument("fused forward: sequence exceeds position table");
    }
    if (batch.n_seq == 0) {
        throw std::invalid_argument("fused forward: empty batch");
    }

    std::size_t workers = cfg.workers == 0 ? default_workers() : cfg.workers;
    workers = std::max<std::size_t>(
        1, std::min(workers, std::max<std::size_t>(batch.n_seq / 8, 1)));

    std::vector<std::pair<std::string, std::size_t>> shapes;
    shapes.push_back({"embed_in", params.embed_in.data.size()});
    shapes.push_back({"embed_out", params.embed_out.data.size()});
    if (!params.positions.empty()) {
        shapes.push_back({"positions", params.positions.data.size()});
    }
    if (softmax_attn) {
        shapes.push_back({"wq", head.wq.data.size()});
        shapes.push_back({"wk", head.wk.data.size()});
    }
    shapes.push_back({"wv", head.wv.data.size()});
    shapes.push_back({"wo", head.wo.data.size()});
    shapes.push_back({"mlp0.w", layer.mlp[0].w.data.size()});
    shapes.push_back({"mlp0.b", layer.mlp[0].b.size()});
    shapes.push_back({"mlp1.w", layer.mlp[1].w.data.size()});
    shapes.push_back({"mlp1.b", layer.mlp[1].b.size()});
    if (normed) {
        shapes.push_back({"norm_attn", layer.norm_attn.size()});
        shapes.push_back({"norm_mlp", layer.norm_mlp.size()});
    }
    auto shape_index = [&](const char* name) {
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            if (shapes[i].first == name) {
                return i;
            }
        }
        throw std::logic_error(std::string("missing grad buffer ") + name);
    };
    const std::size_t gi_embed_in = shape_index("embed_in");
    const std::size_t gi_embed_out = shape_index("embed_out");
    const std::size_t gi_positions = params.positions.empty() ? 0 : shape_index("positions");
    const std::size_t gi_wq = softmax_attn ? shape_index("wq") : 0;
    const std::size_t gi_wk = softmax_attn ? shape_index("wk") : 0;
    const std::size_t gi_wv = shape_index("wv");
    const std::size_t gi_wo = shape_index("wo");
    const std::size_t gi_m0w = shape_index("mlp0.w");
    const std::size_t gi_m0b = shape_index("mlp0.b");
    const std::size_t gi_m1w = shape_index("mlp1.w");
    const std::size_t gi_m1b = shape_index("mlp1.b");
    const std::size_t gi_gamma1 = normed ? shape_index("norm_attn") : 0;
    const std::size_t gi_gamma2 = normed ? shape_index("norm_mlp") : 0;

    std::vector<tdetail::ShardResult> shards(workers);
    const double inv_count = 1.0 / static_cast<double>(batch.n_seq * n_pred);

    auto run_shard = [&](std::size_t w, std::size_t begin, std::size_t end) {
        tdetail::ShardResult& sg = shards[w];
        const bool want_grads = grads != nullptr;
        if (want_grads) {
            sg.grads.resize(shapes.size());
            for (std::size_t i = 0; i < shapes.size(); ++i) {
                sg.grads[i].assign(shapes[i].second, 0.0);
            }
        }
        const std::size_t count = end - begin;
        if (count == 0) {
            return;
        }
        if (predictions != nullptr) {
            sg.predictions.resize(count * n_pred);
        }
        const std::size_t cols = count * seq;
        const std::size_t pcols = count * n_pred;
        Matrix x0(d, cols), n1(d, cols), values(d, cols), mixed(d, cols), zsum(d, cols);
        Matrix xt_pred(d, pcols), n2_pred(d, pcols), hpre(width, pcols), hact(width, pcols);
        Matrix x1_pred(d, pcols), logits(n_entities, pcols), probs(n_entities, pcols);
        std::vector<double> inv_r1(cols), inv_r2(pcols);
        Matrix keys, queries, attn;
        if (softmax_attn) {
            keys = Matrix(d, cols);
            queries = Matrix(d, cols);
            attn = Matrix(seq * seq, count);  // flattened keys x queries per example
        }

        // ---- forward ----
        for (std::size_t e = 0; e < count; ++e) {
            const std::uint32_t* toks = batch.tokens.data() + (begin + e) * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const std::size_t c = e * seq + t;
                const double* row = params.embed_in.row(toks[t]);
                for (std::size_t i = 0; i < d; ++i) {
                    x0(i, c) = row[i];
                }
                if (!params.positions.empty()) {
                    const double* pos = params.positions.row(t);
                    for (std::size_t i = 0; i < d; ++i) {
                        x0(i, c) += pos[i];
                    }
                }
            }
        }
        if (normed) {
            for (std::size_t c = 0; c < cols; ++c) {
                double ms = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    ms += x0(i, c) * x0(i, c);
                }
                const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsNormEps);
                inv_r1[c] = inv;
                for (std::size_t i = 0; i < d; ++i) {
                    n1(i, c) = x0(i, c) * inv * layer.norm_attn[i];
                }
            }
        } else {
            n1 = x0;
        }
        tdetail::gemm(values.data.data(), head.wv.data.data(), n1.data.data(), d, d, cols);
        if (softmax_attn) {
            tdetail::gemm(keys.data.data(), head.wk.data.data(), n1.data.data(), d, d, cols);
            tdetail::gemm(queries.data.data(), head.wq.data.data(), n1.data.data(), d, d, cols);
            std::vector<double> score(seq);
            for (std::size_t e = 0; e < count; ++e) {
                for (std::size_t q = 0; q < seq; ++q) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t kk = 0; kk <= q; ++kk) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < d; ++i) {
                            s += keys(i, e * seq + kk) * queries(i, e * seq + q);
                        }
                        score[kk] = s;
                        mx = std::max(mx, s);
                    }
                    double sum = 0.0;
                    for (std::size_t kk = 0; kk <= q; ++kk) {
                        score[kk] = std::exp(score[kk] - mx);
                        sum += score[kk];
                    }
                    for (std::size_t kk = 0; kk <= q; ++kk) {
                        attn(kk * seq + q, e) = score[kk] / sum;
                    }
                    for (std::size_t i = 0; i < d; ++i) {
                        double acc = 0.0;
                        for (std::size_t kk = 0; kk <= q; ++kk) {
                            acc += values(i, e * seq + kk) * attn(kk * seq + q, e);
                        }
                        mixed(i, e * seq + q) = acc;
                    }
                }
            }
        } else {
            for (std::size_t e = 0; e < count; ++e) {
                for (std::size_t i = 0; i < d; ++i) {
                    double run = 0.0;
                    for (std::size_t t = 0; t < seq; ++t) {
                        run += values(i, e * seq + t);
                        mixed(i, e * seq + t) = run / static_cast<double>(t + 1);
                    }
                }
            }
        }
        tdetail::gemm(zsum.data.data(), head.wo.data.data(), mixed.data.data(), d, d, cols);

        for (std::size_t e = 0; e < count; ++e) {
            for (std::size_t p = 0; p < n_pred; ++p) {
                const std::size_t c = e * seq + batch.pred_pos[p];
                const std::size_t pc = e * n_pred + p;
                for (std::size_t i = 0; i < d; ++i) {
                    xt_pred(i, pc) = x0(i, c) + zsum(i, c);
                }
            }
        }
        if (normed) {
            for (std::size_t pc = 0; pc < pcols; ++pc) {
                double ms = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    ms += xt_pred(i, pc) * xt_pred(i, pc);
                }
                const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsNormEps);
                inv_r2[pc] = inv;
                for (std::size_t i = 0; i < d; ++i) {
                    n2_pred(i, pc) = xt_pred(i, pc) * inv * layer.norm_mlp[i];
                }
            }
        } else {
            n2_pred = xt_pred;
        }
        tdetail::gemm(hpre.data.data(), layer.mlp[0].w.data.data(), n2_pred.data.data(), width, d,
                      pcols);
        for (std::size_t o = 0; o < width; ++o) {
            for (std::size_t pc = 0; pc < pcols; ++pc) {
                hpre(o, pc) += layer.mlp[0].b[o];
                hact(o, pc) = activate(params.activation, hpre(o, pc));
            }
        }
        tdetail::gemm(x1_pred.data.data(), layer.mlp[1].w.data.data(), hact.data.data(), d, width,
                      pcols);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t pc = 0; pc < pcols; ++pc) {
                x1_pred(i, pc) += layer.mlp[1].b[i] + xt_pred(i, pc);
            }
        }
        tdetail::gemm(logits.data.data(), params.embed_out.data.data(), x1_pred.data.data(),
                      n_entities, d, pcols);

        for (std::size_t pc = 0; pc < pcols; ++pc) {
            const std::size_t e = pc / n_pred;
            double mx = -std::numeric_limits<double>::infinity();
            std::size_t best = 0;
            for (std::size_t v = 0; v < n_entities; ++v) {
                if (logits(v, pc) > mx) {
                    mx = logits(v, pc);
                    best = v;
                }
            }
            double sum = 0.0;
            for (std::size_t v = 0; v < n_entities; ++v) {
                const double ev = std::exp(logits(v, pc) - mx);
                probs(v, pc) = ev;
                sum += ev;
            }
            const std::uint32_t target = batch.targets[(begin + e) * n_pred + pc % n_pred];
            // log-sum-exp form: immune to exp underflow at extreme logits
            sg.loss_sum += -(logits(target, pc) - mx - std::log(sum));
            const double inv_sum = 1.0 / sum;
            for (std::size_t v = 0; v < n_entities; ++v) {
                probs(v, pc) *= inv_sum;
            }
            if (predictions != nullptr) {
                sg.predictions[pc] = static_cast<std::uint32_t>(best);
            }
        }
        if (!want_grads) {
            return;
        }

        // ---- backward ----
        Matrix dx1(d, pcols);
        {
            Matrix dlogits(n_entities, pcols);
            for (std::size_t pc = 0; pc < pcols; ++pc) {
                const std::size_t e = pc / n_pred;
                const std::uint32_t target = batch.targets[(begin + e) * n_pred + pc % n_pred];
                for (std::size_t v = 0; v < n_entities; ++v) {
                    dlogits(v, pc) = (probs(v, pc) - (v == target ? 1.0 : 0.0)) * inv_count;
                }
            }
            tdetail::gemm_acc_wgrad(sg.grads[gi_embed_out].data(), dlogits.data.data(),
                                    x1_pred.data.data(), n_entities, d, pcols);
            tdetail::gemm_acc_xgrad(dx1.data.data(), params.embed_out.data.data(),
                                    dlogits.data.data(), n_entities, d, pcols);
        }

        Matrix dxt = dx1;  // residual branch of X1 = X~ + MLP
        {
            Matrix dh(width, pcols);
            for (std::size_t i = 0; i < d; ++i) {
                double bsum = 0.0;
                for (std::size_t pc = 0; pc < pcols; ++pc) {
                    bsum += dx1(i, pc);
                }
                sg.grads[gi_m1b][i] += bsum;
            }
            tdetail::gemm_acc_wgrad(sg.grads[gi_m1w].data(), dx1.data.data(), hact.data.data(), d,
                                    width, pcols);
            tdetail::gemm_acc_xgrad(dh.data.data(), layer.mlp[1].w.data.data(), dx1.data.data(), d,
                                    width, pcols);
            for (std::size_t o = 0; o < width; ++o) {
                double bsum = 0.0;
                for (std::size_t pc = 0; pc < pcols; ++pc) {
                    const double g = params.activation == Activation::relu
                                         ? (hpre(o, pc) > 0.0 ? 1.0 : 0.0)
                                         : tdetail::gelu_grad(hpre(o, pc));
                    dh(o, pc) *= g;
                    bsum += dh(o, pc);
                }
                sg.grads[gi_m0b][o] += bsum;
            }
            tdetail::gemm_acc_wgrad(sg.grads[gi_m0w].data(), dh.data.data(), n2_pred.data.data(),
                                    width, d, pcols);
            Matrix dn2(d, pcols);
            tdetail::gemm_acc_xgrad(dn2.data.data(), layer.mlp[0].w.data.data(), dh.data.data(),
                                    width, d, pcols);
            if (normed) {
                std::vector<double>& dgamma = sg.grads[gi_gamma2];
                for (std::size_t pc = 0; pc < pcols; ++pc) {
                    double inner = 0.0;
                    const double inv = inv_r2[pc];
                    for (std::size_t i = 0; i < d; ++i) {
                        inner += dn2(i, pc) * layer.norm_mlp[i] * xt_pred(i, pc);
                        dgamma[i] += dn2(i, pc) * xt_pred(i, pc) * inv;
                    }
                    const double scale = inner * inv * inv * inv / static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        dxt(i, pc) += dn2(i, pc) * layer.norm_mlp[i] * inv - xt_pred(i, pc) * scale;
                    }
                }
            } else {
                for (std::size_t i = 0; i < dxt.data.size(); ++i) {
                    dxt.data[i] += dn2.data[i];
                }
            }
        }

        // Scatter predicted-position gradients to full columns.
        Matrix dx0(d, cols), dz(d, cols);
        for (std::size_t e = 0; e < count; ++e) {
            for (std::size_t p = 0; p < n_pred; ++p) {
                const std::size_t c = e * seq + batch.pred_pos[p];
                const std::size_t pc = e * n_pred + p;
                for (std::size_t i = 0; i < d; ++i) {
                    dx0(i, c) += dxt(i, pc);
                    dz(i, c) += dxt(i, pc);
                }
            }
        }
        Matrix dmixed(d, cols);
        tdetail::gemm_acc_wgrad(sg.grads[gi_wo].data(), dz.data.data(), mixed.data.data(), d, d,
                                cols);
        tdetail::gemm_acc_xgrad(dmixed.data.data(), head.wo.data.data(), dz.data.data(), d, d,
                                cols);

        Matrix dvalues(d, cols), dn1(d, cols);
        if (softmax_attn) {
            Matrix dkeys(d, cols), dqueries(d, cols);
            std::vector<double> da(seq);
            for (std::size_t e = 0; e < count; ++e) {
                for (std::size_t q = 0; q < seq; ++q) {
                    double inner = 0.0;
                    for (std::size_t kk = 0; kk <= q; ++kk) {
                        double v = 0.0;
                        for (std::size_t i = 0; i < d; ++i) {
                            v += values(i, e * seq + kk) * dmixed(i, e * seq + q);
                        }
                        da[kk] = v;
                        inner += attn(kk * seq + q, e) * v;
                    }
                    for (std::size_t kk = 0; kk <= q; ++kk) {
                        const double a = attn(kk * seq + q, e);
                        const double ds = a * (da[kk] - inner);
                        for (std::size_t i = 0; i < d; ++i) {
                            dvalues(i, e * seq + kk) += a * dmixed(i, e * seq + q);
                            dkeys(i, e * seq + kk) += ds * queries(i, e * seq + q);
                            dqueries(i, e * seq + q) += ds * keys(i, e * seq + kk);
                        }
                    }
                }
            }
            tdetail::gemm_acc_wgrad(sg.grads[gi_wk].data(), dkeys.data.data(), n1.data.data(), d, d,
                                    cols);
            tdetail::gemm_acc_wgrad(sg.grads[gi_wq].data(), dqueries.data.data(), n1.data.data(), d,
                                    d, cols);
            tdetail::gemm_acc_xgrad(dn1.data.data(), head.wk.data.data(), dkeys.data.data(), d, d,
                                    cols);
            tdetail::gemm_acc_xgrad(dn1.data.data(), head.wq.data.data(), dqueries.data.data(), d,
                                    d, cols);
        } else {
            for (std::size_t e = 0; e < count; ++e) {
                for (std::size_t i = 0; i < d; ++i) {
                    double suffix = 0.0;
                    for (std::size_t t = seq; t-- > 0;) {
                        suffix += dmixed(i, e * seq + t) / static_cast<double>(t + 1);
                        dvalues(i, e * seq + t) = suffix;
                    }
                }
            }
        }
        tdetail::gemm_acc_wgrad(sg.grads[gi_wv].data(), dvalues.data.data(), n1.data.data(), d, d,
                                cols);
        tdetail::gemm_acc_xgrad(dn1.data.data(), head.wv.data.data(), dvalues.data.data(), d, d,
                                cols);

        if (normed) {
            std::vector<double>& dgamma = sg.grads[gi_gamma1];
            for (std::size_t c = 0; c < cols; ++c) {
                double inner = 0.0;
                const double inv = inv_r1[c];
                for (std::size_t i = 0; i < d; ++i) {
                    inner += dn1(i, c) * layer.norm_attn[i] * x0(i, c);
                    dgamma[i] += dn1(i, c) * x0(i, c) * inv;
                }
                const double scale = inner * inv * inv * inv / static_cast<double>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    dx0(i, c) += dn1(i, c) * layer.norm_attn[i] * inv - x0(i, c) * scale;
                }
            }
        } else {
            for (std::size_t i = 0; i < dx0.data.size(); ++i) {
                dx0.data[i] += dn1.data[i];
            }
        }

        std::vector<double>& dembed = sg.grads[gi_embed_in];
        const bool train_embed = !cfg.freeze_embeddings;
        for (std::size_t e = 0; e < count; ++e) {
            const std::uint32_t* toks = batch.tokens.data() + (begin + e) * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const std::size_t c = e * seq + t;
                if (train_embed) {
                    double* row = dembed.data() + static_cast<std::size_t>(toks[t]) * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        row[i] += dx0(i, c);
                    }
                }
                if (!params.positions.empty()) {
                    double* prow = sg.grads[gi_positions].data() + t * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        prow[i] += dx0(i, c);
                    }
                }
            }
        }
    };

    // Deterministic sharding by contiguous ranges.
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    const std::size_t base = batch.n_seq / workers;
    const std::size_t extra = batch.n_seq % workers;
    std::size_t cursor = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t len = base + (w < extra ? 1 : 0);
        ranges.push_back({cursor, cursor + len});
        cursor += len;
    }
    if (workers == 1) {
        run_shard(0, ranges[0].first, ranges[0].second);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 1; w < workers; ++w) {
            threads.emplace_back(run_shard, w, ranges[w].first, ranges[w].second);
        }
        run_shard(0, ranges[0].first, ranges[0].second);
        for (auto& t : threads) {
            t.join();
        }
    }

    double loss = 0.0;
    for (const auto& sg : shards) {
        loss += sg.loss_sum;
    }
    loss *= inv_count;
    if (grads != nullptr) {
        grads->names.clear();
        grads->values.assign(shapes.size(), {});
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            grads->names.push_back(shapes[i].first);
            grads->values[i].assign(shapes[i].second, 0.0);
            for (const auto& sg : shards) {
                if (sg.grads.empty()) {
                    continue;
                }
                for (std::size_t t = 0; t < shapes[i].second; ++t) {
                    grads->values[i][t] += sg.grads[i][t];
                }
            }
        }
    }
    if (predictions != nullptr) {
        predictions->clear();
        for (const auto& sg : shards) {
            predictions->insert(predictions->end(), sg.predictions.begin(), sg.predictions.end());
        }
    }
    return loss;
}

// Spec-facing wrapper: mean cross-entropy and gradients for a query batch.
// Throws when the loss goes non-finite, naming the first non-finite tensor.
inline std::pair<double, GradientSet> loss_and_grads(const ModelParams& params,
                                                     const QueryBatch& queries,
                                                     const TrainConfig& cfg,
                                                     const RelationSet* rels = nullptr) {
    const TrainBatch batch = make_train_batch(queries, cfg.task, cfg.cot, rels);
    GradientSet grads;
    const double loss = fused_loss_and_grads(params, batch, cfg, &grads);
    if (!std::isfinite(loss)) {
        for (std::size_t i = 0; i < grads.names.size(); ++i) {
            for (double v : grads.values[i]) {
                if (!std::isfinite(v)) {
                    throw std::runtime_error("loss_and_grads: non-finite loss; first non-finite tensor: " +
                                             grads.names[i]);
                }
            }
        }
        throw std::runtime_error("loss_and_grads: non-finite loss");
    }
    return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay), beta1 0.9 / beta2 0.999 / eps 1e-8, with
// global gradient-norm clipping applied before the moment updates.
// ---------------------------------------------------------------------------
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;

    void ensure(const std::vector<TensorView>& views) {
        if (m.size() == views.size()) {
            return;
        }
        m.resize(views.size());
        v.resize(views.size());
        for (std::size_t i = 0; i < views.size(); ++i) {
            m[i].assign(views[i].size, 0.0);
            v[i].assign(views[i].size, 0.0);
        }
    }

    // Returns the pre-clip global gradient norm over trainable tensors.
    double update(std::vector<TensorView>& views, const GradientSet& grads, double lr,
                  double weight_decay, double clip_norm) {
        ensure(views);
        if (grads.values.size() != views.size()) {
            throw std::invalid_argument("AdamW: gradient/view count mismatch");
        }
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (!views[i].trainable) {
                continue;
            }
            for (double g : grads.values[i]) {
                norm_sq += g * g;
            }
        }
        const double norm = std::sqrt(norm_sq);
        const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (!views[i].trainable) {
                continue;
            }
            double* theta = views[i].data;
            const std::vector<double>& g = grads.values[i];
            for (std::size_t t = 0; t < views[i].size; ++t) {
                const double gc = g[t] * scale;
                m[i][t] = beta1 * m[i][t] + (1.0 - beta1) * gc;
                v[i][t] = beta2 * v[i][t] + (1.0 - beta2) * gc * gc;
                const double mhat = m[i][t] / bc1;
                const double vhat = v[i][t] / bc2;
                theta[t] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * weight_decay * theta[t];
            }
        }
        return norm;
    }
};

// ---------------------------------------------------------------------------
// Metrics log: one row per log interval (step, loss, acc, grad_norm, secs).
// ---------------------------------------------------------------------------
struct MetricsRow {
    std::size_t step;
    double loss;
    double acc;
    double grad_norm;
    double secs;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
};

enum class TrainStatus { completed, early_stopped, diverged };

inline const char* to_string(TrainStatus s) {
    switch (s) {
        case TrainStatus::completed: return "completed";
        case TrainStatus::early_stopped: return "early-stopped";
        case TrainStatus::diverged: return "diverged";
    }
    return "?";
}

struct TrainResult {
    ModelParams params;
    MetricsLog log;
    TrainStatus status = TrainStatus::completed;
    std::size_t steps_run = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double final_acc = 0.0;
};

// Exact (or sampled, under budget) accuracy of predict-final / CoT generation,
// computed with the fused batched forward.
inline bool fused_path_supported(const ModelParams& params) {
    return params.layers.size() == 1 && params.layers[0].heads.size() == 1 &&
           params.layers[0].mlp.size() == 2 && params.decode == DecodeMode::entity &&
           !params.prepend_bos &&
           (params.attention == AttentionMode::uniform_causal ||
            params.attention == AttentionMode::softmax_causal);
}

inline double eval_accuracy(const ModelParams& params, const TaskSpec& spec,
                            const RelationSet& rels, std::size_t budget, bool cot, Prng& prng,
                            std::size_t workers = 0) {
    const QueryBatch queries = enumerate_queries(spec, rels, budget, prng);
    if (!fused_path_supported(params)) {
        // Generic engine path for constructed or otherwise non-trainer-shaped
        // models.
        std::size_t correct = 0;
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto prompt = queries.prompt_tokens(i, spec.n_subjects);
            const std::uint32_t predicted =
                cot ? generate_cot(params, prompt, spec.hops).back() : predict_final(params, prompt);
            correct += predicted == queries.answers[i] ? 1 : 0;
        }
        return static_cast<double>(correct) / static_cast<double>(queries.size());
    }
    TrainConfig probe_cfg;  // only .task/.cot/.workers are read by the fused path
    probe_cfg.task = spec;
    probe_cfg.cot = false;
    probe_cfg.workers = workers;
    std::size_t correct = 0;
    if (!cot) {
        const TrainBatch batch = make_train_batch(queries, spec, false, nullptr);
        std::vector<std::uint32_t> preds;
        fused_loss_and_grads(params, batch, probe_cfg, nullptr, &preds);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            correct += preds[i] == queries.answers[i] ? 1 : 0;
        }
    } else {
        // Autoregressive: extend every sequence with its argmax prediction and
        // re-run the batched forward; all sequences share a length each step.
        const std::size_t k = spec.hops;
        TrainBatch batch;
        batch.n_seq = queries.size();
        batch.seq_len = k + 1;
        batch.tokens.resize(batch.n_seq * batch.seq_len);
        for (std::size_t e = 0; e < batch.n_seq; ++e) {
            const auto toks = queries.prompt_tokens(e, spec.n_subjects);
            std::copy(toks.begin(), toks.end(), batch.tokens.begin() + e * batch.seq_len);
        }
        batch.targets.assign(batch.n_seq, 0);  // unused by prediction path
        std::vector<std::uint32_t> latest(batch.n_seq, 0);
        for (std::size_t step = 0; step < k; ++step) {
            batch.pred_pos = {batch.seq_len - 1};
            std::vector<std::uint32_t> preds;
            fused_loss_and_grads(params, batch, probe_cfg, nullptr, &preds);
            latest = preds;
            if (step + 1 == k) {
                break;
            }
            TrainBatch next;
            next.n_seq = batch.n_seq;
            next.seq_len = batch.seq_len + 1;
            next.tokens.resize(next.n_seq * next.seq_len);
            for (std::size_t e = 0; e < batch.n_seq; ++e) {
                std::copy(batch.tokens.begin() + e * batch.seq_len,
                          batch.tokens.begin() + (e + 1) * batch.seq_len,
                          next.tokens.begin() + e * next.seq_len);
                next.tokens[e * next.seq_len + batch.seq_len] = preds[e];
            }
            next.targets = batch.targets;
            batch = std::move(next);
        }
        for (std::size_t i = 0; i < queries.size(); ++i) {
            correct += latest[i] == queries.answers[i] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(queries.size());
}

// ---------------------------------------------------------------------------
// Training loop. Early stopping: single-hop stops when the batch loss drops
// below early_stop_loss; multi-hop stops when eval accuracy reaches
// early_stop_acc or the loss is below threshold for early_stop_consecutive
// consecutive log checks. Divergence aborts with the log retained.
// ---------------------------------------------------------------------------
inline TrainResult train(const TrainConfig& cfg, const RelationSet& rels, Prng& prng) {
    cfg.validate();
    if (rels.n_subjects() != cfg.task.n_subjects || rels.n_relations() != cfg.task.n_relations) {
        throw std::invalid_argument("train: relation set does not match the task spec");
    }
    Prng init_stream = prng.substream(0x11);
    Prng batch_stream = prng.substream(0x22);
    Prng eval_stream = prng.substream(0x33);

    TrainResult result;
    result.params = init_model(cfg, init_stream);
    std::vector<TensorView> views = parameter_views(result.params, cfg.freeze_embeddings);
    AdamW optimizer;

    const std::size_t n = cfg.task.n_subjects;
    const std::size_t r = cfg.task.n_relations;
    const std::size_t k = cfg.task.hops;
    const bool multi_hop = k > 1;
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };
    auto eval_now = [&] {
        Prng ep = eval_stream.substream(result.steps_run);
        return eval_accuracy(result.params, cfg.task, rels, cfg.eval_budget, cfg.cot, ep,
                             cfg.workers);
    };

    std::size_t consecutive_low_loss = 0;
    double last_loss = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        QueryBatch queries;
        queries.hops = k;
        queries.subjects.resize(cfg.batch);
        queries.paths.resize(cfg.batch * k);
        queries.answers.resize(cfg.batch);
        for (std::size_t e = 0; e < cfg.batch; ++e) {
            queries.subjects[e] = static_cast<std::uint32_t>(batch_stream.uniform_int(n));
            for (std::size_t h = 0; h < k; ++h) {
                queries.paths[e * k + h] = static_cast<std::uint32_t>(batch_stream.uniform_int(r));
            }
            queries.answers[e] = compose_path(rels, queries.subjects[e], queries.path_vector(e));
        }
        const TrainBatch batch = make_train_batch(queries, cfg.task, cfg.cot, &rels);
        GradientSet grads;
        const double loss = fused_loss_and_grads(result.params, batch, cfg, &grads);
        if (!std::isfinite(loss)) {
            result.status = TrainStatus::diverged;
            result.final_loss = loss;
            return result;
        }
        const double grad_norm = optimizer.update(views, grads, cfg.lr, cfg.weight_decay,
                                                  cfg.clip_norm);
        last_loss = loss;
        result.steps_run = step + 1;

        const bool log_step = (step + 1) % cfg.log_every == 0;
        bool stop = false;
        if (log_step) {
            const double acc = eval_now();
            result.log.rows.push_back({step + 1, loss, acc, grad_norm, elapsed()});
            if (multi_hop) {
                consecutive_low_loss = loss < cfg.early_stop_loss ? consecutive_low_loss + 1 : 0;
                if (acc >= cfg.early_stop_acc ||
                    consecutive_low_loss >= cfg.early_stop_consecutive) {
                    stop = true;
                }
            }
        }
        if (!multi_hop && loss < cfg.early_stop_loss) {
            stop = true;
        }
        if (stop) {
            result.status = TrainStatus::early_stopped;
            break;
        }
    }
    result.final_loss = last_loss;
    result.final_acc = cfg.steps == 0 ? 0.0 : eval_now();
    if (result.status != TrainStatus::early_stopped) {
        result.status = TrainStatus::completed;
    }
    return result;
}

}  // namespace gmem
