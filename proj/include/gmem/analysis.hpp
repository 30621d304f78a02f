#pragma once

// Post-training analysis: per-relation ridge readouts from subject
// representations to output-embedding rows, pseudoinverse-based causal
// interventions with a follow/stability selectivity score, minimum-norm
// smart re-initialization of subject embeddings for fresh bijections, and the
// capacity search d_min(N) with log/power-law fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmem/linalg.hpp"
#include "gmem/model.hpp"
#include "gmem/train.hpp"

namespace gmem {

enum class ReadoutTap { embedding, post_attention };

inline const char* to_string(ReadoutTap t) {
    return t == ReadoutTap::embedding ? "embedding" : "post-attention";
}

struct ReadoutSet {
    ReadoutTap tap = ReadoutTap::embedding;
    double lambda = 1e-2;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    std::vector<Matrix> w;                              // per relation, d x d_out
    Matrix w_stack;                                     // d x (R d_out)
    std::vector<std::vector<double>> singular_values;   // per relation
    std::vector<double> holdout_accuracy;               // per relation
};

namespace adetail {

// Output-embedding row index of the attribute of (x, r).
inline std::size_t target_row(const ModelParams& params, const RelationSet& rels, std::uint32_t x,
                              std::size_t r) {
    const std::uint32_t a = rels.apply(r, x);
    return params.decode == DecodeMode::paired_attribute ? r * params.n_subjects + a
                                                         : static_cast<std::size_t>(a);
}

// Subject representation at the tap for the query (x, r).
inline std::vector<double> tap_features(const ModelParams& params, std::uint32_t x, std::size_t r,
                                        ReadoutTap tap) {
    if (tap == ReadoutTap::embedding) {
        const double* row = params.embed_in.row(x);
        return std::vector<double>(row, row + params.d);
    }
    const std::vector<std::uint32_t> prompt = {
        x, static_cast<std::uint32_t>(params.n_subjects + r)};
    const ForwardTrace trace = forward(params, prompt);
    const Matrix& xt = trace.x_attn.back();
    std::vector<double> out(params.d);
    for (std::size_t i = 0; i < params.d; ++i) {
        out[i] = xt(i, xt.cols - 1);
    }
    return out;
}

// Nearest output-embedding row (max inner product) among the candidate rows.
inline std::size_t nearest_row(const ModelParams& params, const std::vector<double>& vec,
                               std::size_t relation) {
    std::size_t begin = 0;
    std::size_t end = params.n_subjects;
    if (params.decode == DecodeMode::paired_attribute) {
        begin = relation * params.n_subjects;
        end = begin + params.n_subjects;
    }
    std::size_t best = begin;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t row = begin; row < end; ++row) {
        double dot = 0.0;
        const double* e = params.embed_out.row(row);
        for (std::size_t i = 0; i < vec.size(); ++i) {
            dot += e[i] * vec[i];
        }
        if (dot > best_val) {
            best_val = dot;
            best = row;
        }
    }
    return best;
}

}  // namespace adetail

// Fits W_r by ridge regression from subject-tap features to the
// output-embedding rows of g_r(x), on a subject-disjoint split; holdout
// accuracy decodes the predicted vector against the entity output rows.
inline ReadoutSet fit_readout(const ModelParams& params, const RelationSet& rels, ReadoutTap tap,
                              double lambda, double train_fraction, Prng& prng) {
    const std::size_t n = params.n_subjects;
    const std::size_t r_count = params.n_relations;
    const std::size_t d = params.d;
    const std::size_t d_out = params.embed_out.cols;
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
        throw std::invalid_argument("fit_readout: train_fraction must be in (0,1)");
    }
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    ReadoutSet readout;
    readout.tap = tap;
    readout.lambda = lambda;
    readout.train_fraction = train_fraction;
    readout.split_seed = prng.seed();
    prng.shuffle(order);
    const std::size_t n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) {
        throw std::invalid_argument("fit_readout: degenerate split (empty side)");
    }

    readout.w.resize(r_count);
    readout.singular_values.resize(r_count);
    readout.holdout_accuracy.assign(r_count, 0.0);
    readout.w_stack = Matrix(d, r_count * d_out);
    for (std::size_t r = 0; r < r_count; ++r) {
        Matrix x_train(n_train, d);
        Matrix y_train(n_train, d_out);
        for (std::size_t i = 0; i < n_train; ++i) {
            const auto feats = adetail::tap_features(params, order[i], r, tap);
            for (std::size_t c = 0; c < d; ++c) {
                x_train(i, c) = feats[c];
            }
            const double* target = params.embed_out.row(adetail::target_row(params, rels, order[i], r));
            for (std::size_t c = 0; c < d_out; ++c) {
                y_train(i, c) = target[c];
            }
        }
        readout.w[r] = ridge_solve(x_train, y_train, lambda);
        readout.singular_values[r] = svd(readout.w[r]).singular_values;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t c = 0; c < d_out; ++c) {
                readout.w_stack(i, r * d_out + c) = readout.w[r](i, c);
            }
        }

        std::size_t hits = 0;
        for (std::size_t i = n_train; i < n; ++i) {
            const auto feats = adetail::tap_features(params, order[i], r, tap);
            std::vector<double> pred(d_out, 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                const double f = feats[a];
                if (f == 0.0) {
                    continue;
                }
                for (std::size_t c = 0; c < d_out; ++c) {
                    pred[c] += f * readout.w[r](a, c);
                }
            }
            const std::size_t decoded = adetail::nearest_row(params, pred, r);
            hits += decoded == adetail::target_row(params, rels, order[i], r) ? 1 : 0;
        }
        readout.holdout_accuracy[r] =
            static_cast<double>(hits) / static_cast<double>(n - n_train);
    }
    return readout;
}

// ---------------------------------------------------------------------------
// Causal interventions: minimum-norm tap perturbation delta = (a' - a) W_r^+
// (rank-truncated); follow = relation-r prediction becomes a', stability =
// all other relations keep their original prediction.
// ---------------------------------------------------------------------------
struct SelectivityResult {
    double follow = 0.0;
    double stability = 0.0;
    double selectivity = 0.0;
    std::size_t rank = 0;
    std::size_t trials = 0;
    bool stability_defined = true;  // false when R = 1

    nlohmann::json to_json() const {
        return {{"follow", follow},           {"stability", stability},
                {"selectivity", selectivity}, {"rank", rank},
                {"trials", trials},           {"stability_defined", stability_defined}};
    }
};

namespace adetail {

inline std::uint32_t predict_with_embedding_delta(const ModelParams& params, std::uint32_t x,
                                                  std::size_t r,
                                                  const std::vector<double>* delta,
                                                  ModelParams& scratch) {
    double* row = scratch.embed_in.row(x);
    const double* orig = params.embed_in.row(x);
    for (std::size_t i = 0; i < params.d; ++i) {
        row[i] = orig[i] + (delta != nullptr ? (*delta)[i] : 0.0);
    }
    const std::uint32_t pred = predict_final(
        scratch, {x, static_cast<std::uint32_t>(params.n_subjects + r)});
    for (std::size_t i = 0; i < params.d; ++i) {
        row[i] = orig[i];
    }
    return pred;
}

// Re-run the residual MLP and decode from a perturbed post-attention state.
inline std::uint32_t predict_from_attn_delta(const ModelParams& params, std::uint32_t x,
                                             std::size_t r, const std::vector<double>* delta) {
    const std::vector<std::uint32_t> prompt = {
        x, static_cast<std::uint32_t>(params.n_subjects + r)};
    const ForwardTrace trace = forward(params, prompt);
    const std::size_t last_layer = params.layers.size() - 1;
    Matrix xt = trace.x_attn[last_layer];
    const std::size_t col = xt.cols - 1;
    if (delta != nullptr) {
        for (std::size_t i = 0; i < params.d; ++i) {
            xt(i, col) += (*delta)[i];
        }
    }
    const LayerParams& layer = params.layers[last_layer];
    std::vector<double> h(params.d);
    for (std::size_t i = 0; i < params.d; ++i) {
        h[i] = xt(i, col);
    }
    std::vector<double> residual = h;
    if (!layer.mlp.empty()) {
        if (params.norm == NormMode::pre_rmsnorm) {
            double ms = 0.0;
            for (double v : h) {
                ms += v * v;
            }
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(params.d) + kRmsNormEps);
            for (std::size_t i = 0; i < params.d; ++i) {
                h[i] = h[i] * inv * layer.norm_mlp[i];
            }
        }
        for (std::size_t li = 0; li < layer.mlp.size(); ++li) {
            const MlpLayer& ml = layer.mlp[li];
            std::vector<double> next(ml.w.rows);
            for (std::size_t o = 0; o < ml.w.rows; ++o) {
                double v = ml.b[o];
                for (std::size_t in = 0; in < ml.w.cols; ++in) {
                    v += ml.w(o, in) * h[in];
                }
                next[o] = li + 1 < layer.mlp.size() ? activate(params.activation, v) : v;
            }
            h = std::move(next);
        }
        for (std::size_t i = 0; i < params.d; ++i) {
            residual[i] += h[i];
        }
    }
    const std::size_t limit = params.decode == DecodeMode::entity ? params.n_subjects
                                                                  : params.embed_out.rows;
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < limit; ++v) {
        double dot = 0.0;
        const double* row = params.embed_out.row(v);
        for (std::size_t i = 0; i < params.d; ++i) {
            dot += row[i] * residual[i];
        }
        if (dot > best_val) {
            best_val = dot;
            best = v;
        }
    }
    return params.decode == DecodeMode::paired_attribute
               ? static_cast<std::uint32_t>(best % params.n_subjects)
               : static_cast<std::uint32_t>(best);
}

}  // namespace adetail

inline SelectivityResult intervene_selectivity(const ModelParams& params, const RelationSet& rels,
                                               const ReadoutSet& readouts, std::size_t rank,
                                               std::size_t trials, Prng& prng) {
    const std::size_t n = params.n_subjects;
    const std::size_t r_count = params.n_relations;
    if (trials < 1) {
        throw std::invalid_argument("intervene_selectivity: trials must be >= 1");
    }
    SelectivityResult result;
    result.rank = rank;
    result.trials = trials;
    result.stability_defined = r_count > 1;

    std::vector<Matrix> pinvs(r_count);
    for (std::size_t r = 0; r < r_count; ++r) {
        pinvs[r] = pinv_truncated(readouts.w[r], rank);
    }
    ModelParams scratch = params;

    std::size_t follow_hits = 0;
    std::size_t stable_hits = 0;
    const std::size_t d_out = params.embed_out.cols;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t pair = trial % (n * r_count);
        const auto x = static_cast<std::uint32_t>(pair / r_count);
        const std::size_t r = pair % r_count;
        const std::uint32_t truth = rels.apply(r, x);
        std::uint32_t substitute = truth;
        while (substitute == truth) {
            substitute = static_cast<std::uint32_t>(prng.uniform_int(n));
        }
        const std::size_t truth_row = adetail::target_row(params, rels, x, r);
        const std::size_t subst_row = params.decode == DecodeMode::paired_attribute
                                          ? r * n + substitute
                                          : static_cast<std::size_t>(substitute);
        std::vector<double> delta_a(d_out);
        for (std::size_t c = 0; c < d_out; ++c) {
            delta_a[c] = params.embed_out(subst_row, c) - params.embed_out(truth_row, c);
        }
        // delta = delta_a * W_r^+  (pinv is d_out x d)
        std::vector<double> delta(params.d, 0.0);
        for (std::size_t c = 0; c < d_out; ++c) {
            const double a = delta_a[c];
            if (a == 0.0) {
                continue;
            }
            for (std::size_t i = 0; i < params.d; ++i) {
                delta[i] += a * pinvs[r](c, i);
            }
        }

        auto predict = [&](std::size_t rel, const std::vector<double>* dlt) {
            return readouts.tap == ReadoutTap::embedding
                       ? adetail::predict_with_embedding_delta(params, x, rel, dlt, scratch)
                       : adetail::predict_from_attn_delta(params, x, rel, dlt);
        };
        follow_hits += predict(r, &delta) == substitute ? 1 : 0;
        if (r_count > 1) {
            bool stable = true;
            for (std::size_t other = 0; other < r_count && stable; ++other) {
                if (other == r) {
                    continue;
                }
                stable = predict(other, &delta) == predict(other, nullptr);
            }
            stable_hits += stable ? 1 : 0;
        }
    }
    result.follow = static_cast<double>(follow_hits) / static_cast<double>(trials);
    result.stability = r_count > 1
                           ? static_cast<double>(stable_hits) / static_cast<double>(trials)
                           : 1.0;
    result.selectivity = std::sqrt(result.follow * result.stability);
    return result;
}

// Sweeps rank truncations (always including the full rank) and returns every
// result; the best entry is the one with maximal selectivity.
inline std::vector<SelectivityResult> selectivity_rank_sweep(
    const ModelParams& params, const RelationSet& rels, const ReadoutSet& readouts,
    std::vector<std::size_t> ranks, std::size_t trials, Prng& prng) {
    const std::size_t full = std::min(params.d, params.embed_out.cols);
    if (std::find(ranks.begin(), ranks.end(), full) == ranks.end()) {
        ranks.push_back(full);
    }
    std::sort(ranks.begin(), ranks.end());
    ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
    std::vector<SelectivityResult> out;
    for (std::size_t rank : ranks) {
        Prng trial_prng = prng.substream(rank);
        out.push_back(intervene_selectivity(params, rels, readouts, rank, trials, trial_prng));
    }
    return out;
}

inline const SelectivityResult& best_selectivity(const std::vector<SelectivityResult>& sweep) {
    if (sweep.empty()) {
        throw std::invalid_argument("best_selectivity: empty sweep");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        if (sweep[i].selectivity > sweep[best].selectivity) {
            best = i;
        }
    }
    return sweep[best];
}

// ---------------------------------------------------------------------------
// Freeze-and-swap: minimum-norm subject embeddings solving
// s * W_stack = concat_r(out row of g'_r(x)).
// ---------------------------------------------------------------------------
struct SmartInitResult {
    Matrix embeddings;  // N x d
    bool rank_deficient = false;
};

inline SmartInitResult smart_init(const ReadoutSet& readouts, const RelationSet& new_rels,
                                  const ModelParams& params) {
    const std::size_t n = params.n_subjects;
    const std::size_t r_count = params.n_relations;
    const std::size_t d = params.d;
    const std::size_t d_out = params.embed_out.cols;
    if (readouts.w_stack.rows != d || readouts.w_stack.cols != r_count * d_out) {
        throw std::invalid_argument("smart_init: W_stack shape mismatch");
    }
    const SvdResult f = svd(readouts.w_stack);
    const double smax = f.singular_values.empty() ? 0.0 : f.singular_values[0];
    SmartInitResult result;
    result.rank_deficient = false;
    for (double s : f.singular_values) {
        if (s <= 1e-10 * smax) {
            result.rank_deficient = true;
        }
    }
    const Matrix pinv = pinv_truncated(readouts.w_stack, std::min(d, r_count * d_out));

    result.embeddings = Matrix(n, d);
    for (std::uint32_t x = 0; x < n; ++x) {
        std::vector<double> target(r_count * d_out);
        for (std::size_t r = 0; r < r_count; ++r) {
            const double* row =
                params.embed_out.row(adetail::target_row(params, new_rels, x, r));
            for (std::size_t c = 0; c < d_out; ++c) {
                target[r * d_out + c] = row[c];
            }
        }
        // s = target * pinv  (pinv is (R d_out) x d)
        for (std::size_t c = 0; c < target.size(); ++c) {
            const double tv = target[c];
            if (tv == 0.0) {
                continue;
            }
            for (std::size_t i = 0; i < d; ++i) {
                result.embeddings(x, i) += tv * pinv(c, i);
            }
        }
    }
    return result;
}

inline ModelParams with_subject_embeddings(const ModelParams& params, const Matrix& embeddings) {
    if (embeddings.rows != params.n_subjects || embeddings.cols != params.d) {
        throw std::invalid_argument("with_subject_embeddings: shape mismatch");
    }
    ModelParams out = params;
    for (std::size_t x = 0; x < embeddings.rows; ++x) {
        for (std::size_t i = 0; i < embeddings.cols; ++i) {
            out.embed_in(x, i) = embeddings(x, i);
        }
    }
    return out;
}

inline ModelParams with_random_subject_embeddings(const ModelParams& params, double stddev,
                                                  Prng& prng) {
    ModelParams out = params;
    for (std::size_t x = 0; x < params.n_subjects; ++x) {
        for (std::size_t i = 0; i < params.d; ++i) {
            out.embed_in(x, i) = prng.normal(0.0, stddev);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Capacity search: per N, the smallest grid d whose seed-median accuracy
// crosses the threshold (binary search, falling back to a linear scan when a
// non-monotone probe pattern shows up), plus log and power-law fits.
// ---------------------------------------------------------------------------
struct CapacityConfig {
    std::vector<std::size_t> n_list;
    std::size_t r = 4;
    double threshold = 0.95;
    std::size_t fixed_width = 0;  // 0 -> width 4d
    bool frozen = false;
    std::vector<std::size_t> d_grid;
    std::size_t seeds = 3;
    std::size_t budget = 1 << 16;
    TrainConfig base;  // lr/steps/batch/attention defaults for every probe
};

struct CapacityProbe {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> seed_accs;
    double median_acc = 0.0;
};

struct CapacityResult {
    struct Point {
        std::size_t n = 0;
        std::size_t d_min = 0;
        bool above_grid = false;
    };
    std::vector<Point> points;
    std::vector<CapacityProbe> probes;
    bool fell_back_linear = false;
    double log_a = 0.0, log_b = 0.0, log_r2 = 0.0;    // d_min ~ a + b log2 N
    double pow_c = 0.0, pow_alpha = 0.0, pow_r2 = 0.0;  // d_min ~ c N^alpha

    nlohmann::json to_json() const {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : points) {
            pts.push_back({{"n", p.n}, {"d_min", p.d_min}, {"above_grid", p.above_grid}});
        }
        nlohmann::json prb = nlohmann::json::array();
        for (const auto& p : probes) {
            prb.push_back({{"n", p.n}, {"d", p.d}, {"accs", p.seed_accs}, {"median", p.median_acc}});
        }
        return {{"points", pts},
                {"probes", prb},
                {"fell_back_linear", fell_back_linear},
                {"log_fit", {{"a", log_a}, {"b", log_b}, {"r2", log_r2}}},
                {"power_fit", {{"c", pow_c}, {"alpha", pow_alpha}, {"r2", pow_r2}}}};
    }
};

namespace adetail {

inline void least_squares(const std::vector<double>& x, const std::vector<double>& y, double& a,
                          double& b, double& r2) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    b = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    a = (sy - b * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fit = a + b * x[i];
        ss_res += (y[i] - fit) * (y[i] - fit);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
}

}  // namespace adetail

inline CapacityResult capacity_search(const CapacityConfig& cfg, Prng& prng) {
    if (cfg.d_grid.empty() || !std::is_sorted(cfg.d_grid.begin(), cfg.d_grid.end())) {
        throw std::invalid_argument("capacity_search: d_grid must be nonempty and sorted");
    }
    if (cfg.threshold <= 0.0 || cfg.threshold >= 1.0) {
        throw std::invalid_argument("capacity_search: threshold must be in (0,1)");
    }
    CapacityResult result;

    for (std::size_t ni = 0; ni < cfg.n_list.size(); ++ni) {
        const std::size_t n = cfg.n_list[ni];
        std::vector<std::optional<double>> medians(cfg.d_grid.size());
        auto probe = [&](std::size_t di) {
            if (medians[di].has_value()) {
                return *medians[di];
            }
            CapacityProbe cell;
            cell.n = n;
            cell.d = cfg.d_grid[di];
            for (std::size_t s = 0; s < cfg.seeds; ++s) {
                TrainConfig tc = cfg.base;
                tc.task.n_subjects = n;
                tc.task.n_relations = cfg.r;
                tc.task.hops = 1;
                tc.task.seed = cfg.base.task.seed + 1000 * ni + s;
                tc.d = cfg.d_grid[di];
                tc.mlp_width = cfg.fixed_width;
                tc.freeze_embeddings = cfg.frozen;
                tc.eval_budget = cfg.budget;
                tc.seed = cfg.base.seed + 7919 * s + 104729 * di + 1299709 * ni;
                Prng data_prng(tc.task.seed);
                const RelationSet rels = sample_bijections(tc.task, data_prng);
                Prng train_prng = prng.substream(tc.seed);
                const TrainResult run = train(tc, rels, train_prng);
                cell.seed_accs.push_back(run.final_acc);
            }
            std::vector<double> sorted = cell.seed_accs;
            std::sort(sorted.begin(), sorted.end());
            cell.median_acc = sorted[sorted.size() / 2];
            medians[di] = cell.median_acc;
            result.probes.push_back(cell);
            return cell.median_acc;
        };

        // Monotone bisection for the smallest passing grid index.
        std::size_t lo = 0, hi = cfg.d_grid.size() - 1;
        bool any_pass = probe(hi) >= cfg.threshold;
        CapacityResult::Point point;
        point.n = n;
        if (!any_pass) {
            point.above_grid = true;
            point.d_min = cfg.d_grid.back();
        } else {
            while (lo < hi) {
                const std::size_t mid = (lo + hi) / 2;
                if (probe(mid) >= cfg.threshold) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            // Fall back to a linear scan if the probed pattern is not monotone.
            bool monotone = true;
            for (std::size_t i = 0; i < cfg.d_grid.size(); ++i) {
                for (std::size_t j = i + 1; j < cfg.d_grid.size(); ++j) {
                    if (medians[i].has_value() && medians[j].has_value() &&
                        *medians[i] >= cfg.threshold && *medians[j] < cfg.threshold) {
                        monotone = false;
                    }
                }
            }
            if (!monotone) {
                result.fell_back_linear = true;
                lo = cfg.d_grid.size();
                for (std::size_t i = 0; i < cfg.d_grid.size(); ++i) {
                    if (probe(i) >= cfg.threshold) {
                        lo = i;
                        break;
                    }
                }
            }
            point.d_min = cfg.d_grid[lo];
        }
        result.points.push_back(point);
    }

    std::vector<double> xs_log, ys, xs_ln, ys_ln;
    for (const auto& p : result.points) {
        if (p.above_grid) {
            continue;
        }
        xs_log.push_back(std::log2(static_cast<double>(p.n)));
        ys.push_back(static_cast<double>(p.d_min));
        xs_ln.push_back(std::log(static_cast<double>(p.n)));
        ys_ln.push_back(std::log(static_cast<double>(p.d_min)));
    }
    if (xs_log.size() >= 2) {
        adetail::least_squares(xs_log, ys, result.log_a, result.log_b, result.log_r2);
        double lnc = 0.0;
        adetail::least_squares(xs_ln, ys_ln, lnc, result.pow_alpha, result.pow_r2);
        result.pow_c = std::exp(lnc);
    }
    return result;
}

}  // namespace gmem
