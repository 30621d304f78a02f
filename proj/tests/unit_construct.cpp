// Certification of every explicit construction against the composition
// oracle, plus the trace-level checks the proofs promise (gate truth tables,
// filter-layer slot survival, lookup pre-activations, selector outputs).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gmem/construct.hpp"

using namespace gmem;

namespace {

RelationSet make_rels(const TaskSpec& spec) {
    Prng prng(spec.seed);
    return sample_bijections(spec, prng);
}

VerifyReport certify(const ModelParams& params, const TaskSpec& spec, const RelationSet& rels,
                     bool use_cot = false, std::size_t budget = 1 << 20) {
    Prng prng(spec.seed + 1);
    return verify_exact(params, spec, rels, budget, use_cot, prng);
}

}  // namespace

TEST_CASE("disjoint attributes: exhaustive certification") {
    {
        TaskSpec spec{2, 1, 1, 21};
        const RelationSet rels = make_rels(spec);
        Prng prng(1);
        const ModelParams params = build_disjoint_attr(spec, rels, prng);
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.exhaustive);
        CHECK(report.queries_checked == 2);
        CHECK(report.errors.empty());
    }
    {
        TaskSpec spec{64, 4, 1, 22};
        const RelationSet rels = make_rels(spec);
        Prng prng(2);
        const ModelParams params = build_disjoint_attr(spec, rels, prng);
        CHECK(params.d == code_dim(64) + code_dim(4));
        CHECK(params.decode == DecodeMode::paired_attribute);
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.queries_checked == 256);
        CHECK(report.errors.empty());
        CHECK(report.margin_slack > 0.0);

        // attribute row (j, g_j(i)) is exactly (v_i, u_j)
        const std::size_t dv = code_dim(64);
        for (std::uint32_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                const std::uint32_t a = rels.apply(j, i);
                const double* row = params.embed_out.row(j * 64 + a);
                for (std::size_t t = 0; t < dv; ++t) {
                    CHECK(row[t] == params.embed_in(i, t));
                }
                for (std::size_t t = dv; t < params.d; ++t) {
                    CHECK(row[t] == params.embed_in(64 + j, t));
                }
            }
        }
    }
    TaskSpec bad{4, 1, 2, 0};
    const RelationSet rels = make_rels(bad);
    Prng prng(3);
    CHECK_THROWS_AS(build_disjoint_attr(bad, rels, prng), std::invalid_argument);
}

TEST_CASE("shared-attr MLP: gate table, certification, hidden blocks") {
    TaskSpec spec{64, 8, 1, 31};
    const RelationSet rels = make_rels(spec);
    Prng prng(4);
    const ModelParams params = build_shared_attr_mlp(spec, rels, prng);
    const std::size_t dv = code_dim(64);
    CHECK(params.d == 8 * dv + 1);

    const VerifyReport report = certify(params, spec, rels);
    CHECK(report.exhaustive);
    CHECK(report.queries_checked == 512);
    CHECK(report.errors.empty());
    CHECK(report.margin_slack > 0.0);

    // f gate truth table, read from the built weights: with the relation
    // scalar arriving as c = 2(j+1), f_r = 2(p_r + q_r) must be 0 at r = j and
    // >= 2 one step away.
    const auto f_gate = [&](std::size_t r, std::size_t j) {
        const double c = 2.0 * (static_cast<double>(j) + 1.0);
        const auto& l1 = params.layers[0].mlp[0];
        const std::size_t off_p = 2 * 8 * dv;
        const std::size_t off_q = off_p + 8;
        const double p = std::max(0.0, l1.w(off_p + r, params.d - 1) * c + l1.b[off_p + r]);
        const double q = std::max(0.0, l1.w(off_q + r, params.d - 1) * c + l1.b[off_q + r]);
        return 2.0 * (p + q);
    };
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(f_gate(j, j) == 0.0);
        if (j > 0) CHECK(f_gate(j - 1, j) >= 2.0);
        if (j < 7) CHECK(f_gate(j + 1, j) >= 2.0);
    }

    // Hidden gated blocks: recompute layer-2 activations at the relation
    // position; block j passes the stacked code bitwise, all others are zero.
    const std::uint32_t subject = 5;
    const std::uint32_t rel = 3;
    const ForwardTrace trace = forward(params, {subject, 64 + rel});
    const auto& layer = params.layers[0];
    std::vector<double> h = {};
    {
        // column 1 of x_attn
        std::vector<double> x(params.d);
        for (std::size_t i = 0; i < params.d; ++i) {
            x[i] = trace.x_attn[0](i, 1);
        }
        for (std::size_t li = 0; li + 1 < layer.mlp.size(); ++li) {
            const auto& ml = layer.mlp[li];
            std::vector<double> next(ml.w.rows);
            for (std::size_t o = 0; o < ml.w.rows; ++o) {
                double v = ml.b[o];
                for (std::size_t in = 0; in < ml.w.cols; ++in) {
                    v += ml.w(o, in) * x[in];
                }
                next[o] = std::max(0.0, v);
            }
            x = std::move(next);
        }
        h = std::move(x);
    }
    for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t t = 0; t < dv; ++t) {
            const double y = h[r * dv + t] - h[8 * dv + r * dv + t];  // y+ - y-
            const double expected = r == rel ? params.embed_in(subject, r * dv + t) : 0.0;
            CHECK(y == doctest::Approx(expected).epsilon(1e-12));
        }
    }

    // Final hidden state is exactly the attribute embedding (readout of the
    // first code block decodes against the v-book).
    for (std::size_t t = 0; t < dv; ++t) {
        CHECK(trace.final_hidden()(t, 1) ==
              doctest::Approx(params.embed_out(rels.apply(rel, subject), t)).epsilon(1e-12));
    }
    for (std::size_t t = dv; t < params.d; ++t) {
        CHECK(std::fabs(trace.final_hidden()(t, 1)) <= 1e-12);
    }
}

TEST_CASE("shared-attr MLP mutation: one corrupted gate weight breaks queries") {
    TaskSpec spec{64, 4, 1, 33};
    const RelationSet rels = make_rels(spec);
    Prng prng(5);
    ModelParams params = build_shared_attr_mlp(spec, rels, prng);
    const VerifyReport clean = certify(params, spec, rels);
    REQUIRE(clean.errors.empty());

    const std::size_t dv = code_dim(64);
    const std::size_t off_p = 2 * 4 * dv;
    params.layers[0].mlp[0].w(off_p + 1, params.d - 1) = 0.0;  // relation-1 gate stuck open
    const VerifyReport broken = certify(params, spec, rels);
    CHECK_FALSE(broken.errors.empty());
}

TEST_CASE("shared-attr multi-head: certification and attention geometry") {
    {
        TaskSpec spec{16, 1, 1, 41};
        const RelationSet rels = make_rels(spec);
        Prng prng(6);
        const ModelParams params = build_shared_attr_multihead(spec, rels, prng, 16.0);
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.queries_checked == 16);
        CHECK(report.errors.empty());
    }
    TaskSpec spec{64, 4, 1, 42};
    const RelationSet rels = make_rels(spec);
    Prng prng(7);
    const ModelParams params = build_shared_attr_multihead(spec, rels, prng, 16.0);
    const std::size_t dv = code_dim(64);
    const std::size_t du = code_dim(4);
    CHECK(params.d == 4 * dv + du + 1);

    const VerifyReport report = certify(params, spec, rels);
    CHECK(report.queries_checked == 256);
    CHECK(report.errors.empty());
    CHECK(report.margin_slack > 0.0);

    // Recover the relation codes from W_Q to compute score gaps.
    const std::size_t ublock = 4 * dv;
    auto ucode = [&](std::size_t j, std::size_t t) {
        return params.layers[0].heads[j].wq(0, ublock + t) / 2.0;
    };
    for (std::uint32_t i = 0; i < 64; i += 7) {
        for (std::uint32_t j = 0; j < 4; ++j) {
            const ForwardTrace trace = forward(params, {i, 64 + j});
            for (std::uint32_t h = 0; h < 4; ++h) {
                const Matrix& a = trace.attn[0][h];
                if (h == j) {
                    CHECK(a(1, 1) <= 1e-6);  // matched head: mass off the subject
                    CHECK(a(0, 1) >= 1.0 - 1e-6);
                } else {
                    CHECK(a(0, 1) <= 1e-6);  // mismatched head: mass off the relation
                    double dot = 0.0;
                    for (std::size_t t = 0; t < du; ++t) {
                        dot += ucode(h, t) * ucode(j, t);
                    }
                    const double gap = 2.0 * (static_cast<double>(du) - 2.0 * dot);
                    CHECK(gap > 0.0);
                    CHECK(a(1, 1) >= 1.0 - std::exp(-16.0 * gap));
                }
            }
        }
    }
}

TEST_CASE("shared-attr multi-head: beta too small is rejected by name") {
    TaskSpec spec{64, 4, 1, 43};
    const RelationSet rels = make_rels(spec);
    Prng prng(8);
    CHECK_THROWS_WITH_AS(build_shared_attr_multihead(spec, rels, prng, 0.01),
                         doctest::Contains("beta too small"), std::runtime_error);
}

TEST_CASE("hierarchical: certification, slot filtering, BOS fixed point") {
    TaskSpec bad{16, 3, 1, 51};
    const RelationSet bad_rels = make_rels(bad);
    Prng prng0(9);
    CHECK_THROWS_AS(build_shared_attr_hierarchical(bad, bad_rels, prng0, 16.0),
                    std::invalid_argument);

    {
        TaskSpec spec{16, 2, 1, 52};
        const RelationSet rels = make_rels(spec);
        Prng prng(10);
        const ModelParams params = build_shared_attr_hierarchical(spec, rels, prng, 16.0);
        CHECK(params.layers.size() == 2);  // 1 + log2(2)
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.queries_checked == 32);
        CHECK(report.errors.empty());
        CHECK(report.margin_slack > 0.0);
    }

    TaskSpec spec{16, 8, 1, 53};
    const RelationSet rels = make_rels(spec);
    Prng prng(11);
    const ModelParams params = build_shared_attr_hierarchical(spec, rels, prng, 16.0);
    CHECK(params.layers.size() == 4);  // 1 + log2(8)
    const std::size_t dv = code_dim(16);
    CHECK(params.d == 8 * dv + 3 + 3);
    const VerifyReport report = certify(params, spec, rels);
    CHECK(report.errors.empty());

    // Trace: after filter layer l, surviving answer-stack slots at the
    // relation position agree with the queried relation on bits 1..l; the BOS
    // column never changes.
    const std::uint32_t subject = 9;
    const std::uint32_t rel = 5;
    const ForwardTrace trace = forward(params, {subject, 16 + rel});
    const std::size_t rel_col = 2;  // BOS, subject, relation
    for (std::size_t level = 0; level < 3; ++level) {
        const Matrix& x = trace.x_out[1 + level];
        for (std::size_t slot = 0; slot < 8; ++slot) {
            const bool survives = ((slot ^ rel) & ((1u << (level + 1)) - 1u)) == 0;
            for (std::size_t t = 0; t < dv; ++t) {
                const double got = x(slot * dv + t, rel_col);
                const double want = survives ? params.embed_in(subject, slot * dv + t) : 0.0;
                CHECK(std::fabs(got - want) <= 1e-9);
            }
        }
    }
    for (std::size_t layer = 0; layer < 4; ++layer) {
        for (std::size_t i = 0; i < params.d; ++i) {
            CHECK(std::fabs(trace.x_out[layer](i, 0) - trace.x0(i, 0)) <= 1e-9);
        }
    }
}

TEST_CASE("k-hop key-value: lookup pre-activations and certification") {
    {
        TaskSpec spec{8, 2, 2, 61};
        const RelationSet rels = make_rels(spec);
        Prng prng(12);
        const ModelParams params = build_khop_kv(spec, rels, prng);
        const std::size_t ds = 3, dr = 1;
        CHECK(params.d == 1 + ds + 2 * dr + 2);

        // Exhaustive neuron x token grid: the lookup pre-activation is 1
        // exactly when both bins match, <= 0 otherwise.
        const auto& l1 = params.layers[0].mlp[0];
        for (std::uint32_t s0 = 0; s0 < 8; ++s0) {
            for (std::uint32_t r1 = 0; r1 < 2; ++r1) {
                for (std::uint32_t r2 = 0; r2 < 2; ++r2) {
                    const ForwardTrace trace = forward(params, {s0, 8 + r1, 8 + r2});
                    const Matrix& xt = trace.x_attn[0];
                    for (std::uint32_t s = 0; s < 8; ++s) {
                        for (std::uint32_t r = 0; r < 2; ++r) {
                            const std::size_t neuron = s * 2 + r;
                            for (std::size_t col = 0; col < 3; ++col) {
                                double pre = l1.b[neuron];
                                for (std::size_t i = 0; i < params.d; ++i) {
                                    pre += l1.w(neuron, i) * xt(i, col);
                                }
                                if (col == 0 && s == s0 && r == r1) {
                                    CHECK(std::fabs(pre - 1.0) <= 1e-9);
                                } else {
                                    CHECK(pre <= 1e-9);
                                }
                            }
                        }
                    }
                }
            }
        }
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.errors.empty());
    }
    {
        TaskSpec spec{32, 3, 3, 62};
        const RelationSet rels = make_rels(spec);
        Prng prng(13);
        const ModelParams params = build_khop_kv(spec, rels, prng);
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.exhaustive);
        CHECK(report.queries_checked == 864);
        CHECK(report.errors.empty());
        CHECK(report.margin_slack > 0.0);
    }
    {
        TaskSpec spec{16, 2, 1, 63};  // k = 1 reduces to a single-hop solver
        const RelationSet rels = make_rels(spec);
        Prng prng(14);
        const ModelParams params = build_khop_kv(spec, rels, prng);
        const VerifyReport report = certify(params, spec, rels);
        CHECK(report.errors.empty());
    }
}

TEST_CASE("k-hop tree: dimensions, certification, selector trace") {
    TaskSpec spec{16, 2, 3, 71};
    const RelationSet rels = make_rels(spec);
    Prng prng(15);
    const ModelParams params = build_khop_tree(spec, rels, prng);
    CHECK(params.d == 8 * 4 + 1 + 4);  // R^k d_S + d_R + k + 1 = 37
    const VerifyReport report = certify(params, spec, rels);
    CHECK(report.exhaustive);
    CHECK(report.queries_checked == 128);
    CHECK(report.errors.empty());
    CHECK(report.margin_slack > 0.0);

    // After layer l the active token's tree front holds the selected subtree
    // (branch r_l of the incoming tree), everything else zeroed.
    const std::uint32_t s0 = 11;
    const std::vector<std::uint32_t> path = {1, 0, 1};
    const ForwardTrace trace = forward(params, {s0, 17, 16, 17});
    const std::size_t ds = 4;
    std::uint32_t s = s0;
    for (std::size_t level = 1; level <= 2; ++level) {
        s = rels.apply(path[level - 1], s);
        // tree^{(level)}(s): all paths of length k - level from s
        std::size_t v_level = 8 * ds;
        for (std::size_t h = 0; h < level; ++h) {
            v_level /= 2;
        }
        const std::size_t leaves = v_level / ds;
        const Matrix& x = trace.x_out[level - 1];
        for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
            std::size_t rest = leaf;
            std::vector<std::uint32_t> sub(3 - level);
            for (std::size_t h = sub.size(); h-- > 0;) {
                sub[h] = static_cast<std::uint32_t>(rest % 2);
                rest /= 2;
            }
            const auto bits = binary_code(compose_path(rels, s, sub), ds);
            for (std::size_t t = 0; t < ds; ++t) {
                CHECK(std::fabs(x(leaf * ds + t, level) - static_cast<double>(bits[t])) <= 1e-9);
            }
        }
        for (std::size_t c = v_level; c < 8 * ds; ++c) {
            CHECK(std::fabs(x(c, level)) <= 1e-9);
        }
    }

    // k = 1 tree is the hop table; agrees with the key-value construction.
    TaskSpec one{16, 2, 1, 72};
    const RelationSet rels1 = make_rels(one);
    Prng prng_a(16), prng_b(17);
    const ModelParams tree1 = build_khop_tree(one, rels1, prng_a);
    const ModelParams kv1 = build_khop_kv(one, rels1, prng_b);
    for (std::uint32_t s1 = 0; s1 < 16; ++s1) {
        for (std::uint32_t r1 = 0; r1 < 2; ++r1) {
            const std::vector<std::uint32_t> prompt = {s1, 16 + r1};
            CHECK(predict_final(tree1, prompt) == predict_final(kv1, prompt));
        }
    }
}

TEST_CASE("k-hop tree: memory cap refusal carries byte estimate") {
    TaskSpec spec{4096, 8, 6, 73};
    // Building the relation set at this size is cheap; the cap must trip
    // before any giant allocation.
    const RelationSet rels = make_rels(spec);
    Prng prng(18);
    try {
        build_khop_tree(spec, rels, prng);
        FAIL("expected ResourceCapError");
    } catch (const ResourceCapError& e) {
        CHECK(e.required_bytes > e.cap_bytes);
    }
}

TEST_CASE("k-hop chain of thought: prefix fidelity and agreements") {
    {
        TaskSpec spec{32, 3, 4, 81};
        const RelationSet rels = make_rels(spec);
        Prng prng(19);
        const ModelParams params = build_khop_cot(spec, rels, prng, 16.0);
        const std::size_t ds = 5, dr = 2;
        CHECK(params.d == 1 + ds + dr + 3 * ds + 9);

        // Every generated intermediate equals the oracle prefix, exhaustively.
        Prng qp(82);
        const QueryBatch batch = enumerate_queries(spec, rels, 1 << 20, qp);
        REQUIRE(batch.exhaustive);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto prompt = batch.prompt_tokens(i, 32);
            const auto generated = generate_cot(params, prompt, 4);
            std::vector<std::uint32_t> prefix;
            for (std::size_t h = 0; h < 4; ++h) {
                prefix.push_back(batch.path(i)[h]);
                CHECK(generated[h] == compose_path(rels, batch.subjects[i], prefix));
            }
        }
        const VerifyReport report = certify(params, spec, rels, /*use_cot=*/true);
        CHECK(report.errors.empty());
        CHECK(report.margin_slack >= 1.9);  // +/-1 bit codes give a >= 2 gap

        // identity relations: all generated tokens equal s0
        std::vector<std::vector<std::uint32_t>> id_perms(3);
        for (auto& p : id_perms) {
            p.resize(32);
            for (std::uint32_t s = 0; s < 32; ++s) p[s] = s;
        }
        const RelationSet ident(32, id_perms);
        Prng prng_i(20);
        const ModelParams id_model = build_khop_cot(spec, ident, prng_i, 16.0);
        const auto gen = generate_cot(id_model, {7, 32, 33, 34, 33}, 4);
        CHECK(gen == std::vector<std::uint32_t>{7, 7, 7, 7});
    }
    {
        // k = 1 agrees with the shared-attribute MLP construction.
        TaskSpec spec{32, 3, 1, 83};
        const RelationSet rels = make_rels(spec);
        Prng prng_a(21), prng_b(22);
        const ModelParams cot = build_khop_cot(spec, rels, prng_a, 16.0);
        const ModelParams mlp = build_shared_attr_mlp(spec, rels, prng_b);
        for (std::uint32_t s = 0; s < 32; ++s) {
            for (std::uint32_t r = 0; r < 3; ++r) {
                const std::vector<std::uint32_t> prompt = {s, 32 + r};
                CHECK(generate_cot(cot, prompt, 1)[0] == predict_final(mlp, prompt));
            }
        }
    }
    {
        TaskSpec spec{32, 3, 4, 84};
        const RelationSet rels = make_rels(spec);
        Prng prng(23);
        CHECK_THROWS_WITH_AS(build_khop_cot(spec, rels, prng, 1.0),
                             doctest::Contains("tau too small"), std::runtime_error);
    }
}

TEST_CASE("cross-construction agreement on shared task") {
    TaskSpec spec{16, 2, 3, 91};
    const RelationSet rels = make_rels(spec);
    Prng p1(31), p2(32), p3(33);
    const ModelParams kv = build_khop_kv(spec, rels, p1);
    const ModelParams tree = build_khop_tree(spec, rels, p2);
    const ModelParams cot = build_khop_cot(spec, rels, p3, 16.0);
    Prng qp(34);
    const QueryBatch batch = enumerate_queries(spec, rels, 1 << 20, qp);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto prompt = batch.prompt_tokens(i, 16);
        const std::uint32_t want = batch.answers[i];
        CHECK(predict_final(kv, prompt) == want);
        CHECK(predict_final(tree, prompt) == want);
        CHECK(generate_cot(cot, prompt, 3).back() == want);
    }
}

TEST_CASE("doubling beta or tau never decreases margin slack") {
    {
        TaskSpec spec{32, 4, 1, 92};
        const RelationSet rels = make_rels(spec);
        Prng p1(41), p2(41);
        const ModelParams a = build_shared_attr_multihead(spec, rels, p1, 16.0);
        const ModelParams b = build_shared_attr_multihead(spec, rels, p2, 32.0);
        const VerifyReport ra = certify(a, spec, rels);
        const VerifyReport rb = certify(b, spec, rels);
        CHECK(rb.margin_slack >= ra.margin_slack - 1e-9);
    }
    {
        TaskSpec spec{16, 2, 3, 93};
        const RelationSet rels = make_rels(spec);
        Prng p1(42), p2(42);
        const ModelParams a = build_khop_cot(spec, rels, p1, 16.0);
        const ModelParams b = build_khop_cot(spec, rels, p2, 32.0);
        const VerifyReport ra = certify(a, spec, rels, true);
        const VerifyReport rb = certify(b, spec, rels, true);
        CHECK(rb.margin_slack >= ra.margin_slack - 1e-9);
    }
}

TEST_CASE("verify_exact sampled mode and report serialization") {
    TaskSpec spec{64, 4, 2, 94};
    const RelationSet rels = make_rels(spec);
    Prng prng(51);
    const ModelParams params = build_khop_kv(spec, rels, prng);
    Prng vp(52);
    const VerifyReport report = verify_exact(params, spec, rels, 100, false, vp);
    CHECK_FALSE(report.exhaustive);
    CHECK(report.queries_checked == 100);
    CHECK(report.errors.empty());
    const auto j = report.to_json();
    CHECK(j.at("mode") == "sampled");
    CHECK(j.at("certified") == true);
}
