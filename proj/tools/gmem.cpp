// gmem CLI: construct/verify explicit weight constructions, train models,
// run sweeps and capacity searches, analyze checkpoints (readout, intervene,
// freeze), and evaluate the k-hop lower bound.
//
// Exit codes: 0 success, 2 usage or config error, 3 verification failure,
// 4 resource cap exceeded.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmem/analysis.hpp"
#include "gmem/bounds.hpp"
#include "gmem/checkpoint.hpp"
#include "gmem/construct.hpp"
#include "gmem/io.hpp"
#include "gmem/train.hpp"
#include "gmem/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitVerifyFailure = 3;
constexpr int kExitResourceCap = 4;

using gmem::ConfigError;

gmem::RelationSet load_relations(const std::string& path) {
    return gmem::RelationSet::from_json(gmem::load_json_file(path).at("result"));
}

void write_relations(const std::string& path, const gmem::RunHeader& header,
                     const gmem::RelationSet& rels) {
    gmem::write_json_report(path, header, rels.to_json());
}

// ---------------------------------------------------------------------------
// construct
// ---------------------------------------------------------------------------
struct ConstructArgs {
    std::string kind;
    std::size_t n = 64;
    std::size_t r = 4;
    std::size_t k = 1;
    std::uint64_t seed = 0;
    double beta = 16.0;
    double tau = 16.0;
    std::size_t budget = 1 << 20;
    std::size_t mem_cap = std::size_t{2} << 30;
    std::string out;
    std::string rels_out;
    std::string report_out;
};

int cmd_construct(const ConstructArgs& args) {
    const std::set<std::string> kinds = {"disjoint-attr",
                                         "shared-attr-mlp",
                                         "shared-attr-multihead",
                                         "shared-attr-hierarchical",
                                         "khop-kv",
                                         "khop-tree",
                                         "khop-cot"};
    if (kinds.count(args.kind) == 0) {
        throw ConfigError("unknown construction kind: " + args.kind);
    }
    const bool is_khop = args.kind.rfind("khop", 0) == 0;
    gmem::TaskSpec spec{args.n, args.r, is_khop ? args.k : 1, args.seed};
    spec.validate();
    gmem::Prng rels_prng(spec.seed);
    const gmem::RelationSet rels = gmem::sample_bijections(spec, rels_prng);
    gmem::Prng build_prng = gmem::Prng(spec.seed).substream(0xB);
    gmem::ConstructOptions opts;
    opts.beta = args.beta;
    opts.tau = args.tau;
    opts.mem_cap_bytes = args.mem_cap;

    gmem::ModelParams params;
    if (args.kind == "disjoint-attr") {
        params = gmem::build_disjoint_attr(spec, rels, build_prng, opts);
    } else if (args.kind == "shared-attr-mlp") {
        params = gmem::build_shared_attr_mlp(spec, rels, build_prng, opts);
    } else if (args.kind == "shared-attr-multihead") {
        params = gmem::build_shared_attr_multihead(spec, rels, build_prng, args.beta, opts);
    } else if (args.kind == "shared-attr-hierarchical") {
        params = gmem::build_shared_attr_hierarchical(spec, rels, build_prng, args.beta, opts);
    } else if (args.kind == "khop-kv") {
        params = gmem::build_khop_kv(spec, rels, build_prng, opts);
    } else if (args.kind == "khop-tree") {
        params = gmem::build_khop_tree(spec, rels, build_prng, opts);
    } else {
        params = gmem::build_khop_cot(spec, rels, build_prng, args.tau, opts);
    }

    gmem::Prng verify_prng = gmem::Prng(spec.seed).substream(0xE);
    const bool use_cot = args.kind == "khop-cot";
    const gmem::VerifyReport report =
        gmem::verify_exact(params, spec, rels, args.budget, use_cot, verify_prng);

    gmem::RunHeader header;
    header.command = "construct";
    header.config = {{"kind", args.kind}, {"n", args.n},       {"r", args.r},
                     {"k", spec.hops},    {"beta", args.beta}, {"tau", args.tau},
                     {"budget", args.budget}};
    header.seed = args.seed;

    if (!args.out.empty()) {
        gmem::save_checkpoint(params, args.out);
    }
    if (!args.rels_out.empty()) {
        write_relations(args.rels_out, header, rels);
    }
    if (!args.report_out.empty()) {
        gmem::write_json_report(args.report_out, header, report.to_json());
    }
    std::printf("%s n=%zu r=%zu k=%zu d=%zu: %s (%zu queries, %zu errors, margin %s)\n",
                args.kind.c_str(), args.n, args.r, spec.hops, params.d,
                report.certified() ? "certified" : "FAILED", report.queries_checked,
                report.errors.size(), gmem::format_double(report.margin_slack).c_str());
    return report.certified() ? kExitOk : kExitVerifyFailure;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------
int cmd_verify(const std::string& model_path, const std::string& rels_path, std::size_t k,
               std::size_t budget, bool use_cot, std::uint64_t seed,
               const std::string& report_out) {
    const gmem::ModelParams params = gmem::load_checkpoint(model_path);
    const gmem::RelationSet rels = load_relations(rels_path);
    gmem::TaskSpec spec{params.n_subjects, params.n_relations, k, seed};
    gmem::Prng prng(seed);
    const gmem::VerifyReport report = gmem::verify_exact(params, spec, rels, budget, use_cot, prng);
    gmem::RunHeader header;
    header.command = "verify";
    header.config = {{"model", model_path}, {"k", k}, {"budget", budget}, {"cot", use_cot}};
    header.seed = seed;
    if (!report_out.empty()) {
        gmem::write_json_report(report_out, header, report.to_json());
    }
    std::printf("verify: %s (%zu queries, %zu errors, margin %s)\n",
                report.certified() ? "certified" : "FAILED", report.queries_checked,
                report.errors.size(), gmem::format_double(report.margin_slack).c_str());
    return report.certified() ? kExitOk : kExitVerifyFailure;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
gmem::TrainConfig parse_train_config(const nlohmann::json& doc) {
    gmem::ConfigView root(doc, "config");
    gmem::TrainConfig cfg;
    {
        gmem::ConfigView task = root.child("task");
        cfg.task.n_subjects = task.require<std::size_t>("n");
        cfg.task.n_relations = task.require<std::size_t>("r");
        cfg.task.hops = task.get<std::size_t>("k", 1);
        cfg.task.seed = task.get<std::uint64_t>("seed", 0);
        task.finish();
    }
    {
        gmem::ConfigView model = root.child("model");
        cfg.d = model.require<std::size_t>("d");
        cfg.mlp_width = model.get<std::size_t>("mlp_width", 0);
        cfg.attention = gmem::enum_from_string<gmem::AttentionMode>(model.get<std::string>(
            "attention", cfg.task.hops > 1 ? "softmax-causal" : "uniform-causal"));
        cfg.activation =
            gmem::enum_from_string<gmem::Activation>(model.get<std::string>("activation", "gelu"));
        cfg.norm =
            gmem::enum_from_string<gmem::NormMode>(model.get<std::string>("norm", "pre-rmsnorm"));
        cfg.learned_positions = model.get<bool>(
            "learned_positions", cfg.attention == gmem::AttentionMode::softmax_causal);
        model.finish();
    }
    {
        gmem::ConfigView train = root.child("train");
        cfg.lr = train.get<double>("lr", cfg.task.hops > 1 ? 1e-2 : 1.0);
        cfg.weight_decay = train.get<double>("weight_decay", 0.1);
        cfg.steps = train.get<std::size_t>("steps", 15000);
        cfg.batch = train.get<std::size_t>("batch", 1024);
        cfg.clip_norm = train.get<double>("clip_norm", 1.0);
        cfg.early_stop_loss = train.get<double>("early_stop_loss", 1e-4);
        cfg.early_stop_acc = train.get<double>("early_stop_acc", 0.999);
        cfg.init_std = train.get<double>("init_std", 0.02);
        cfg.log_every = train.get<std::size_t>("log_every", 100);
        cfg.eval_budget = train.get<std::size_t>("eval_budget", 1 << 16);
        cfg.freeze_embeddings = train.get<bool>("freeze_embeddings", false);
        cfg.cot = train.get<bool>("cot", false);
        cfg.seed = train.get<std::uint64_t>("seed", 0);
        train.finish();
    }
    root.finish();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

int cmd_train(const std::string& config_path, const std::string& rels_path,
              const std::string& out_path, const std::string& metrics_path,
              const std::string& rels_out, bool frozen_flag, std::size_t workers) {
    const nlohmann::json doc = gmem::load_json_file(config_path);
    gmem::TrainConfig cfg = parse_train_config(doc);
    if (frozen_flag) {
        cfg.freeze_embeddings = true;
    }
    cfg.workers = workers;

    gmem::RelationSet rels = [&] {
        if (!rels_path.empty()) {
            return load_relations(rels_path);
        }
        gmem::Prng rp(cfg.task.seed);
        return gmem::sample_bijections(cfg.task, rp);
    }();
    if (rels.n_subjects() != cfg.task.n_subjects || rels.n_relations() != cfg.task.n_relations) {
        throw ConfigError("relations file does not match the task in the config");
    }

    gmem::RunHeader header;
    header.command = "train";
    header.config = doc;
    header.config["train"]["freeze_embeddings"] = cfg.freeze_embeddings;
    header.seed = cfg.seed;

    gmem::Prng train_prng(cfg.seed);
    const gmem::TrainResult result = gmem::train(cfg, rels, train_prng);

    if (!metrics_path.empty()) {
        gmem::CsvWriter csv(metrics_path, header, "step,loss,acc,grad_norm,secs", false);
        for (const auto& row : result.log.rows) {
            csv.row(std::to_string(row.step) + "," + gmem::format_double(row.loss) + "," +
                    gmem::format_double(row.acc) + "," + gmem::format_double(row.grad_norm) + "," +
                    gmem::format_double(row.secs));
        }
    }
    if (!out_path.empty()) {
        gmem::save_checkpoint(result.params, out_path);
    }
    if (!rels_out.empty()) {
        write_relations(rels_out, header, rels);
    }
    std::printf("train: status=%s steps=%zu final_loss=%s final_acc=%s\n",
                gmem::to_string(result.status), result.steps_run,
                gmem::format_double(result.final_loss).c_str(),
                gmem::format_double(result.final_acc).c_str());
    return result.status == gmem::TrainStatus::diverged ? 1 : kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------
int cmd_sweep(const std::string& config_path, const std::string& out_path, std::size_t workers) {
    const nlohmann::json doc = gmem::load_json_file(config_path);
    gmem::ConfigView root(doc, "config");
    gmem::ConfigView task = root.child("task");
    const std::size_t n = task.require<std::size_t>("n");
    const std::size_t k = task.get<std::size_t>("k", 1);
    const std::uint64_t task_seed = task.get<std::uint64_t>("seed", 0);
    task.finish();
    gmem::ConfigView grid = root.child("grid");
    const auto r_list = grid.require<std::vector<std::size_t>>("r");
    const auto d_list = grid.require<std::vector<std::size_t>>("d");
    const auto seed_list = grid.require<std::vector<std::uint64_t>>("seeds");
    grid.finish();
    const bool frozen = root.get<bool>("frozen", false);
    const bool cot = root.get<bool>("cot", false);
    const bool has_train = root.has("train");
    root.child("train");  // consume for unknown-key checking
    root.finish();
    if (r_list.empty() || d_list.empty() || seed_list.empty()) {
        throw ConfigError("sweep grid is empty (grid.r, grid.d, grid.seeds must be nonempty)");
    }

    gmem::RunHeader header;
    header.command = "sweep";
    header.config = doc;
    header.seed = task_seed;
    const std::uint64_t hash = gmem::config_hash(doc);

    // Resume: collect completed (r,d,seed) cells from an existing file after
    // checking its config hash.
    std::set<std::string> done;
    bool append = false;
    if (std::filesystem::exists(out_path)) {
        std::ifstream existing(out_path);
        std::string line;
        bool hash_ok = false;
        while (std::getline(existing, line)) {
            if (line.rfind("# config_hash: ", 0) == 0) {
                hash_ok = line == "# config_hash: " + std::to_string(hash);
            }
            if (line.empty() || line[0] == '#' || line.rfind("n,", 0) == 0) {
                continue;
            }
            std::stringstream ss(line);
            std::string nn, rr, dd, seed, metric;
            std::getline(ss, nn, ',');
            std::getline(ss, rr, ',');
            std::getline(ss, dd, ',');
            std::getline(ss, seed, ',');
            std::getline(ss, metric, ',');
            if (metric == "final_acc") {
                done.insert(rr + "/" + dd + "/" + seed);
            }
        }
        if (!hash_ok) {
            throw ConfigError("existing sweep output " + out_path +
                              " was produced by a different config; refusing to resume");
        }
        append = true;
    }

    gmem::CsvWriter csv(out_path, header, "n,r,d,seed,metric,value", append);

    // Deterministic cell order with duplicates removed.
    std::set<std::tuple<std::size_t, std::size_t, std::uint64_t>> cells;
    for (std::size_t r : r_list) {
        for (std::size_t d : d_list) {
            for (std::uint64_t s : seed_list) {
                cells.insert({r, d, s});
            }
        }
    }
    std::size_t ran = 0, skipped = 0;
    for (const auto& [r, d, seed] : cells) {
        const std::string key =
            std::to_string(r) + "/" + std::to_string(d) + "/" + std::to_string(seed);
        if (done.count(key) != 0) {
            ++skipped;
            continue;
        }
        gmem::TrainConfig cfg;
        if (has_train) {
            nlohmann::json merged;
            merged["task"] = {{"n", n}, {"r", r}, {"k", k}, {"seed", task_seed}};
            merged["model"] = {{"d", d}};
            merged["train"] = doc.at("train");
            cfg = parse_train_config(merged);
        } else {
            cfg.task = {n, r, k, task_seed};
            cfg.d = d;
            cfg.lr = k > 1 ? 1e-2 : 1.0;
            if (k > 1) {
                cfg.attention = gmem::AttentionMode::softmax_causal;
                cfg.learned_positions = true;
            }
        }
        cfg.task.seed = task_seed + 17 * r;
        cfg.freeze_embeddings = frozen;
        cfg.cot = cot;
        cfg.seed = seed;
        cfg.workers = workers;
        gmem::Prng rp(cfg.task.seed);
        const gmem::RelationSet rels = gmem::sample_bijections(cfg.task, rp);
        gmem::Prng tp(cfg.seed);
        const gmem::TrainResult result = gmem::train(cfg, rels, tp);
        const std::string prefix = std::to_string(n) + "," + std::to_string(r) + "," +
                                   std::to_string(d) + "," + std::to_string(seed) + ",";
        csv.row(prefix + "final_loss," + gmem::format_double(result.final_loss));
        csv.row(prefix + "steps_run," + std::to_string(result.steps_run));
        csv.row(prefix + "final_acc," + gmem::format_double(result.final_acc));
        ++ran;
    }
    std::printf("sweep: %zu cells run, %zu skipped (resume), output %s\n", ran, skipped,
                out_path.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------
int cmd_analyze_readout(const std::string& model_path, const std::string& rels_path,
                        const std::string& tap, double lambda, double split, std::uint64_t seed,
                        const std::string& out_path) {
    const gmem::ModelParams params = gmem::load_checkpoint(model_path);
    const gmem::RelationSet rels = load_relations(rels_path);
    const gmem::ReadoutTap tap_mode =
        tap == "embedding" ? gmem::ReadoutTap::embedding : gmem::ReadoutTap::post_attention;
    gmem::Prng prng(seed);
    const gmem::ReadoutSet readout = gmem::fit_readout(params, rels, tap_mode, lambda, split, prng);
    nlohmann::json result;
    result["tap"] = gmem::to_string(tap_mode);
    result["lambda"] = lambda;
    result["train_fraction"] = split;
    result["holdout_accuracy"] = readout.holdout_accuracy;
    double worst = 1.0;
    for (double a : readout.holdout_accuracy) {
        worst = std::min(worst, a);
    }
    result["min_accuracy"] = worst;
    gmem::RunHeader header;
    header.command = "analyze readout";
    header.config = {{"model", model_path}, {"tap", tap}, {"lambda", lambda}, {"split", split}};
    header.seed = seed;
    if (!out_path.empty()) {
        gmem::write_json_report(out_path, header, result);
    }
    std::printf("readout: min accuracy %s across %zu relations\n",
                gmem::format_double(worst).c_str(), readout.holdout_accuracy.size());
    return kExitOk;
}

int cmd_analyze_intervene(const std::string& model_path, const std::string& rels_path,
                          std::size_t rank, bool rank_sweep, std::size_t trials,
                          const std::string& tap, double lambda, double split, std::uint64_t seed,
                          const std::string& out_path) {
    const gmem::ModelParams params = gmem::load_checkpoint(model_path);
    const gmem::RelationSet rels = load_relations(rels_path);
    const gmem::ReadoutTap tap_mode =
        tap == "embedding" ? gmem::ReadoutTap::embedding : gmem::ReadoutTap::post_attention;
    gmem::Prng prng(seed);
    gmem::Prng fit_prng = prng.substream(1);
    const gmem::ReadoutSet readout =
        gmem::fit_readout(params, rels, tap_mode, lambda, split, fit_prng);
    nlohmann::json result;
    gmem::Prng trial_prng = prng.substream(2);
    if (rank_sweep) {
        std::vector<std::size_t> ranks;
        for (std::size_t r = 1; r <= std::min(params.d, params.embed_out.cols); r *= 2) {
            ranks.push_back(r);
        }
        const auto sweep =
            gmem::selectivity_rank_sweep(params, rels, readout, ranks, trials, trial_prng);
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& entry : sweep) {
            rows.push_back(entry.to_json());
        }
        result["sweep"] = rows;
        const auto& best = gmem::best_selectivity(sweep);
        result["best"] = best.to_json();
        std::printf("intervene: best selectivity %s at rank %zu\n",
                    gmem::format_double(best.selectivity).c_str(), best.rank);
    } else {
        const auto res =
            gmem::intervene_selectivity(params, rels, readout, rank, trials, trial_prng);
        result = res.to_json();
        std::printf("intervene: selectivity %s at rank %zu\n",
                    gmem::format_double(res.selectivity).c_str(), rank);
    }
    gmem::RunHeader header;
    header.command = "analyze intervene";
    header.config = {{"model", model_path}, {"rank", rank}, {"rank_sweep", rank_sweep},
                     {"trials", trials},    {"tap", tap},   {"lambda", lambda},
                     {"split", split}};
    header.seed = seed;
    if (!out_path.empty()) {
        gmem::write_json_report(out_path, header, result);
    }
    return kExitOk;
}

int cmd_analyze_freeze(const std::string& model_path, const std::string& rels_path,
                       const std::string& init, std::uint64_t new_seed, double lambda,
                       double split, std::size_t budget, std::uint64_t seed,
                       const std::string& out_path) {
    const gmem::ModelParams params = gmem::load_checkpoint(model_path);
    const gmem::RelationSet rels = load_relations(rels_path);
    gmem::TaskSpec fresh_spec{params.n_subjects, params.n_relations, 1, new_seed};
    gmem::Prng fresh_prng(new_seed);
    const gmem::RelationSet fresh = gmem::sample_bijections(fresh_spec, fresh_prng);

    gmem::Prng prng(seed);
    nlohmann::json result;
    gmem::ModelParams swapped = params;
    if (init == "smart") {
        gmem::Prng fit_prng = prng.substream(1);
        const gmem::ReadoutSet readout =
            gmem::fit_readout(params, rels, gmem::ReadoutTap::embedding, lambda, split, fit_prng);
        const gmem::SmartInitResult smart = gmem::smart_init(readout, fresh, params);
        swapped = gmem::with_subject_embeddings(params, smart.embeddings);
        result["rank_deficient"] = smart.rank_deficient;
    } else {
        gmem::Prng rnd = prng.substream(2);
        swapped = gmem::with_random_subject_embeddings(params, 0.02, rnd);
    }
    gmem::Prng eval_prng = prng.substream(3);
    const double acc = gmem::eval_accuracy(swapped, fresh_spec, fresh, budget, false, eval_prng);
    result["init"] = init;
    result["zero_shot_accuracy"] = acc;
    result["chance"] = 1.0 / static_cast<double>(params.n_subjects);
    gmem::RunHeader header;
    header.command = "analyze freeze";
    header.config = {{"model", model_path}, {"init", init}, {"new_seed", new_seed}};
    header.seed = seed;
    if (!out_path.empty()) {
        gmem::write_json_report(out_path, header, result);
    }
    std::printf("freeze: %s init zero-shot accuracy %s (chance %s)\n", init.c_str(),
                gmem::format_double(acc).c_str(),
                gmem::format_double(1.0 / static_cast<double>(params.n_subjects)).c_str());
    return kExitOk;
}

int cmd_analyze_capacity(const std::string& config_path, const std::string& out_path,
                         const std::string& csv_path, std::size_t workers) {
    const nlohmann::json doc = gmem::load_json_file(config_path);
    gmem::ConfigView root(doc, "config");
    gmem::CapacityConfig cfg;
    cfg.n_list = root.require<std::vector<std::size_t>>("n_list");
    cfg.r = root.require<std::size_t>("r");
    cfg.threshold = root.require<double>("threshold");
    cfg.d_grid = root.require<std::vector<std::size_t>>("d_grid");
    cfg.seeds = root.get<std::size_t>("seeds", 3);
    cfg.budget = root.get<std::size_t>("budget", 1 << 16);
    cfg.frozen = root.get<bool>("frozen", false);
    const std::string width = root.get<std::string>("width", "4d");
    if (width == "4d") {
        cfg.fixed_width = 0;
    } else {
        try {
            cfg.fixed_width = std::stoul(width);
        } catch (...) {
            throw ConfigError("capacity width must be \"4d\" or a number");
        }
    }
    if (root.has("train")) {
        nlohmann::json merged;
        merged["task"] = {{"n", 2}, {"r", cfg.r}, {"k", 1}, {"seed", 0}};
        merged["model"] = {{"d", 8}};
        merged["train"] = doc.at("train");
        cfg.base = parse_train_config(merged);
    }
    root.child("train");
    cfg.base.task.seed = root.get<std::uint64_t>("task_seed", 0);
    cfg.base.seed = root.get<std::uint64_t>("seed", 0);
    cfg.base.workers = workers;
    root.finish();

    gmem::Prng prng(cfg.base.seed);
    const gmem::CapacityResult result = gmem::capacity_search(cfg, prng);

    gmem::RunHeader header;
    header.command = "analyze capacity";
    header.config = doc;
    header.seed = cfg.base.seed;
    if (!out_path.empty()) {
        gmem::write_json_report(out_path, header, result.to_json());
    }
    if (!csv_path.empty()) {
        gmem::CsvWriter csv(csv_path, header, "n,r,d,seed,metric,value", false);
        for (const auto& probe : result.probes) {
            for (std::size_t s = 0; s < probe.seed_accs.size(); ++s) {
                csv.row(std::to_string(probe.n) + "," + std::to_string(cfg.r) + "," +
                        std::to_string(probe.d) + "," + std::to_string(s) + ",final_acc," +
                        gmem::format_double(probe.seed_accs[s]));
            }
        }
    }
    for (const auto& p : result.points) {
        std::printf("capacity: n=%zu d_min=%zu%s\n", p.n, p.d_min,
                    p.above_grid ? " (above grid)" : "");
    }
    std::printf("capacity: log fit d=%s+%s*log2(N) R2=%s; power fit alpha=%s R2=%s\n",
                gmem::format_double(result.log_a).c_str(),
                gmem::format_double(result.log_b).c_str(),
                gmem::format_double(result.log_r2).c_str(),
                gmem::format_double(result.pow_alpha).c_str(),
                gmem::format_double(result.pow_r2).c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------
int cmd_bounds(std::uint64_t n, std::uint64_t r, std::uint64_t k, double d_bits,
               const std::string& variant, const std::string& out_path) {
    nlohmann::json result;
    auto run = [&](gmem::BoundsVariant v) {
        gmem::BoundsInput in{n, r, k, d_bits, v};
        return gmem::lower_bound(in).to_json();
    };
    if (variant == "theorem" || variant == "both") {
        result["theorem"] = run(gmem::BoundsVariant::theorem);
    }
    if (variant == "proof" || variant == "both") {
        result["proof"] = run(gmem::BoundsVariant::proof);
    }
    gmem::RunHeader header;
    header.command = "bounds";
    header.config = {{"n", n}, {"r", r}, {"k", k}, {"d_bits", d_bits}, {"variant", variant}};
    header.seed = 0;
    if (!out_path.empty()) {
        gmem::write_json_report(out_path, header, result);
    }
    nlohmann::json doc;
    doc["header"] = header.to_json();
    doc["result"] = result;
    std::printf("%s\n", doc.dump(2).c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gmem: constructions, training, and analysis for multi-relation factual recall"};
    app.set_version_flag("--version", std::string(gmem::kVersion));
    app.require_subcommand(1);
    std::size_t workers = 0;
    app.add_option("--workers", workers, "worker threads (0 = $GMEM_WORKERS or hardware)");

    ConstructArgs cargs;
    auto* construct = app.add_subcommand("construct", "build + verify a weight construction");
    construct->add_option("--kind", cargs.kind, "construction kind")->required();
    construct->add_option("--n", cargs.n, "subjects")->required();
    construct->add_option("--r", cargs.r, "relations")->required();
    construct->add_option("--k", cargs.k, "hops (k-hop kinds only)");
    construct->add_option("--seed", cargs.seed, "task + build seed");
    construct->add_option("--beta", cargs.beta, "attention saturation");
    construct->add_option("--tau", cargs.tau, "CoT routing saturation");
    construct->add_option("--budget", cargs.budget, "verification query budget");
    construct->add_option("--mem-cap-bytes", cargs.mem_cap, "memory cap for KV/tree tables");
    construct->add_option("--out", cargs.out, "checkpoint output path");
    construct->add_option("--rels-out", cargs.rels_out, "relations JSON output path");
    construct->add_option("--report", cargs.report_out, "verification report JSON path");

    std::string v_model, v_rels, v_report;
    std::size_t v_k = 1, v_budget = 1 << 20;
    std::uint64_t v_seed = 0;
    bool v_cot = false;
    auto* verify = app.add_subcommand("verify", "verify a checkpoint against relations");
    verify->add_option("--model", v_model)->required();
    verify->add_option("--rels", v_rels)->required();
    verify->add_option("--k", v_k);
    verify->add_option("--budget", v_budget);
    verify->add_flag("--cot", v_cot);
    verify->add_option("--seed", v_seed);
    verify->add_option("--report", v_report);

    std::string t_config, t_rels, t_out, t_metrics, t_rels_out;
    bool t_frozen = false;
    auto* train_cmd = app.add_subcommand("train", "train a single-layer model");
    train_cmd->add_option("--config", t_config)->required();
    train_cmd->add_option("--rels", t_rels, "relations JSON (default: sampled from task seed)");
    train_cmd->add_option("--out", t_out, "checkpoint output");
    train_cmd->add_option("--metrics", t_metrics, "metrics CSV output");
    train_cmd->add_option("--rels-out", t_rels_out, "write the sampled relations");
    train_cmd->add_flag("--frozen", t_frozen, "freeze the input embedding table");

    std::string s_config, s_out;
    auto* sweep = app.add_subcommand("sweep", "train a grid of cells, resumable CSV output");
    sweep->add_option("--config", s_config)->required();
    sweep->add_option("--out", s_out)->required();

    auto* analyze = app.add_subcommand("analyze", "post-training analyses");
    analyze->require_subcommand(1);
    std::string a_model, a_rels, a_tap = "embedding", a_out;
    double a_lambda = 1e-2, a_split = 0.8;
    std::uint64_t a_seed = 0;
    auto* readout = analyze->add_subcommand("readout", "per-relation linear readout");
    readout->add_option("--model", a_model)->required();
    readout->add_option("--rels", a_rels)->required();
    readout->add_option("--tap", a_tap)->check(CLI::IsMember({"embedding", "post-attention"}));
    readout->add_option("--lambda", a_lambda);
    readout->add_option("--split", a_split);
    readout->add_option("--seed", a_seed);
    readout->add_option("--out", a_out);

    std::string i_model, i_rels, i_tap = "embedding", i_out;
    double i_lambda = 1e-2, i_split = 0.8;
    std::size_t i_rank = 0, i_trials = 500;
    std::uint64_t i_seed = 0;
    bool i_rank_sweep = false;
    auto* intervene = analyze->add_subcommand("intervene", "causal intervention selectivity");
    intervene->add_option("--model", i_model)->required();
    intervene->add_option("--rels", i_rels)->required();
    intervene->add_option("--rank", i_rank, "pinv truncation rank (0 = full)");
    intervene->add_flag("--rank-sweep", i_rank_sweep, "sweep rank truncations, report best");
    intervene->add_option("--trials", i_trials);
    intervene->add_option("--tap", i_tap)->check(CLI::IsMember({"embedding", "post-attention"}));
    intervene->add_option("--lambda", i_lambda);
    intervene->add_option("--split", i_split);
    intervene->add_option("--seed", i_seed);
    intervene->add_option("--out", i_out);

    std::string f_model, f_rels, f_init = "smart", f_out;
    std::uint64_t f_new_seed = 1, f_seed = 0;
    double f_lambda = 1e-2, f_split = 0.8;
    std::size_t f_budget = 1 << 20;
    auto* freeze = analyze->add_subcommand("freeze", "freeze-and-swap transfer");
    freeze->add_option("--model", f_model)->required();
    freeze->add_option("--rels", f_rels)->required();
    freeze->add_option("--init", f_init)->check(CLI::IsMember({"smart", "random"}));
    freeze->add_option("--new-seed", f_new_seed, "seed for the fresh bijections");
    freeze->add_option("--lambda", f_lambda);
    freeze->add_option("--split", f_split);
    freeze->add_option("--budget", f_budget);
    freeze->add_option("--seed", f_seed);
    freeze->add_option("--out", f_out);

    std::string c_config, c_out, c_csv;
    auto* capacity = analyze->add_subcommand("capacity", "d_min(N) search with fits");
    capacity->add_option("--config", c_config)->required();
    capacity->add_option("--out", c_out);
    capacity->add_option("--csv", c_csv);

    std::uint64_t b_n = 1024, b_r = 4, b_k = 2;
    double b_d = 16.0;
    std::string b_variant = "both", b_out;
    auto* bounds = app.add_subcommand("bounds", "k-hop lower-bound calculator");
    bounds->add_option("--n", b_n)->required();
    bounds->add_option("--r", b_r)->required();
    bounds->add_option("--k", b_k)->required();
    bounds->add_option("--d-bits", b_d)->required();
    bounds->add_option("--variant", b_variant)->check(CLI::IsMember({"theorem", "proof", "both"}));
    bounds->add_option("--out", b_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help / --version
        }
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*construct) {
            return cmd_construct(cargs);
        }
        if (*verify) {
            return cmd_verify(v_model, v_rels, v_k, v_budget, v_cot, v_seed, v_report);
        }
        if (*train_cmd) {
            return cmd_train(t_config, t_rels, t_out, t_metrics, t_rels_out, t_frozen, workers);
        }
        if (*sweep) {
            return cmd_sweep(s_config, s_out, workers);
        }
        if (*readout) {
            return cmd_analyze_readout(a_model, a_rels, a_tap, a_lambda, a_split, a_seed, a_out);
        }
        if (*intervene) {
            const gmem::ModelParams peek = gmem::load_checkpoint(i_model);
            const std::size_t rank = i_rank == 0 ? std::min(peek.d, peek.embed_out.cols) : i_rank;
            return cmd_analyze_intervene(i_model, i_rels, rank, i_rank_sweep, i_trials, i_tap,
                                         i_lambda, i_split, i_seed, i_out);
        }
        if (*freeze) {
            return cmd_analyze_freeze(f_model, f_rels, f_init, f_new_seed, f_lambda, f_split,
                                      f_budget, f_seed, f_out);
        }
        if (*capacity) {
            return cmd_analyze_capacity(c_config, c_out, c_csv, workers);
        }
        if (*bounds) {
            return cmd_bounds(b_n, b_r, b_k, b_d, b_variant, b_out);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const gmem::ResourceCapError& e) {
        std::fprintf(stderr, "resource cap: %s\n", e.what());
        return kExitResourceCap;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitUsage;
}
