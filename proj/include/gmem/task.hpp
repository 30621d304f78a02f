#pragma once

// The factual-recall data model: R relations as random permutations of [N],
// k-hop prompt enumeration/sampling, and the exact composition oracle every
// model is graded against. Token ids: subjects 0..N-1, relations N..N+R-1.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "gmem/prng.hpp"

namespace gmem {

struct TaskSpec {
    std::size_t n_subjects = 2;
    std::size_t n_relations = 1;
    std::size_t hops = 1;
    std::uint64_t seed = 0;

    std::size_t vocab() const { return n_subjects + n_relations; }

    void validate() const {
        if (n_subjects < 1 || n_relations < 1 || hops < 1) {
            throw std::invalid_argument("TaskSpec: n, r, k must all be positive");
        }
    }
};

class RelationSet {
public:
    RelationSet() = default;
    RelationSet(std::size_t n, std::vector<std::vector<std::uint32_t>> perms)
        : n_(n), perms_(std::move(perms)) {
        validate_and_invert();
    }

    std::size_t n_subjects() const { return n_; }
    std::size_t n_relations() const { return perms_.size(); }

    std::uint32_t apply(std::size_t relation, std::uint32_t subject) const {
        return perms_.at(relation).at(subject);
    }
    std::uint32_t apply_inverse(std::size_t relation, std::uint32_t subject) const {
        return inverses_.at(relation).at(subject);
    }
    const std::vector<std::uint32_t>& permutation(std::size_t relation) const {
        return perms_.at(relation);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n"] = n_;
        j["r"] = perms_.size();
        j["perms"] = perms_;
        return j;
    }

    static RelationSet from_json(const nlohmann::json& j) {
        return RelationSet(j.at("n").get<std::size_t>(),
                           j.at("perms").get<std::vector<std::vector<std::uint32_t>>>());
    }

private:
    void validate_and_invert() {
        inverses_.assign(perms_.size(), std::vector<std::uint32_t>(n_, 0));
        for (std::size_t r = 0; r < perms_.size(); ++r) {
            const auto& perm = perms_[r];
            if (perm.size() != n_) {
                throw std::invalid_argument("RelationSet: permutation " + std::to_string(r) +
                                            " has wrong length");
            }
            std::vector<bool> seen(n_, false);
            for (std::uint32_t s = 0; s < n_; ++s) {
                const std::uint32_t img = perm[s];
                if (img >= n_ || seen[img]) {
                    throw std::invalid_argument("RelationSet: array " + std::to_string(r) +
                                                " is not a permutation");
                }
                seen[img] = true;
                inverses_[r][img] = s;
            }
        }
    }

    std::size_t n_ = 0;
    std::vector<std::vector<std::uint32_t>> perms_;
    std::vector<std::vector<std::uint32_t>> inverses_;
};

// R independent uniform permutations via Fisher-Yates.
inline RelationSet sample_bijections(const TaskSpec& spec, Prng& prng) {
    spec.validate();
    std::vector<std::vector<std::uint32_t>> perms(spec.n_relations);
    for (auto& perm : perms) {
        perm.resize(spec.n_subjects);
        for (std::uint32_t s = 0; s < spec.n_subjects; ++s) {
            perm[s] = s;
        }
        prng.shuffle(perm);
    }
    return RelationSet(spec.n_subjects, std::move(perms));
}

// Applies g_{path[0]} first, g_{path.back()} last.
inline std::uint32_t compose_path(const RelationSet& rels, std::uint32_t s0,
                                  const std::vector<std::uint32_t>& path) {
    if (s0 >= rels.n_subjects()) {
        throw std::out_of_range("compose_path: subject index out of range");
    }
    std::uint32_t s = s0;
    for (std::uint32_t r : path) {
        if (r >= rels.n_relations()) {
            throw std::out_of_range("compose_path: relation index out of range");
        }
        s = rels.apply(r, s);
    }
    return s;
}

struct QueryBatch {
    std::size_t hops = 1;
    std::vector<std::uint32_t> subjects;       // one per prompt
    std::vector<std::uint32_t> paths;          // hops entries per prompt, r_1 first
    std::vector<std::uint32_t> answers;        // oracle compositions
    bool exhaustive = false;

    std::size_t size() const { return subjects.size(); }
    const std::uint32_t* path(std::size_t i) const { return paths.data() + i * hops; }

    std::vector<std::uint32_t> path_vector(std::size_t i) const {
        return std::vector<std::uint32_t>(path(i), path(i) + hops);
    }

    // Prompt token ids for the model: (s0, N + r_1, ..., N + r_k).
    std::vector<std::uint32_t> prompt_tokens(std::size_t i, std::size_t n_subjects) const {
        std::vector<std::uint32_t> toks;
        toks.reserve(hops + 1);
        toks.push_back(subjects[i]);
        for (std::size_t h = 0; h < hops; ++h) {
            toks.push_back(static_cast<std::uint32_t>(n_subjects) + path(i)[h]);
        }
        return toks;
    }
};

namespace detail {

// Sample `budget` distinct indices from [0, total) without materializing the
// space: sparse Fisher-Yates over a lazily indexed array.
inline std::vector<std::uint64_t> sample_without_replacement(std::uint64_t total,
                                                             std::size_t budget, Prng& prng) {
    std::unordered_map<std::uint64_t, std::uint64_t> remap;
    remap.reserve(budget * 2);
    std::vector<std::uint64_t> picks;
    picks.reserve(budget);
    for (std::size_t i = 0; i < budget; ++i) {
        const std::uint64_t limit = total - i;
        const std::uint64_t j = prng.uniform_int(limit);
        auto it = remap.find(j);
        const std::uint64_t value = it == remap.end() ? j : it->second;
        const std::uint64_t last = limit - 1;
        auto lt = remap.find(last);
        remap[j] = lt == remap.end() ? last : lt->second;
        picks.push_back(value);
    }
    return picks;
}

}  // namespace detail

// Exhaustive enumeration of all N * R^k prompts when that count fits the
// budget; otherwise a uniform sample without replacement of exactly `budget`
// distinct prompts. Answers are filled by compose_path.
inline QueryBatch enumerate_queries(const TaskSpec& spec, const RelationSet& rels,
                                    std::size_t budget, Prng& prng) {
    spec.validate();
    if (budget < 1) {
        throw std::invalid_argument("enumerate_queries: budget must be >= 1");
    }
    const std::size_t n = spec.n_subjects;
    const std::size_t r = spec.n_relations;
    const std::size_t k = spec.hops;

    // total = N * R^k with overflow guard; anything >= 2^62 is "huge".
    std::uint64_t total = n;
    bool huge = false;
    for (std::size_t h = 0; h < k; ++h) {
        if (total > (std::uint64_t{1} << 62) / r) {
            huge = true;
            break;
        }
        total *= r;
    }

    QueryBatch batch;
    batch.hops = k;
    const bool exhaustive = !huge && total <= budget;
    batch.exhaustive = exhaustive;
    const std::size_t count = exhaustive ? static_cast<std::size_t>(total) : budget;
    batch.subjects.reserve(count);
    batch.paths.reserve(count * k);
    batch.answers.reserve(count);

    auto emit = [&](std::uint64_t flat) {
        std::uint64_t rest = flat;
        std::vector<std::uint32_t> digits(k);
        for (std::size_t h = k; h-- > 0;) {
            digits[h] = static_cast<std::uint32_t>(rest % r);
            rest /= r;
        }
        const auto s0 = static_cast<std::uint32_t>(rest);
        batch.subjects.push_back(s0);
        for (std::uint32_t d : digits) {
            batch.paths.push_back(d);
        }
        batch.answers.push_back(compose_path(rels, s0, digits));
    };

    if (exhaustive) {
        for (std::uint64_t flat = 0; flat < total; ++flat) {
            emit(flat);
        }
    } else if (!huge && total <= budget * std::uint64_t{4}) {
        // Dense shuffle is cheaper than the sparse map when the space is small.
        std::vector<std::uint64_t> all(static_cast<std::size_t>(total));
        for (std::uint64_t i = 0; i < total; ++i) {
            all[static_cast<std::size_t>(i)] = i;
        }
        prng.shuffle(all);
        for (std::size_t i = 0; i < budget; ++i) {
            emit(all[i]);
        }
    } else {
        if (huge) {
            throw std::invalid_argument(
                "enumerate_queries: query space N*R^k exceeds 2^62; sampling without "
                "replacement over it is out of scope");
        }
        for (std::uint64_t flat : detail::sample_without_replacement(total, budget, prng)) {
            emit(flat);
        }
    }
    return batch;
}

}  // namespace gmem
