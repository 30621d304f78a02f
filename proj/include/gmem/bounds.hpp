#pragma once

// Closed-form evaluator for the k-hop information-theoretic lower bound:
//   p = floor(N / (2 R^{2k}))
//   B_global = (R-1) N log2(N/e) - N D
//   B_local  = p [ M (log2 N - 1) - D ],  M = R^k (theorem) or R^{2k} (proof)
//   W >= max(B_global, B_local) - R D, clamped at zero.
// The theorem-vs-proof exponent mismatch in B_local is exposed as a variant
// rather than resolved.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace gmem {

enum class BoundsVariant { theorem, proof };

inline const char* to_string(BoundsVariant v) {
    return v == BoundsVariant::theorem ? "theorem" : "proof";
}

struct BoundsInput {
    std::uint64_t n = 2;
    std::uint64_t r = 2;
    std::uint64_t k = 2;
    double d_bits = 0.0;
    BoundsVariant variant = BoundsVariant::theorem;
};

struct BoundsOutput {
    std::uint64_t p = 0;
    double b_global = 0.0;
    double b_local = 0.0;
    double w_lower = 0.0;
    std::string regime;

    nlohmann::json to_json() const {
        return {{"p", p},
                {"b_global", b_global},
                {"b_local", b_local},
                {"w_lower", w_lower},
                {"regime", regime}};
    }
};

namespace bdetail {

// R^e, saturating at `cap` (returns cap+1 when the power exceeds it).
inline std::uint64_t pow_saturating(std::uint64_t base, std::uint64_t exp, std::uint64_t cap) {
    std::uint64_t value = 1;
    for (std::uint64_t i = 0; i < exp; ++i) {
        if (value > cap / base) {
            return cap + 1;
        }
        value *= base;
    }
    return value;
}

}  // namespace bdetail

inline BoundsOutput lower_bound(const BoundsInput& in) {
    if (in.r < 2 || in.k < 2) {
        throw std::invalid_argument("lower_bound: theorem hypothesis needs R >= 2 and k >= 2");
    }
    if (in.n < 1 || in.d_bits < 0.0 || !std::isfinite(in.d_bits)) {
        throw std::invalid_argument("lower_bound: need N >= 1 and finite D >= 0");
    }
    const double n = static_cast<double>(in.n);
    const double r = static_cast<double>(in.r);
    const double d = in.d_bits;

    BoundsOutput out;
    // p = floor(N / (2 R^{2k})); R^{2k} beyond N makes it zero, so saturate.
    const std::uint64_t r2k = bdetail::pow_saturating(in.r, 2 * in.k, in.n);
    out.p = r2k > in.n ? 0 : in.n / (2 * r2k);

    const double log2_n_over_e = std::log2(n) - 1.4426950408889634074;  // log2(e)
    out.b_global = (r - 1.0) * n * log2_n_over_e - n * d;

    if (out.p == 0) {
        out.b_local = 0.0;
    } else {
        // p >= 1 implies R^{2k} <= N, so both exponent variants fit exactly.
        const std::uint64_t m = in.variant == BoundsVariant::theorem
                                    ? bdetail::pow_saturating(in.r, in.k, in.n)
                                    : r2k;
        out.b_local = static_cast<double>(out.p) *
                      (static_cast<double>(m) * (std::log2(n) - 1.0) - d);
    }

    out.w_lower = std::max(0.0, std::max(out.b_global, out.b_local) - r * d);

    const double rk = std::pow(r, static_cast<double>(in.k));
    if (d < r) {
        out.regime = "D<R";
    } else if (d > rk) {
        out.regime = "D>R^k";
    } else {
        out.regime = "R<=D<=R^k";
    }
    return out;
}

}  // namespace gmem
