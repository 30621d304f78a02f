#pragma once

// Near-orthogonal +/-1 codebooks (sampled and whole-book rejected against a
// coherence bound) and LSB-first binary index codes. These are the raw
// material of every explicit weight construction.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmem/matrix.hpp"
#include "gmem/prng.hpp"

namespace gmem {

inline std::size_t ceil_log2(std::size_t range) {
    std::size_t bits = 0;
    std::size_t capacity = 1;
    while (capacity < range) {
        capacity <<= 1;
        ++bits;
    }
    return bits;
}

struct CodeBook {
    std::size_t count = 0;
    std::size_t dim = 0;
    Matrix codes;              // count x dim, entries exactly +/-1
    double max_abs_dot = 0.0;  // achieved max |<v_i, v_j>| over i != j

    const double* code(std::size_t i) const { return codes.row(i); }
};

inline std::size_t code_dim(std::size_t count) {
    return std::max<std::size_t>(8, static_cast<std::size_t>(
                                        std::ceil(4.0 * std::log2(static_cast<double>(std::max<std::size_t>(count, 1))))));
}

inline double code_coherence_bound(std::size_t count) {
    return 3.0 * std::log2(static_cast<double>(std::max<std::size_t>(count, 1)));
}

namespace detail {

inline double book_coherence(const Matrix& codes) {
    double worst = 0.0;
    for (std::size_t i = 0; i < codes.rows; ++i) {
        for (std::size_t j = i + 1; j < codes.rows; ++j) {
            double dot = 0.0;
            const double* a = codes.row(i);
            const double* b = codes.row(j);
            for (std::size_t t = 0; t < codes.cols; ++t) {
                dot += a[t] * b[t];
            }
            worst = std::max(worst, std::fabs(dot));
        }
    }
    return worst;
}

}  // namespace detail

// Samples `count` codes of dim max(8, ceil(4 log2 count)), resampling the whole
// book until max |<v_i,v_j>| <= max_abs_dot_bound (default: 3 log2 count).
// A negative bound selects the default.
inline CodeBook sample_codes(std::size_t count, Prng& prng, std::size_t max_retries = 100,
                             double max_abs_dot_bound = -1.0) {
    if (count < 1) {
        throw std::invalid_argument("sample_codes: count must be >= 1");
    }
    const std::size_t dim = code_dim(count);
    const double bound = max_abs_dot_bound < 0.0 ? code_coherence_bound(count) : max_abs_dot_bound;
    double best = 0.0;
    for (std::size_t attempt = 0; attempt < std::max<std::size_t>(max_retries, 1); ++attempt) {
        CodeBook book;
        book.count = count;
        book.dim = dim;
        book.codes = Matrix(count, dim);
        for (double& v : book.codes.data) {
            v = (prng.next_u64() & 1u) ? 1.0 : -1.0;
        }
        book.max_abs_dot = detail::book_coherence(book.codes);
        if (book.max_abs_dot <= bound) {
            return book;
        }
        best = attempt == 0 ? book.max_abs_dot : std::min(best, book.max_abs_dot);
    }
    throw std::runtime_error("sample_codes: retries exhausted for count " + std::to_string(count) +
                             "; best achieved coherence " + std::to_string(best) + " > bound " +
                             std::to_string(bound));
}

// LSB-first binary code, stable across platforms. Width 0 encodes only index 0.
inline std::vector<std::uint8_t> binary_code(std::uint64_t index, std::size_t width) {
    if (width < 64 && index >= (std::uint64_t{1} << width)) {
        throw std::invalid_argument("binary_code: index " + std::to_string(index) +
                                    " does not fit in " + std::to_string(width) + " bits");
    }
    std::vector<std::uint8_t> bits(width);
    for (std::size_t i = 0; i < width; ++i) {
        bits[i] = static_cast<std::uint8_t>((index >> i) & 1u);
    }
    return bits;
}

inline std::uint64_t decode_binary(const std::vector<std::uint8_t>& bits) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) {
            v |= std::uint64_t{1} << i;
        }
    }
    return v;
}

// 0 -> -1, 1 -> +1.
inline std::vector<double> signed_bits(const std::vector<std::uint8_t>& bits) {
    std::vector<double> out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        out[i] = bits[i] ? 1.0 : -1.0;
    }
    return out;
}

inline std::size_t popcount_bits(const std::vector<std::uint8_t>& bits) {
    std::size_t n = 0;
    for (auto b : bits) {
        n += b;
    }
    return n;
}

}  // namespace gmem
