#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "memfuse/common.hpp"

namespace memfuse {

// 1-based fractional ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });

    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // positions i..j, 1-based
        for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

namespace detail {

inline void require_same_length(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        raise(errc::length_mismatch,
              "vectors of length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

}  // namespace detail

// Pearson correlation; either side constant -> 0 by convention.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a, b);
    const size_t n = a.size();
    if (n < 2) raise(errc::batch_too_small, "pearson needs n >= 2");

    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);

    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// Spearman rank correlation: Pearson of average ranks. All-constant input -> 0.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a, b);
    if (a.size() < 2) raise(errc::batch_too_small, "spearman needs n >= 2");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

inline double rmse(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a, b);
    if (a.empty()) raise(errc::batch_too_small, "rmse needs n >= 1");
    double ss = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(a.size()));
}

inline double mean_absolute_error(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a, b);
    if (a.empty()) raise(errc::batch_too_small, "mae needs n >= 1");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace memfuse
