#pragma once

// Per-task and aggregate evaluation metrics. All percentages are on a 0..100 scale.

#include "zsoc/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace zsoc {

struct Confusion {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const noexcept { return tp + fp + tn + fn; }

    /// Same predictions with the roles of the two classes exchanged.
    Confusion swapped() const noexcept { return {tn, fn, tp, fp}; }

    friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Builds a confusion from ground truth and predicted labels (1 = positive).
inline Confusion tally(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted) {
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) (predicted[i] ? c.tp : c.fn)++;
        else (predicted[i] ? c.fp : c.tn)++;
    }
    return c;
}

/// F1 of the positive class; a zero denominator yields 0.
inline double f1_positive(const Confusion& c) {
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    return denom == 0.0 ? 0.0 : 100.0 * (2.0 * c.tp) / denom;
}

inline double f1_negative(const Confusion& c) { return f1_positive(c.swapped()); }

inline double macro_f1(const Confusion& c) { return (f1_positive(c) + f1_negative(c)) / 2.0; }

inline double accuracy(const Confusion& c) {
    const auto n = c.total();
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}

struct ErrorRates {
    double fpr = 0.0;
    double fnr = 0.0;
};

inline ErrorRates fpr_fnr(const Confusion& c) {
    if (c.fp + c.tn == 0) throw Error(Errc::undefined_rate, "FPR undefined without actual negatives");
    if (c.fn + c.tp == 0) throw Error(Errc::undefined_rate, "FNR undefined without actual positives");
    return {100.0 * static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn),
            100.0 * static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp)};
}

/// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties count half.
/// Sort-and-sweep in O((n+m) log(n+m)).
inline double auc(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) throw Error(Errc::empty_class, "AUC needs both classes");
    std::vector<double> neg(negatives.begin(), negatives.end());
    std::sort(neg.begin(), neg.end());
    // Count in integer half-units so the result is independent of summation order.
    std::uint64_t half_units = 0;
    for (double p : positives) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(lo, neg.end(), p);
        half_units += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    const double pairs = static_cast<double>(positives.size()) * static_cast<double>(negatives.size());
    return 100.0 * (static_cast<double>(half_units) / 2.0) / pairs;
}

struct Aggregate {
    double mean = 0.0;
    double ci95 = 0.0; // half-width of the normal-approximation 95% interval
    std::size_t n = 0;
};

inline Aggregate aggregate(std::span<const double> values) {
    if (values.empty()) throw Error(Errc::empty_scores, "aggregate of an empty list");
    if (values.size() == 1) {
        warn("aggregate over a single run; confidence interval reported as 0");
        return {values.front(), 0.0, 1};
    }
    const double n = static_cast<double>(values.size());
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
        return {values.front(), 0.0, values.size()};
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, 1.96 * sd / std::sqrt(n), values.size()};
}

} // namespace zsoc
