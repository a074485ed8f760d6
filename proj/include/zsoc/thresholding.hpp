#pragma once

// One-class decision rule with fixed, max-negative, mean-negative and blended thresholds.

#include "zsoc/error.hpp"
#include "zsoc/similarity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace zsoc {

enum class Method { ft, mnp, anp, mnp_ft, anp_ft };

inline std::string_view method_name(Method m) {
    switch (m) {
    case Method::ft: return "ft";
    case Method::mnp: return "mnp";
    case Method::anp: return "anp";
    case Method::mnp_ft: return "mnp+ft";
    case Method::anp_ft: return "anp+ft";
    }
    return "?";
}

inline Method parse_method(std::string_view text) {
    std::string s;
    for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    std::replace(s.begin(), s.end(), '_', '+');
    for (Method m : {Method::ft, Method::mnp, Method::anp, Method::mnp_ft, Method::anp_ft})
        if (method_name(m) == s) return m;
    throw Error(Errc::config_invalid, "unknown method '" + std::string(text) + "'");
}

inline bool uses_negatives(Method m) { return m != Method::ft; }
inline bool uses_fixed(Method m) { return m == Method::ft || m == Method::mnp_ft || m == Method::anp_ft; }
inline bool uses_max_negative(Method m) { return m == Method::mnp || m == Method::mnp_ft; }

struct ClassifierSpec {
    Method method = Method::anp_ft;
    double alpha = 0.5;
    double lambda_bar = 0.0;
    std::size_t k = 10;
    bool normalize_before_average = false;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw Error(Errc::alpha_out_of_range, "alpha " + std::to_string(alpha) + " not in [0,1]");
        if (uses_fixed(method) && !std::isfinite(lambda_bar))
            throw Error(Errc::invalid_spec, "fixed threshold must be finite");
        if (k == 0) throw Error(Errc::invalid_spec, "k must be at least 1");
    }
};

struct Decision {
    int label = 0;
    double score = 0.0;
    double threshold = 0.0;
};

namespace detail {
inline void check_negatives(std::span<const std::span<const float>> negatives, std::size_t dim) {
    if (negatives.empty()) throw Error(Errc::empty_negatives, "no negative prototypes");
    for (const auto& n : negatives)
        if (n.size() != dim) throw Error(Errc::dimension_mismatch, "negative prototype dimension differs");
}
} // namespace detail

/// Max cosine between the query and each negative prototype.
inline double mnp_threshold(std::span<const float> query, std::span<const std::span<const float>> negatives) {
    detail::check_negatives(negatives, query.size());
    double best = cosine(query, negatives.front());
    for (std::size_t i = 1; i < negatives.size(); ++i) best = std::max(best, cosine(query, negatives[i]));
    return best;
}

/// Componentwise mean of the negative prototypes, in double.
inline std::vector<double> anp_prototype(std::span<const std::span<const float>> negatives,
                                         bool normalize_before_average = false) {
    if (negatives.empty()) throw Error(Errc::empty_negatives, "no negative prototypes");
    const std::size_t dim = negatives.front().size();
    detail::check_negatives(negatives, dim);
    std::vector<double> mean(dim, 0.0);
    for (const auto& n : negatives) {
        double scale = 1.0;
        if (normalize_before_average) {
            double sq = 0.0;
            for (float x : n) sq += double{x} * double{x};
            if (!(sq > 0.0)) throw Error(Errc::zero_norm_vector, "negative prototype has zero norm");
            scale = 1.0 / std::sqrt(sq);
        }
        for (std::size_t i = 0; i < dim; ++i) mean[i] += double{n[i]} * scale;
    }
    const double k = static_cast<double>(negatives.size());
    double sq = 0.0;
    for (auto& m : mean) {
        m /= k;
        sq += m * m;
    }
    if (!(sq > 0.0)) throw Error(Errc::zero_norm_mean, "negative prototypes cancel to a zero mean");
    return mean;
}

inline double anp_threshold(std::span<const float> query, std::span<const std::span<const float>> negatives,
                            bool normalize_before_average = false) {
    detail::check_negatives(negatives, query.size());
    const auto mean = anp_prototype(negatives, normalize_before_average);
    return cosine(query, std::span<const double>(mean));
}

inline double combined_threshold(double adaptive, double lambda_bar, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw Error(Errc::alpha_out_of_range, "alpha " + std::to_string(alpha) + " not in [0,1]");
    return alpha * adaptive + (1.0 - alpha) * lambda_bar;
}

/// Sigmoid acceptance probability of a score against its threshold.
inline double acceptance_probability(double score, double threshold, double temperature) {
    if (!(temperature > 0.0)) throw Error(Errc::nonpositive_temperature, "temperature must be positive");
    return 1.0 / (1.0 + std::exp(-(score - threshold) / temperature));
}

inline bool same_label_ci(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

/// Target and negative prototypes resolved for one task. Immutable once built, so
/// queries of a task can be classified concurrently.
class TaskClassifier {
public:
    TaskClassifier(ClassifierSpec spec, std::span<const float> target, std::vector<std::span<const float>> negatives)
        : spec_(spec), target_(target), negatives_(std::move(negatives)) {
        spec_.validate();
        if (uses_negatives(spec_.method)) {
            detail::check_negatives(negatives_, target_.size());
            if (!uses_max_negative(spec_.method))
                mean_negative_ = anp_prototype(negatives_, spec_.normalize_before_average);
        }
    }

    const ClassifierSpec& spec() const noexcept { return spec_; }

    double threshold(std::span<const float> query) const {
        double adaptive = 0.0;
        switch (spec_.method) {
        case Method::ft: return spec_.lambda_bar;
        case Method::mnp:
        case Method::mnp_ft: adaptive = mnp_threshold(query, negatives_); break;
        case Method::anp:
        case Method::anp_ft: adaptive = cosine(query, std::span<const double>(*mean_negative_)); break;
        }
        if (spec_.method == Method::mnp || spec_.method == Method::anp) return adaptive;
        return combined_threshold(adaptive, spec_.lambda_bar, spec_.alpha);
    }

    Decision classify(std::span<const float> query) const {
        Decision d;
        d.score = cosine(query, target_);
        d.threshold = threshold(query);
        d.label = d.score >= d.threshold ? 1 : 0;
        return d;
    }

private:
    ClassifierSpec spec_;
    std::span<const float> target_;
    std::vector<std::span<const float>> negatives_;
    std::optional<std::vector<double>> mean_negative_;
};

/// Single-query convenience; builds a TaskClassifier each call.
inline Decision classify(std::span<const float> query, std::span<const float> target_prototype,
                         const ClassifierSpec& spec, std::vector<std::span<const float>> negatives = {}) {
    return TaskClassifier(spec, target_prototype, std::move(negatives)).classify(query);
}

} // namespace zsoc
