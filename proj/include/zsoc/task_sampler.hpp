#pragma once

// One-class episode generation: uniform over dataset classes, or hierarchical over a
// taxonomy at a chosen granularity level.

#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace zsoc {

using Rng = std::mt19937_64;

/// Independent generator per task so tasks can be sampled in any order or in parallel.
inline Rng task_rng(std::uint64_t seed, std::uint64_t task_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task_id), static_cast<std::uint32_t>(task_id >> 32)};
    return Rng(seq);
}

/// Uniform integer in [0, n) by rejection; unlike std::uniform_int_distribution the
/// sequence is identical across standard libraries.
inline std::size_t uniform_below(Rng& rng, std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
        const std::uint64_t x = rng();
        if (x < limit) return static_cast<std::size_t>(x % bound);
    }
}

/// `count` distinct elements of `pool` drawn uniformly (partial Fisher-Yates), returned sorted.
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + uniform_below(rng, pool.size() - i)]);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// round(r * n) with halves rounded up.
inline std::size_t positive_count(double r, std::size_t n_queries) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n_queries) + 0.5));
}

struct Task {
    std::uint64_t task_id = 0;
    std::string target_label;
    std::optional<TaxonomyPath> target_node_path;
    std::optional<TaxonomyPath> negative_scope_path; // (level+1)-th ancestor, hierarchical only
    std::optional<std::size_t> level;
    std::vector<std::size_t> positive_indices;
    std::vector<std::size_t> negative_indices;
    double r = 0.5;
    std::size_t n_queries = 0;
};

inline nlohmann::json task_to_json(const Task& task, const EmbeddingSet& set) {
    nlohmann::json pos = nlohmann::json::array(), neg = nlohmann::json::array();
    for (auto i : task.positive_indices) pos.push_back(set.ids[i]);
    for (auto i : task.negative_indices) neg.push_back(set.ids[i]);
    return {{"task_id", task.task_id},
            {"target_label", task.target_label},
            {"level", task.level ? nlohmann::json(*task.level) : nlohmann::json(nullptr)},
            {"positive_ids", pos},
            {"negative_ids", neg},
            {"r", task.r}};
}

inline constexpr int max_sampling_attempts = 100;

namespace detail {
inline void check_ratio(double r, std::size_t n_queries) {
    if (!(r > 0.0 && r < 1.0)) throw Error(Errc::config_invalid, "positive ratio must lie in (0,1)");
    if (n_queries == 0) throw Error(Errc::config_invalid, "n_queries must be positive");
}
} // namespace detail

class UniformSampler {
public:
    UniformSampler(const EmbeddingSet& set, double r, std::size_t n_queries)
        : set_(set), r_(r), n_queries_(n_queries), n_pos_(positive_count(r, n_queries)) {
        detail::check_ratio(r, n_queries);
        labels_ = distinct_labels(set);
        if (labels_.size() < 2) throw Error(Errc::insufficient_data, "uniform sampling needs at least 2 classes");
        std::unordered_map<std::string, std::size_t> slot;
        for (std::size_t i = 0; i < labels_.size(); ++i) slot[labels_[i]] = i;
        rows_by_label_.resize(labels_.size());
        for (std::size_t i = 0; i < set.count(); ++i) rows_by_label_[slot[set.labels[i]]].push_back(i);
    }

    const std::vector<std::string>& labels() const noexcept { return labels_; }

    Task sample(std::uint64_t task_id, Rng& rng) const {
        const std::size_t n_neg = n_queries_ - n_pos_;
        for (int attempt = 0; attempt < max_sampling_attempts; ++attempt) {
            const std::size_t c = uniform_below(rng, labels_.size());
            const auto& pos_pool = rows_by_label_[c];
            if (pos_pool.size() < n_pos_ || set_.count() - pos_pool.size() < n_neg) continue;
            std::vector<std::size_t> neg_pool;
            neg_pool.reserve(set_.count() - pos_pool.size());
            for (std::size_t i = 0; i < set_.count(); ++i)
                if (set_.labels[i] != labels_[c]) neg_pool.push_back(i);
            Task t;
            t.task_id = task_id;
            t.target_label = labels_[c];
            t.r = r_;
            t.n_queries = n_queries_;
            t.positive_indices = sample_without_replacement(pos_pool, n_pos_, rng);
            t.negative_indices = sample_without_replacement(std::move(neg_pool), n_neg, rng);
            return t;
        }
        throw Error(Errc::insufficient_data, "no class with enough images after " +
                                                 std::to_string(max_sampling_attempts) + " attempts");
    }

private:
    const EmbeddingSet& set_;
    double r_;
    std::size_t n_queries_;
    std::size_t n_pos_;
    std::vector<std::string> labels_;
    std::vector<std::vector<std::size_t>> rows_by_label_;
};

inline Task uniform_task(const EmbeddingSet& set, double r, std::size_t n_queries, Rng& rng, std::uint64_t task_id = 0) {
    return UniformSampler(set, r, n_queries).sample(task_id, rng);
}

class HierarchicalSampler {
public:
    HierarchicalSampler(const EmbeddingSet& set, const Taxonomy& taxonomy, std::size_t level, double r,
                        std::size_t n_queries)
        : set_(set), taxonomy_(taxonomy), level_(level), r_(r), n_queries_(n_queries),
          n_pos_(positive_count(r, n_queries)) {
        detail::check_ratio(r, n_queries);
        if (!set.taxonomy_paths) throw Error(Errc::config_invalid, "hierarchical sampling needs taxonomy paths");
        row_chain_.reserve(set.count());
        for (std::size_t i = 0; i < set.count(); ++i) {
            const auto leaf = taxonomy.find((*set.taxonomy_paths)[i]);
            if (!leaf || !taxonomy.is_leaf(*leaf))
                throw Error(Errc::invariant_violation, "row '" + set.ids[i] + "' is not at a taxonomy leaf");
            std::vector<std::size_t> chain; // chain[d] = ancestor at depth d
            for (std::optional<std::size_t> n = *leaf; n; n = taxonomy.node(*n).parent) chain.push_back(*n);
            std::reverse(chain.begin(), chain.end());
            row_chain_.push_back(std::move(chain));
        }
        for (auto leaf : taxonomy.leaves())
            if (taxonomy.node(leaf).depth >= level + 1) eligible_leaves_.push_back(leaf);
        if (eligible_leaves_.empty())
            throw Error(Errc::level_too_deep, "no leaf has a (level+1)-th ancestor at level " + std::to_string(level));
    }

    const std::vector<std::size_t>& eligible_leaves() const noexcept { return eligible_leaves_; }

    std::size_t draw_leaf(Rng& rng) const { return eligible_leaves_[uniform_below(rng, eligible_leaves_.size())]; }

    Task sample(std::uint64_t task_id, Rng& rng) const {
        const std::size_t n_neg = n_queries_ - n_pos_;
        for (int attempt = 0; attempt < max_sampling_attempts; ++attempt) {
            const auto leaf = draw_leaf(rng);
            const auto target = *taxonomy_.ancestor(leaf, level_);
            const auto scope = *taxonomy_.ancestor(leaf, level_ + 1);
            const auto target_depth = taxonomy_.node(target).depth;
            const auto scope_depth = taxonomy_.node(scope).depth;
            std::vector<std::size_t> pos_pool, neg_pool;
            for (std::size_t i = 0; i < row_chain_.size(); ++i) {
                const auto& chain = row_chain_[i];
                if (chain.size() > target_depth && chain[target_depth] == target) pos_pool.push_back(i);
                else if (chain.size() > scope_depth && chain[scope_depth] == scope) neg_pool.push_back(i);
            }
            if (pos_pool.size() < n_pos_ || neg_pool.size() < n_neg) continue;
            Task t;
            t.task_id = task_id;
            t.target_label = taxonomy_.node(target).name;
            t.target_node_path = taxonomy_.path_of(target);
            t.negative_scope_path = taxonomy_.path_of(scope);
            t.level = level_;
            t.r = r_;
            t.n_queries = n_queries_;
            t.positive_indices = sample_without_replacement(std::move(pos_pool), n_pos_, rng);
            t.negative_indices = sample_without_replacement(std::move(neg_pool), n_neg, rng);
            return t;
        }
        throw Error(Errc::insufficient_data, "no leaf with enough images at level " + std::to_string(level_) +
                                                 " after " + std::to_string(max_sampling_attempts) + " attempts");
    }

private:
    const EmbeddingSet& set_;
    const Taxonomy& taxonomy_;
    std::size_t level_;
    double r_;
    std::size_t n_queries_;
    std::size_t n_pos_;
    std::vector<std::vector<std::size_t>> row_chain_;
    std::vector<std::size_t> eligible_leaves_;
};

inline Task hierarchical_task(const EmbeddingSet& set, const Taxonomy& taxonomy, std::size_t level, double r,
                              std::size_t n_queries, Rng& rng, std::uint64_t task_id = 0) {
    return HierarchicalSampler(set, taxonomy, level, r, n_queries).sample(task_id, rng);
}

/// Shannon entropy (bits) of the node reached by going `level` steps up from a uniformly drawn leaf.
/// Leaves shallower than `level` do not take part.
inline double sampling_entropy(const Taxonomy& taxonomy, std::size_t level) {
    std::map<std::size_t, std::size_t> counts;
    std::size_t total = 0;
    for (auto leaf : taxonomy.leaves()) {
        if (auto a = taxonomy.ancestor(leaf, level)) {
            ++counts[*a];
            ++total;
        }
    }
    if (total == 0) throw Error(Errc::level_too_deep, "no leaf reaches level " + std::to_string(level));
    double h = 0.0;
    for (const auto& [node, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h == 0.0 ? 0.0 : h; // avoid -0.0
}

} // namespace zsoc
