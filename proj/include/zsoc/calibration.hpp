#pragma once

// Transferred fixed threshold: grid search for the single global threshold that
// maximizes mean macro F1 over sampled one-class tasks of a labeled calibration set.

#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"
#include "zsoc/metrics.hpp"
#include "zsoc/parallel.hpp"
#include "zsoc/similarity.hpp"
#include "zsoc/task_sampler.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace zsoc {

enum class CalibrationMode {
    global_argmax,       // one threshold maximizing mean macro F1 over all tasks
    mean_of_task_optima, // average of each task's own best grid threshold
};

inline std::string_view calibration_mode_name(CalibrationMode m) {
    return m == CalibrationMode::global_argmax ? "global-argmax" : "mean-of-task-optima";
}

inline CalibrationMode parse_calibration_mode(std::string_view s) {
    if (s == "global-argmax") return CalibrationMode::global_argmax;
    if (s == "mean-of-task-optima") return CalibrationMode::mean_of_task_optima;
    throw Error(Errc::config_invalid, "unknown calibration mode '" + std::string(s) + "'");
}

/// Target-prototype scores and ground truth of one task's queries.
struct TaskScores {
    std::vector<double> scores;
    std::vector<std::uint8_t> truth;
};

struct CalibrationResult {
    double lambda_bar = 0.0;
    std::vector<double> grid;
    std::vector<double> per_candidate_f1;
    std::size_t n_tasks = 0;
    std::uint64_t seed = 0;
    CalibrationMode mode = CalibrationMode::global_argmax;
};

/// n evenly spaced values from min(scores) to max(scores), both inclusive.
inline std::vector<double> build_grid(std::span<const double> scores, std::size_t n_candidates) {
    if (scores.empty()) throw Error(Errc::empty_scores, "cannot build a grid without scores");
    if (n_candidates < 2) throw Error(Errc::config_invalid, "grid needs at least 2 candidates");
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it, hi = *hi_it;
    if (lo == hi) warn("all calibration scores are equal; grid is degenerate");
    std::vector<double> grid(n_candidates);
    const double step = (hi - lo) / static_cast<double>(n_candidates - 1);
    for (std::size_t i = 0; i < n_candidates; ++i) grid[i] = lo + step * static_cast<double>(i);
    grid.back() = hi;
    return grid;
}

inline double task_macro_f1_at(const TaskScores& task, double threshold) {
    Confusion c;
    for (std::size_t q = 0; q < task.scores.size(); ++q) {
        const bool accept = task.scores[q] >= threshold;
        if (task.truth[q]) (accept ? c.tp : c.fn)++;
        else (accept ? c.fp : c.tn)++;
    }
    return macro_f1(c);
}

/// Mean F1 values closer than this count as tied, so rounding noise between equal
/// means cannot override the smaller-threshold preference.
inline constexpr double f1_tie_tolerance = 1e-9;

/// Grid search over precomputed task scores. Ties go to the smaller threshold.
inline CalibrationResult calibrate_from_scores(std::span<const TaskScores> tasks, std::size_t grid_size,
                                               CalibrationMode mode = CalibrationMode::global_argmax,
                                               std::size_t workers = 1) {
    if (tasks.empty()) throw Error(Errc::empty_scores, "no calibration tasks");
    std::vector<double> all;
    for (const auto& t : tasks) all.insert(all.end(), t.scores.begin(), t.scores.end());

    CalibrationResult result;
    result.mode = mode;
    result.n_tasks = tasks.size();
    result.grid = build_grid(all, grid_size);
    result.per_candidate_f1.assign(result.grid.size(), 0.0);

    // per_task_f1[g * T + t]
    const std::size_t n_tasks = tasks.size();
    std::vector<double> per_task_f1(result.grid.size() * n_tasks);
    parallel_for(result.grid.size(), workers, [&](std::size_t g) {
        double sum = 0.0;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            const double f1 = task_macro_f1_at(tasks[t], result.grid[g]);
            per_task_f1[g * n_tasks + t] = f1;
            sum += f1;
        }
        result.per_candidate_f1[g] = sum / static_cast<double>(n_tasks);
    });

    // First index whose value is within tolerance of the maximum.
    auto first_best = [&](auto&& value) {
        double top = value(0);
        for (std::size_t g = 1; g < result.grid.size(); ++g) top = std::max(top, value(g));
        std::size_t g = 0;
        while (value(g) < top - f1_tie_tolerance) ++g;
        return g;
    };
    const std::size_t best = first_best([&](std::size_t g) { return result.per_candidate_f1[g]; });

    if (mode == CalibrationMode::global_argmax) {
        result.lambda_bar = result.grid[best];
    } else {
        double sum = 0.0;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            sum += result.grid[first_best([&](std::size_t g) { return per_task_f1[g * n_tasks + t]; })];
        }
        result.lambda_bar = sum / static_cast<double>(n_tasks);
    }
    return result;
}

struct CalibrationConfig {
    std::size_t n_tasks = 1000;
    std::size_t queries_per_task = 100;
    double r = 0.5;
    std::size_t grid_size = 500;
    std::uint64_t seed = 0;
    CalibrationMode mode = CalibrationMode::global_argmax;
    std::size_t workers = 1;
};

/// Samples uniform tasks from `images`, scores queries against their class prototype
/// in `prototypes`, and grid-searches the threshold.
inline CalibrationResult calibrate_fixed_threshold(const EmbeddingSet& images, const EmbeddingSet& prototypes,
                                                   const CalibrationConfig& cfg) {
    if (cfg.n_tasks == 0) throw Error(Errc::config_invalid, "n_tasks must be at least 1");
    if (distinct_labels(images).size() < 2)
        throw Error(Errc::insufficient_classes, "calibration set needs at least 2 classes");
    if (images.dim != prototypes.dim) throw Error(Errc::dimension_mismatch, "image and text dims differ");

    std::optional<UniformSampler> sampler;
    try {
        sampler.emplace(images, cfg.r, cfg.queries_per_task);
    } catch (const Error& e) {
        if (e.code() == Errc::insufficient_data) throw Error(Errc::insufficient_classes, e.what());
        throw;
    }
    const PrototypeTable table(prototypes);

    std::vector<TaskScores> tasks(cfg.n_tasks);
    parallel_for(cfg.n_tasks, cfg.workers, [&](std::size_t i) {
        auto rng = task_rng(cfg.seed, i);
        Task task;
        try {
            task = sampler->sample(i, rng);
        } catch (const Error& e) {
            if (e.code() == Errc::insufficient_data) throw Error(Errc::insufficient_images, e.what());
            throw;
        }
        const auto target = table.at(task.target_label);
        auto& ts = tasks[i];
        for (auto idx : task.positive_indices) {
            ts.scores.push_back(cosine(images.row(idx), target));
            ts.truth.push_back(1);
        }
        for (auto idx : task.negative_indices) {
            ts.scores.push_back(cosine(images.row(idx), target));
            ts.truth.push_back(0);
        }
    });

    auto result = calibrate_from_scores(tasks, cfg.grid_size, cfg.mode, cfg.workers);
    result.seed = cfg.seed;
    return result;
}

inline nlohmann::json calibration_to_json(const CalibrationResult& r) {
    return {{"lambda_bar", r.lambda_bar}, {"grid", r.grid},   {"per_candidate_f1", r.per_candidate_f1},
            {"n_tasks", r.n_tasks},       {"seed", r.seed},   {"mode", calibration_mode_name(r.mode)}};
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
    try {
        CalibrationResult r;
        r.lambda_bar = j.at("lambda_bar").get<double>();
        r.grid = j.value("grid", std::vector<double>{});
        r.per_candidate_f1 = j.value("per_candidate_f1", std::vector<double>{});
        r.n_tasks = j.value("n_tasks", std::size_t{0});
        r.seed = j.value("seed", std::uint64_t{0});
        r.mode = parse_calibration_mode(j.value("mode", "global-argmax"));
        if (r.grid.size() != r.per_candidate_f1.size())
            throw Error(Errc::parse_error, "grid and per_candidate_f1 differ in length");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, e.what());
    }
}

inline CalibrationResult load_calibration(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    try {
        return calibration_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
}

inline void save_calibration(const CalibrationResult& r, const std::filesystem::path& path) {
    write_file_atomic(path, calibration_to_json(r).dump(2) + "\n");
}

} // namespace zsoc
