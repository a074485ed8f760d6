#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zsoc/calibration.hpp"

#include <random>

using namespace zsoc;

namespace {

TaskScores task(std::vector<double> pos, std::vector<double> neg) {
    TaskScores t;
    for (double s : pos) {
        t.scores.push_back(s);
        t.truth.push_back(1);
    }
    for (double s : neg) {
        t.scores.push_back(s);
        t.truth.push_back(0);
    }
    return t;
}

std::vector<TaskScores> random_tasks(std::mt19937_64& rng, std::size_t n_tasks, std::size_t queries) {
    std::normal_distribution<double> pos(0.3, 0.05), neg(0.2, 0.05);
    std::vector<TaskScores> tasks;
    for (std::size_t t = 0; t < n_tasks; ++t) {
        std::vector<double> p, n;
        for (std::size_t q = 0; q < queries / 2; ++q) p.push_back(std::round(pos(rng) * 200) / 200);
        for (std::size_t q = queries / 2; q < queries; ++q) n.push_back(std::round(neg(rng) * 200) / 200);
        tasks.push_back(task(p, n));
    }
    return tasks;
}

// Straightforward reference: recompute the grid, score every candidate, keep the first maximum.
double brute_force_lambda(const std::vector<TaskScores>& tasks, std::size_t grid_size) {
    std::vector<double> all;
    for (const auto& t : tasks) all.insert(all.end(), t.scores.begin(), t.scores.end());
    const double lo = *std::min_element(all.begin(), all.end());
    const double hi = *std::max_element(all.begin(), all.end());
    double best_f1 = -1.0, best = lo;
    for (std::size_t g = 0; g < grid_size; ++g) {
        const double thr = g + 1 == grid_size ? hi : lo + (hi - lo) / static_cast<double>(grid_size - 1) * static_cast<double>(g);
        double sum = 0.0;
        for (const auto& t : tasks) {
            std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
            for (std::size_t q = 0; q < t.scores.size(); ++q) {
                const bool acc = t.scores[q] >= thr;
                if (t.truth[q]) acc ? ++tp : ++fn;
                else acc ? ++fp : ++tn;
            }
            const double fpos = 2 * tp + fp + fn ? 200.0 * tp / (2 * tp + fp + fn) : 0.0;
            const double fneg = 2 * tn + fn + fp ? 200.0 * tn / (2 * tn + fn + fp) : 0.0;
            sum += (fpos + fneg) / 2;
        }
        const double mean = sum / static_cast<double>(tasks.size());
        if (mean > best_f1 + 1e-9) {
            best_f1 = mean;
            best = thr;
        }
    }
    return best;
}

} // namespace

TEST(Grid, EvenlySpacedInclusive) {
    const std::vector<double> s{0.0, 1.0, 0.4};
    EXPECT_EQ(build_grid(s, 3), (std::vector<double>{0.0, 0.5, 1.0}));
    const auto g = build_grid(s, 500);
    EXPECT_EQ(g.size(), 500u);
    EXPECT_EQ(g.front(), 0.0);
    EXPECT_EQ(g.back(), 1.0);
}

TEST(Grid, ConstantScoresAndErrors) {
    set_warnings_enabled(false);
    const std::vector<double> s{0.3, 0.3};
    EXPECT_EQ(build_grid(s, 4), (std::vector<double>{0.3, 0.3, 0.3, 0.3}));
    set_warnings_enabled(true);
    EXPECT_THROW(build_grid(std::vector<double>{}, 4), Error);
    EXPECT_THROW(build_grid(s, 1), Error);
}

TEST(Calibrate, SeparableTasksReachPerfectF1) {
    const std::vector<TaskScores> tasks{task({0.8, 0.9}, {0.1, 0.2}), task({0.85, 0.8}, {0.15, 0.2})};
    const auto r = calibrate_from_scores(tasks, 9); // grid 0.1, 0.2, ..., 0.9
    EXPECT_NEAR(r.lambda_bar, 0.3, 1e-12);
    EXPECT_GT(r.lambda_bar, 0.2);
    EXPECT_LE(r.lambda_bar, 0.8);
    EXPECT_EQ(*std::max_element(r.per_candidate_f1.begin(), r.per_candidate_f1.end()), 100.0);
    EXPECT_EQ(r.n_tasks, 2u);
}

TEST(Calibrate, TiesGoToSmallerThreshold) {
    // Every grid point in (0.2, 0.8] separates the classes perfectly; the first one wins.
    const std::vector<TaskScores> tasks{task({0.8}, {0.2})};
    const auto r = calibrate_from_scores(tasks, 7);
    EXPECT_EQ(r.lambda_bar, r.grid[1]);
}

TEST(Calibrate, MatchesBruteForce) {
    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 30; ++rep) {
        const auto tasks = random_tasks(rng, 1 + rng() % 20, 10);
        const std::size_t grid = 2 + rng() % 499;
        EXPECT_EQ(calibrate_from_scores(tasks, grid).lambda_bar, brute_force_lambda(tasks, grid));
    }
}

TEST(Calibrate, FinerGridNeverScoresWorse) {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 20; ++rep) {
        const auto tasks = random_tasks(rng, 10, 20);
        // A grid of 2n-1 points contains every point of the n-point grid.
        const std::size_t n = 20 + rng() % 100;
        const auto coarse = calibrate_from_scores(tasks, n);
        const auto fine = calibrate_from_scores(tasks, 2 * n - 1);
        EXPECT_GE(*std::max_element(fine.per_candidate_f1.begin(), fine.per_candidate_f1.end()),
                  *std::max_element(coarse.per_candidate_f1.begin(), coarse.per_candidate_f1.end()) - 1e-9);
    }
}

TEST(Calibrate, WorkerCountDoesNotMatter) {
    std::mt19937_64 rng(47);
    const auto tasks = random_tasks(rng, 30, 20);
    const auto a = calibrate_from_scores(tasks, 200, CalibrationMode::global_argmax, 1);
    const auto b = calibrate_from_scores(tasks, 200, CalibrationMode::global_argmax, 4);
    EXPECT_EQ(a.lambda_bar, b.lambda_bar);
    EXPECT_EQ(a.per_candidate_f1, b.per_candidate_f1);
}

TEST(Calibrate, MeanOfTaskOptima) {
    // Task 1 is first perfect at 0.4, task 2 at 0.8.
    const std::vector<TaskScores> tasks{task({0.4}, {0.2}), task({1.0}, {0.7})};
    const auto r = calibrate_from_scores(tasks, 5, CalibrationMode::mean_of_task_optima); // 0.2 0.4 0.6 0.8 1.0
    EXPECT_NEAR(r.lambda_bar, (0.4 + 0.8) / 2, 1e-12);
    EXPECT_EQ(r.mode, CalibrationMode::mean_of_task_optima);
}

TEST(Calibrate, EndToEndOnEmbeddings) {
    // Two classes on orthogonal axes with small noise: any threshold between the clusters is perfect.
    std::mt19937_64 rng(53);
    std::normal_distribution<float> noise(0.0f, 0.05f);
    std::vector<std::vector<float>> rows;
    std::vector<std::string> labels;
    for (int i = 0; i < 60; ++i) {
        const bool a = i % 2 == 0;
        rows.push_back({(a ? 1.0f : 0.0f) + noise(rng), (a ? 0.0f : 1.0f) + noise(rng)});
        labels.push_back(a ? "a" : "b");
    }
    const auto images = zsoc::testing::make_set(EmbeddingKind::image, 2, rows, labels);
    const auto protos = zsoc::testing::make_text_set(2, {{1, 0}, {0, 1}}, {"a", "b"});
    CalibrationConfig cfg;
    cfg.n_tasks = 50;
    cfg.queries_per_task = 20;
    cfg.grid_size = 100;
    cfg.seed = 3;
    const auto r = calibrate_fixed_threshold(images, protos, cfg);
    EXPECT_EQ(r.seed, 3u);
    EXPECT_EQ(*std::max_element(r.per_candidate_f1.begin(), r.per_candidate_f1.end()), 100.0);
    EXPECT_GT(r.lambda_bar, 0.0);
    EXPECT_LT(r.lambda_bar, 0.9);

    cfg.workers = 3;
    EXPECT_EQ(calibrate_fixed_threshold(images, protos, cfg).lambda_bar, r.lambda_bar);
}

TEST(Calibrate, InputErrors) {
    const auto one = zsoc::testing::make_set(EmbeddingKind::image, 2, {{1, 0}, {1, 0.1f}}, {"a", "a"});
    const auto protos = zsoc::testing::make_text_set(2, {{1, 0}, {0, 1}}, {"a", "b"});
    CalibrationConfig cfg;
    try {
        calibrate_fixed_threshold(one, protos, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::insufficient_classes);
    }
    const auto few = zsoc::testing::make_set(EmbeddingKind::image, 2, {{1, 0}, {0, 1}}, {"a", "b"});
    try {
        calibrate_fixed_threshold(few, protos, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::insufficient_images);
    }
}

TEST(Calibrate, JsonRoundTrip) {
    const std::vector<TaskScores> tasks{task({0.8, 0.9}, {0.1, 0.2})};
    auto r = calibrate_from_scores(tasks, 9);
    r.seed = 99;
    const auto dir = zsoc::testing::temp_dir("calib");
    save_calibration(r, dir / "c.json");
    const auto back = load_calibration(dir / "c.json");
    EXPECT_EQ(back.lambda_bar, r.lambda_bar);
    EXPECT_EQ(back.grid, r.grid);
    EXPECT_EQ(back.per_candidate_f1, r.per_candidate_f1);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.n_tasks, 1u);
    EXPECT_THROW(calibration_from_json(nlohmann::json::parse(R"({"grid":[1]})")), Error);
}
