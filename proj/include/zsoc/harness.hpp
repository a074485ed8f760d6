#pragma once

// Benchmark orchestration: sample tasks, resolve negatives, classify queries, score
// each task and aggregate. Output files are byte-identical for a given config and seed
// whatever the worker count.

#include "zsoc/calibration.hpp"
#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"
#include "zsoc/metrics.hpp"
#include "zsoc/negatives.hpp"
#include "zsoc/parallel.hpp"
#include "zsoc/similarity.hpp"
#include "zsoc/task_sampler.hpp"
#include "zsoc/thresholding.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace zsoc {

enum class SamplerKind { uniform, hierarchical };
enum class NegativesMode { corpus, llm, groundtruth };

inline std::string_view sampler_name(SamplerKind s) { return s == SamplerKind::uniform ? "uniform" : "hierarchical"; }

inline SamplerKind parse_sampler(std::string_view s) {
    if (s == "uniform") return SamplerKind::uniform;
    if (s == "hierarchical") return SamplerKind::hierarchical;
    throw Error(Errc::config_invalid, "unknown sampler '" + std::string(s) + "'");
}

inline std::string_view negatives_mode_name(NegativesMode m) {
    switch (m) {
    case NegativesMode::corpus: return "corpus";
    case NegativesMode::llm: return "llm";
    case NegativesMode::groundtruth: return "groundtruth";
    }
    return "?";
}

inline NegativesMode parse_negatives_mode(std::string_view s) {
    for (auto m : {NegativesMode::corpus, NegativesMode::llm, NegativesMode::groundtruth})
        if (negatives_mode_name(m) == s) return m;
    throw Error(Errc::config_invalid, "unknown negatives source '" + std::string(s) + "'");
}

struct ExperimentConfig {
    std::string dataset_name;
    std::filesystem::path images_path;
    std::filesystem::path prototypes_path;                 // text embeddings of the class labels
    std::optional<std::filesystem::path> negatives_emb_path; // text embeddings of negative labels
    std::optional<std::filesystem::path> taxonomy_path;
    SamplerKind sampler = SamplerKind::uniform;
    std::size_t level = 0;
    std::size_t n_tasks = 1000;
    std::size_t n_queries = 100;
    double r = 0.5;
    Method method = Method::anp_ft;
    double alpha = 0.5;
    std::size_t k = 10;
    bool normalize_before_average = false;
    std::optional<double> lambda_bar;
    std::optional<std::filesystem::path> calibration_path;
    NegativesMode negatives = NegativesMode::corpus;
    std::optional<std::filesystem::path> corpus_path;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::optional<std::filesystem::path> out_tasks;
    std::optional<std::filesystem::path> out_csv;

    ClassifierSpec classifier_spec() const {
        return {method, alpha, lambda_bar.value_or(0.0), k, normalize_before_average};
    }
};

namespace detail {
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}
inline void read_path(const nlohmann::json& j, const char* key, std::optional<std::filesystem::path>& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<std::string>();
}
} // namespace detail

/// Applies keys present in `j` on top of `cfg`; absent keys keep their current value.
inline void merge_config(ExperimentConfig& cfg, const nlohmann::json& j) {
    try {
        detail::read_opt(j, "dataset", cfg.dataset_name);
        if (j.contains("images")) cfg.images_path = j["images"].get<std::string>();
        if (j.contains("prototypes")) cfg.prototypes_path = j["prototypes"].get<std::string>();
        detail::read_path(j, "negatives_embeddings", cfg.negatives_emb_path);
        detail::read_path(j, "taxonomy", cfg.taxonomy_path);
        if (j.contains("sampler")) cfg.sampler = parse_sampler(j["sampler"].get<std::string>());
        detail::read_opt(j, "level", cfg.level);
        detail::read_opt(j, "tasks", cfg.n_tasks);
        detail::read_opt(j, "queries", cfg.n_queries);
        detail::read_opt(j, "pos_rate", cfg.r);
        if (j.contains("method")) cfg.method = parse_method(j["method"].get<std::string>());
        detail::read_opt(j, "alpha", cfg.alpha);
        detail::read_opt(j, "k", cfg.k);
        detail::read_opt(j, "normalize_before_average", cfg.normalize_before_average);
        detail::read_opt(j, "lambda_bar", cfg.lambda_bar);
        detail::read_path(j, "calibration", cfg.calibration_path);
        if (j.contains("negatives")) cfg.negatives = parse_negatives_mode(j["negatives"].get<std::string>());
        detail::read_path(j, "corpus", cfg.corpus_path);
        detail::read_opt(j, "seed", cfg.seed);
        detail::read_opt(j, "workers", cfg.workers);
        detail::read_path(j, "out_tasks", cfg.out_tasks);
        detail::read_path(j, "out_csv", cfg.out_csv);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::config_invalid, e.what());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    ExperimentConfig cfg;
    try {
        merge_config(cfg, nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::config_invalid, path.string() + ": " + e.what());
    }
    return cfg;
}

/// Inputs of a benchmark, loaded once and shared read-only across runs and workers.
struct ExperimentData {
    EmbeddingSet images;
    EmbeddingSet prototypes;
    std::optional<EmbeddingSet> negative_prototypes;
    std::optional<Taxonomy> taxonomy;
    NegativeCorpus corpus;

    static ExperimentData load(const ExperimentConfig& cfg) {
        auto require = [](const std::filesystem::path& p, const char* what) {
            if (p.empty()) throw Error(Errc::config_invalid, std::string(what) + " path is required");
            if (!std::filesystem::exists(p)) throw Error(Errc::config_invalid, p.string() + " does not exist");
        };
        require(cfg.images_path, "images");
        require(cfg.prototypes_path, "prototypes");
        ExperimentData d;
        d.images = read_embedding_set(cfg.images_path);
        d.prototypes = read_embedding_set(cfg.prototypes_path);
        if (cfg.negatives_emb_path) {
            require(*cfg.negatives_emb_path, "negatives embeddings");
            d.negative_prototypes = read_embedding_set(*cfg.negatives_emb_path);
        }
        if (cfg.taxonomy_path) {
            require(*cfg.taxonomy_path, "taxonomy");
            d.taxonomy = Taxonomy::load(*cfg.taxonomy_path);
            d.taxonomy->check_paths(d.images);
        }
        if (cfg.corpus_path && std::filesystem::exists(*cfg.corpus_path)) d.corpus = load_corpus(*cfg.corpus_path);
        return d;
    }
};

struct TaskResult {
    std::uint64_t task_id = 0;
    std::string target;
    std::optional<std::size_t> level;
    Method method = Method::ft;
    double f1_macro = 0, f1_pos = 0, f1_neg = 0, accuracy = 0, auc = 0, fpr = 0, fnr = 0;
    double threshold_mean = 0;
    std::vector<std::uint8_t> decisions; // positives first, then negatives
    std::vector<double> scores;
    std::vector<double> thresholds;
};

inline constexpr std::array<const char*, 7> metric_names{"f1_macro", "f1_pos", "f1_neg", "accuracy",
                                                          "auc",      "fpr",    "fnr"};

inline double metric_value(const TaskResult& t, std::string_view name) {
    if (name == "f1_macro") return t.f1_macro;
    if (name == "f1_pos") return t.f1_pos;
    if (name == "f1_neg") return t.f1_neg;
    if (name == "accuracy") return t.accuracy;
    if (name == "auc") return t.auc;
    if (name == "fpr") return t.fpr;
    if (name == "fnr") return t.fnr;
    throw Error(Errc::config_invalid, "unknown metric '" + std::string(name) + "'");
}

struct EvalReport {
    std::string dataset;
    Method method = Method::ft;
    std::optional<std::size_t> level;
    std::vector<TaskResult> per_task;
    std::map<std::string, Aggregate> aggregate;
    std::size_t n_runs = 0;
};

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n_tasks == 0) throw Error(Errc::config_invalid, "tasks must be at least 1");
    if (!(cfg.r > 0.0 && cfg.r < 1.0)) throw Error(Errc::config_invalid, "pos_rate must lie in (0,1)");
    const auto n_pos = positive_count(cfg.r, cfg.n_queries);
    if (n_pos == 0 || n_pos >= cfg.n_queries)
        throw Error(Errc::config_invalid, "pos_rate and queries must yield at least one positive and one negative");
    if (uses_fixed(cfg.method) && !cfg.lambda_bar)
        throw Error(Errc::config_invalid, "method " + std::string(method_name(cfg.method)) + " needs lambda_bar");
    if (cfg.sampler == SamplerKind::hierarchical && !cfg.taxonomy_path)
        throw Error(Errc::config_invalid, "hierarchical sampling needs a taxonomy");
    if (uses_negatives(cfg.method) && cfg.negatives == NegativesMode::corpus && !cfg.corpus_path)
        throw Error(Errc::config_invalid, "negatives=corpus needs a corpus path");
    cfg.classifier_spec().validate();
}

namespace detail {

inline std::vector<Task> sample_tasks(const ExperimentConfig& cfg, const ExperimentData& data) {
    std::vector<Task> tasks(cfg.n_tasks);
    if (cfg.sampler == SamplerKind::uniform) {
        const UniformSampler sampler(data.images, cfg.r, cfg.n_queries);
        parallel_for(cfg.n_tasks, cfg.workers, [&](std::size_t i) {
            auto rng = task_rng(cfg.seed, i);
            tasks[i] = sampler.sample(i, rng);
        });
    } else {
        if (!data.taxonomy) throw Error(Errc::config_invalid, "hierarchical sampling needs a taxonomy");
        const HierarchicalSampler sampler(data.images, *data.taxonomy, cfg.level, cfg.r, cfg.n_queries);
        parallel_for(cfg.n_tasks, cfg.workers, [&](std::size_t i) {
            auto rng = task_rng(cfg.seed, i);
            tasks[i] = sampler.sample(i, rng);
        });
    }
    return tasks;
}

// Negatives per task, resolved serially in task order so LLM traffic and corpus
// updates are deterministic.
inline std::vector<NegativeLabelSet> resolve_negatives(const ExperimentConfig& cfg, ExperimentData& data,
                                                       const std::vector<Task>& tasks, ChatTransport* llm) {
    std::vector<NegativeLabelSet> out(tasks.size());
    std::map<std::string, NegativeLabelSet> cache;
    std::optional<LlmNegativeClient> client;
    bool corpus_dirty = false;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& task = tasks[i];
        std::string key = task.target_label;
        if (cfg.negatives == NegativesMode::groundtruth && task.negative_scope_path) {
            for (const auto& p : *task.negative_scope_path) key += "\x1f" + p;
        }
        auto it = cache.find(key);
        if (it == cache.end()) {
            NegativeLabelSet set;
            switch (cfg.negatives) {
            case NegativesMode::groundtruth:
                if (data.taxonomy && task.negative_scope_path)
                    set = groundtruth_neighbors(task.target_label, cfg.k, data.prototypes, *data.taxonomy,
                                                *task.negative_scope_path);
                else
                    set = groundtruth_neighbors(task.target_label, cfg.k, data.prototypes);
                break;
            case NegativesMode::corpus:
            case NegativesMode::llm:
                if (const auto* hit = data.corpus.find(task.target_label)) {
                    set = *hit;
                } else if (cfg.negatives == NegativesMode::llm && llm != nullptr) {
                    if (!client) client.emplace(*llm);
                    set = client->query(task.target_label, cfg.k);
                    data.corpus.put(set);
                    corpus_dirty = true;
                } else {
                    throw Error(Errc::missing_negatives_for_target, "no negatives for '" + task.target_label + "'");
                }
                break;
            }
            if (set.negatives.size() < cfg.k)
                warn("'" + task.target_label + "': only " + std::to_string(set.negatives.size()) + " negatives for k=" +
                     std::to_string(cfg.k));
            it = cache.emplace(key, set.truncated(cfg.k)).first;
        }
        out[i] = it->second;
    }
    if (corpus_dirty && cfg.corpus_path) save_corpus(data.corpus, *cfg.corpus_path);
    return out;
}

inline TaskResult evaluate_task(const ExperimentConfig& cfg, const ExperimentData& data, const PrototypeTable& table,
                                const Task& task, const NegativeLabelSet* negatives) {
    std::vector<std::span<const float>> neg_rows;
    if (negatives != nullptr) {
        for (const auto& label : negatives->negatives) {
            if (same_label_ci(label, task.target_label)) continue;
            neg_rows.push_back(table.at(label));
        }
    }
    const TaskClassifier classifier(cfg.classifier_spec(), table.at(task.target_label), std::move(neg_rows));

    TaskResult r;
    r.task_id = task.task_id;
    r.target = task.target_label;
    r.level = task.level;
    r.method = cfg.method;
    std::vector<std::uint8_t> truth;
    auto run = [&](std::size_t idx, std::uint8_t is_pos) {
        const auto d = classifier.classify(data.images.row(idx));
        truth.push_back(is_pos);
        r.decisions.push_back(static_cast<std::uint8_t>(d.label));
        r.scores.push_back(d.score);
        r.thresholds.push_back(d.threshold);
    };
    for (auto idx : task.positive_indices) run(idx, 1);
    for (auto idx : task.negative_indices) run(idx, 0);

    const auto c = tally(truth, r.decisions);
    r.f1_pos = f1_positive(c);
    r.f1_neg = f1_negative(c);
    r.f1_macro = macro_f1(c);
    r.accuracy = accuracy(c);
    const auto rates = fpr_fnr(c);
    r.fpr = rates.fpr;
    r.fnr = rates.fnr;

    // AUC ranks the decision margin score - threshold, which is what each method thresholds at 0.
    std::vector<double> pos_margin, neg_margin;
    double threshold_sum = 0.0;
    for (std::size_t q = 0; q < truth.size(); ++q) {
        (truth[q] ? pos_margin : neg_margin).push_back(r.scores[q] - r.thresholds[q]);
        threshold_sum += r.thresholds[q];
    }
    r.auc = auc(pos_margin, neg_margin);
    r.threshold_mean = threshold_sum / static_cast<double>(truth.size());
    return r;
}

} // namespace detail

inline void finalize_aggregate(EvalReport& report) {
    report.n_runs = report.per_task.size();
    report.aggregate.clear();
    std::vector<double> values(report.per_task.size());
    for (const char* name : metric_names) {
        for (std::size_t i = 0; i < report.per_task.size(); ++i) values[i] = metric_value(report.per_task[i], name);
        report.aggregate[name] = aggregate(values);
    }
}

/// In-memory benchmark. `data.corpus` grows when negatives are fetched from `llm`.
inline ExperimentConfig resolve_lambda_bar(ExperimentConfig cfg);

inline EvalReport run_benchmark(const ExperimentConfig& config, ExperimentData& data, ChatTransport* llm = nullptr) {
    const auto cfg = resolve_lambda_bar(config);
    validate_config(cfg);
    if (data.images.dim != data.prototypes.dim) throw Error(Errc::dimension_mismatch, "image and text dims differ");

    const auto tasks = detail::sample_tasks(cfg, data);
    std::vector<NegativeLabelSet> negatives;
    if (uses_negatives(cfg.method)) negatives = detail::resolve_negatives(cfg, data, tasks, llm);

    PrototypeTable table(data.prototypes);
    if (data.negative_prototypes) table.add(*data.negative_prototypes);

    EvalReport report;
    report.dataset = cfg.dataset_name.empty() ? cfg.images_path.stem().string() : cfg.dataset_name;
    report.method = cfg.method;
    if (cfg.sampler == SamplerKind::hierarchical) report.level = cfg.level;
    report.per_task.resize(tasks.size());
    parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
        report.per_task[i] =
            detail::evaluate_task(cfg, data, table, tasks[i], negatives.empty() ? nullptr : &negatives[i]);
    });
    finalize_aggregate(report);
    return report;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_number(double v) { return nlohmann::json(v).dump(); }

inline std::string task_lines(const EvalReport& report) {
    std::string out;
    for (const auto& t : report.per_task) {
        nlohmann::ordered_json j;
        j["task_id"] = t.task_id;
        j["target"] = t.target;
        j["level"] = t.level ? nlohmann::ordered_json(*t.level) : nlohmann::ordered_json(nullptr);
        j["method"] = method_name(t.method);
        j["f1_macro"] = t.f1_macro;
        j["f1_pos"] = t.f1_pos;
        j["f1_neg"] = t.f1_neg;
        j["accuracy"] = t.accuracy;
        j["auc"] = t.auc;
        j["fpr"] = t.fpr;
        j["fnr"] = t.fnr;
        j["threshold_mean"] = t.threshold_mean;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline constexpr const char* aggregate_csv_header = "dataset,method,level,metric,mean,ci95\n";

namespace detail {
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}
} // namespace detail

inline std::string aggregate_rows(const EvalReport& report) {
    std::string out;
    const std::string level = report.level ? std::to_string(*report.level) : "";
    for (const char* name : metric_names) {
        const auto& a = report.aggregate.at(name);
        out += detail::csv_field(report.dataset) + "," + std::string(method_name(report.method)) + "," + level + "," +
               name + "," + format_number(a.mean) + "," + format_number(a.ci95) + "\n";
    }
    return out;
}

inline void write_outputs(const ExperimentConfig& cfg, const EvalReport& report) {
    if (cfg.out_tasks) write_file_atomic(*cfg.out_tasks, task_lines(report));
    if (cfg.out_csv) write_file_atomic(*cfg.out_csv, aggregate_csv_header + aggregate_rows(report));
}

/// Resolves lambda_bar from a calibration file when no literal is given.
inline ExperimentConfig resolve_lambda_bar(ExperimentConfig cfg) {
    if (!cfg.lambda_bar && cfg.calibration_path) cfg.lambda_bar = load_calibration(*cfg.calibration_path).lambda_bar;
    return cfg;
}

/// Loads all inputs, runs, and writes the configured output files.
inline EvalReport run_benchmark(const ExperimentConfig& config, ChatTransport* llm = nullptr) {
    const auto cfg = resolve_lambda_bar(config);
    validate_config(cfg);
    auto data = ExperimentData::load(cfg);
    auto report = run_benchmark(cfg, data, llm);
    write_outputs(cfg, report);
    return report;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { alpha, k, pos_rate, level, threshold_grid };

inline std::string_view sweep_axis_name(SweepAxis a) {
    switch (a) {
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::k: return "k";
    case SweepAxis::pos_rate: return "pos_rate";
    case SweepAxis::level: return "level";
    case SweepAxis::threshold_grid: return "threshold_grid";
    }
    return "?";
}

inline SweepAxis parse_sweep_axis(std::string_view s) {
    for (auto a : {SweepAxis::alpha, SweepAxis::k, SweepAxis::pos_rate, SweepAxis::level, SweepAxis::threshold_grid})
        if (sweep_axis_name(a) == s) return a;
    throw Error(Errc::config_invalid, "unknown sweep axis '" + std::string(s) + "'");
}

struct SweepRow {
    double value = 0.0;
    EvalReport report;
    std::optional<double> relative_f1; // threshold_grid only: f1_macro minus the lambda_bar baseline
};

struct SweepTable {
    SweepAxis axis = SweepAxis::alpha;
    std::vector<SweepRow> rows;
    std::optional<EvalReport> baseline; // threshold_grid only
};

inline ExperimentConfig sweep_cell_config(const ExperimentConfig& base, SweepAxis axis, double value) {
    auto cfg = base;
    auto as_count = [&](const char* what) {
        if (!(value >= 0.0) || value != std::floor(value))
            throw Error(Errc::config_invalid, std::string(what) + " sweep values must be non-negative integers");
        return static_cast<std::size_t>(value);
    };
    switch (axis) {
    case SweepAxis::alpha:
        if (base.method != Method::anp_ft && base.method != Method::mnp_ft)
            throw Error(Errc::config_invalid, "alpha sweep needs a combined method (mnp+ft or anp+ft)");
        cfg.alpha = value;
        break;
    case SweepAxis::k:
        if (!uses_negatives(base.method)) throw Error(Errc::config_invalid, "k sweep needs a negative-based method");
        cfg.k = as_count("k");
        break;
    case SweepAxis::pos_rate: cfg.r = value; break;
    case SweepAxis::level:
        if (base.sampler != SamplerKind::hierarchical)
            throw Error(Errc::config_invalid, "level sweep needs hierarchical sampling");
        cfg.level = as_count("level");
        break;
    case SweepAxis::threshold_grid:
        cfg.method = Method::ft;
        cfg.lambda_bar = value;
        break;
    }
    return cfg;
}

inline SweepTable run_sweep(const ExperimentConfig& base, ExperimentData& data, SweepAxis axis,
                            const std::vector<double>& values, ChatTransport* llm = nullptr) {
    SweepTable table;
    table.axis = axis;
    if (axis == SweepAxis::threshold_grid) {
        auto cfg = base;
        cfg.method = Method::ft;
        table.baseline = run_benchmark(cfg, data, llm);
    }
    for (double v : values) {
        SweepRow row;
        row.value = v;
        row.report = run_benchmark(sweep_cell_config(base, axis, v), data, llm);
        if (table.baseline)
            row.relative_f1 = row.report.aggregate.at("f1_macro").mean - table.baseline->aggregate.at("f1_macro").mean;
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline constexpr const char* sweep_csv_header = "axis,value,dataset,method,level,metric,mean,ci95\n";

inline std::string sweep_csv(const SweepTable& table) {
    std::string out = sweep_csv_header;
    const std::string axis(sweep_axis_name(table.axis));
    for (const auto& row : table.rows) {
        const auto prefix = axis + "," + format_number(row.value) + ",";
        std::istringstream rows(aggregate_rows(row.report));
        for (std::string line; std::getline(rows, line);) out += prefix + line + "\n";
        if (row.relative_f1) {
            const auto& rep = row.report;
            out += prefix + detail::csv_field(rep.dataset) + "," + std::string(method_name(rep.method)) + "," +
                   (rep.level ? std::to_string(*rep.level) : "") + ",f1_macro_relative," +
                   format_number(*row.relative_f1) + ",\n";
        }
    }
    return out;
}

} // namespace zsoc
