// zsoc: command-line driver for zero-shot one-class benchmarks.
//
//   zsoc calibrate  --images I.emb --prototypes T.emb --out calib.json
//   zsoc negatives  --source llm|groundtruth --corpus corpus.json ...
//   zsoc bench      [--config exp.json] [flags...]
//   zsoc sweep      --axis alpha --values 0,0.5,1 [flags...]
//   zsoc entropy    --taxonomy tree.json
//   zsoc inspect    file.emb
//
// Failures print {"error": <code>, "message": ...} on stderr and exit 1.

#include "zsoc/calibration.hpp"
#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"
#include "zsoc/harness.hpp"
#include "zsoc/llm_http.hpp"
#include "zsoc/negatives.hpp"
#include "zsoc/task_sampler.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using zsoc::Errc;
using zsoc::Error;

struct LlmFlags {
    std::string url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4";
    std::string api_key_env = "OPENAI_API_KEY";
    std::optional<std::string> replay;
    int min_interval_ms = 0;

    void add(CLI::App* app) {
        app->add_option("--llm-url", url, "Chat-completion base URL (scheme://host[:port])");
        app->add_option("--llm-path", path, "Chat-completion request path");
        app->add_option("--llm-model", model, "Model name sent with each request");
        app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
        app->add_option("--llm-replay", replay, "Replay recorded transcripts instead of calling the endpoint");
        app->add_option("--min-interval-ms", min_interval_ms, "Minimum spacing between LLM requests");
    }

    std::unique_ptr<zsoc::ChatTransport> transport() const {
        if (replay) return std::make_unique<zsoc::ReplayTransport>(zsoc::ReplayTransport::load(*replay));
        return std::make_unique<zsoc::HttpChatTransport>(zsoc::LlmEndpoint{url, path, model, api_key_env});
    }
};

// Flags overriding the config file; unset flags leave file values (or defaults) alone.
struct ExperimentFlags {
    std::optional<std::string> config;
    std::optional<std::string> dataset, images, prototypes, negatives_emb, taxonomy, sampler, method, negatives,
        corpus, calibration, out_tasks, out_csv;
    std::optional<std::size_t> level, tasks, queries, k, workers;
    std::optional<double> pos_rate, alpha, lambda_bar;
    std::optional<std::uint64_t> seed;
    bool normalize_before_average = false;
    LlmFlags llm;

    void add(CLI::App* app) {
        app->add_option("--config", config, "JSON experiment file (flags override it)");
        app->add_option("--dataset", dataset, "Dataset name for reports");
        app->add_option("--images", images, "Image embeddings (EMB1)");
        app->add_option("--prototypes", prototypes, "Class-label text embeddings (EMB1)");
        app->add_option("--negatives-emb", negatives_emb, "Negative-label text embeddings (EMB1)");
        app->add_option("--taxonomy", taxonomy, "Taxonomy JSON");
        app->add_option("--sampler", sampler, "uniform | hierarchical");
        app->add_option("--level", level, "Granularity level for hierarchical sampling");
        app->add_option("--tasks", tasks, "Number of tasks (default 1000)");
        app->add_option("--queries", queries, "Queries per task (default 100)");
        app->add_option("--pos-rate", pos_rate, "Positive ratio r (default 0.5)");
        app->add_option("--method", method, "ft | mnp | anp | mnp+ft | anp+ft");
        app->add_option("--alpha", alpha, "Blend coefficient (default 0.5)");
        app->add_option("--k", k, "Number of negative labels (default 10)");
        app->add_flag("--normalize-before-average", normalize_before_average,
                      "L2-normalize negative prototypes before averaging");
        app->add_option("--lambda-bar", lambda_bar, "Fixed threshold literal");
        app->add_option("--calibration", calibration, "Calibration JSON supplying lambda_bar");
        app->add_option("--negatives", negatives, "corpus | llm | groundtruth");
        app->add_option("--corpus", corpus, "Negative corpus JSON");
        app->add_option("--seed", seed, "Global seed");
        app->add_option("--workers", workers, "Worker threads");
        app->add_option("--out-tasks", out_tasks, "Per-task JSON-lines output");
        app->add_option("--out-csv", out_csv, "Aggregate CSV output");
        llm.add(app);
    }

    zsoc::ExperimentConfig resolve() const {
        zsoc::ExperimentConfig cfg = config ? zsoc::load_config(*config) : zsoc::ExperimentConfig{};
        if (dataset) cfg.dataset_name = *dataset;
        if (images) cfg.images_path = *images;
        if (prototypes) cfg.prototypes_path = *prototypes;
        if (negatives_emb) cfg.negatives_emb_path = *negatives_emb;
        if (taxonomy) cfg.taxonomy_path = *taxonomy;
        if (sampler) cfg.sampler = zsoc::parse_sampler(*sampler);
        if (level) cfg.level = *level;
        if (tasks) cfg.n_tasks = *tasks;
        if (queries) cfg.n_queries = *queries;
        if (pos_rate) cfg.r = *pos_rate;
        if (method) cfg.method = zsoc::parse_method(*method);
        if (alpha) cfg.alpha = *alpha;
        if (k) cfg.k = *k;
        if (normalize_before_average) cfg.normalize_before_average = true;
        if (lambda_bar) cfg.lambda_bar = *lambda_bar;
        if (calibration) cfg.calibration_path = *calibration;
        if (negatives) cfg.negatives = zsoc::parse_negatives_mode(*negatives);
        if (corpus) cfg.corpus_path = *corpus;
        if (seed) cfg.seed = *seed;
        if (workers) cfg.workers = *workers;
        if (out_tasks) cfg.out_tasks = *out_tasks;
        if (out_csv) cfg.out_csv = *out_csv;
        return zsoc::resolve_lambda_bar(cfg);
    }

    std::unique_ptr<zsoc::ChatTransport> transport(const zsoc::ExperimentConfig& cfg) const {
        if (cfg.negatives != zsoc::NegativesMode::llm) return nullptr;
        return llm.transport();
    }
};

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error(Errc::config_invalid, "bad sweep value '" + item + "'");
        }
    }
    if (out.empty()) throw Error(Errc::config_invalid, "no sweep values");
    return out;
}

void print_report_summary(const zsoc::EvalReport& report) {
    std::cout << "dataset=" << report.dataset << " method=" << zsoc::method_name(report.method);
    if (report.level) std::cout << " level=" << *report.level;
    std::cout << " runs=" << report.n_runs << '\n';
    for (const char* name : zsoc::metric_names) {
        const auto& a = report.aggregate.at(name);
        std::cout << "  " << name << " " << zsoc::format_number(a.mean) << " +- " << zsoc::format_number(a.ci95)
                  << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot one-class classification benchmark toolkit"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress warnings");

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Grid-search the transferred fixed threshold");
    std::string cal_images, cal_prototypes, cal_out, cal_mode = "global-argmax";
    zsoc::CalibrationConfig cal_cfg;
    calibrate->add_option("--images", cal_images, "Calibration image embeddings (EMB1)")->required();
    calibrate->add_option("--prototypes", cal_prototypes, "Calibration class text embeddings (EMB1)")->required();
    calibrate->add_option("--tasks", cal_cfg.n_tasks, "Number of tasks");
    calibrate->add_option("--queries", cal_cfg.queries_per_task, "Queries per task");
    calibrate->add_option("--pos-rate", cal_cfg.r, "Positive ratio");
    calibrate->add_option("--grid", cal_cfg.grid_size, "Number of grid candidates");
    calibrate->add_option("--seed", cal_cfg.seed, "Seed");
    calibrate->add_option("--workers", cal_cfg.workers, "Worker threads");
    calibrate->add_option("--mode", cal_mode, "global-argmax | mean-of-task-optima");
    calibrate->add_option("--out", cal_out, "Output calibration JSON")->required();

    // negatives
    auto* negatives = app.add_subcommand("negatives", "Build or extend a negative-label corpus");
    std::string neg_source = "llm", neg_corpus;
    std::vector<std::string> neg_targets;
    std::optional<std::string> neg_targets_from, neg_prototypes, neg_taxonomy;
    std::size_t neg_k = 10;
    bool neg_refresh = false;
    LlmFlags neg_llm;
    negatives->add_option("--source", neg_source, "llm | groundtruth");
    negatives->add_option("--corpus", neg_corpus, "Corpus JSON to create or extend")->required();
    negatives->add_option("--target", neg_targets, "Target label (repeatable)");
    negatives->add_option("--targets-from", neg_targets_from, "Use every label of this EMB1 file as a target");
    negatives->add_option("--prototypes", neg_prototypes, "Class text embeddings (groundtruth source)");
    negatives->add_option("--taxonomy", neg_taxonomy, "Restrict groundtruth neighbours to the target's parent subtree");
    negatives->add_option("--k", neg_k, "Negatives per target");
    negatives->add_flag("--refresh", neg_refresh, "Recompute targets already in the corpus");
    neg_llm.add(negatives);

    // bench / sweep
    auto* bench = app.add_subcommand("bench", "Run a benchmark and write per-task and aggregate reports");
    ExperimentFlags bench_flags;
    bench_flags.add(bench);

    auto* sweep = app.add_subcommand("sweep", "Run a benchmark across values of one parameter");
    ExperimentFlags sweep_flags;
    std::string sweep_axis, sweep_values, sweep_out;
    sweep_flags.add(sweep);
    sweep->add_option("--axis", sweep_axis, "alpha | k | pos_rate | level | threshold_grid")->required();
    sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
    sweep->add_option("--out", sweep_out, "Sweep CSV output (stdout when omitted)");

    // entropy
    auto* entropy = app.add_subcommand("entropy", "Sampling entropy per taxonomy level");
    std::string ent_taxonomy;
    std::optional<std::size_t> ent_max_level;
    entropy->add_option("--taxonomy", ent_taxonomy, "Taxonomy JSON")->required();
    entropy->add_option("--max-level", ent_max_level, "Last level to report (default: deepest reachable)");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Print EMB1 metadata");
    std::string insp_path;
    inspect->add_option("path", insp_path, "EMB1 file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        const int code = app.exit(e);
        return code == 0 ? 2 : code;
    }
    zsoc::set_warnings_enabled(!quiet);

    try {
        if (*calibrate) {
            cal_cfg.mode = zsoc::parse_calibration_mode(cal_mode);
            const auto images = zsoc::read_embedding_set(cal_images);
            const auto prototypes = zsoc::read_embedding_set(cal_prototypes);
            const auto result = zsoc::calibrate_fixed_threshold(images, prototypes, cal_cfg);
            zsoc::save_calibration(result, cal_out);
            std::cout << "lambda_bar " << zsoc::format_number(result.lambda_bar) << '\n';
        } else if (*negatives) {
            zsoc::NegativeCorpus corpus;
            if (std::filesystem::exists(neg_corpus)) corpus = zsoc::load_corpus(neg_corpus);
            if (neg_targets_from) {
                const auto set = zsoc::read_embedding_set(*neg_targets_from);
                for (const auto& l : zsoc::distinct_labels(set)) neg_targets.push_back(l);
            }
            if (neg_targets.empty()) throw Error(Errc::config_invalid, "no targets given");
            const auto source = zsoc::parse_source(neg_source);
            std::unique_ptr<zsoc::ChatTransport> transport;
            std::optional<zsoc::LlmNegativeClient> client;
            std::optional<zsoc::EmbeddingSet> prototypes;
            std::optional<zsoc::Taxonomy> taxonomy;
            if (source == zsoc::NegativeSource::llm) {
                transport = neg_llm.transport();
                client.emplace(*transport, std::chrono::milliseconds{neg_llm.min_interval_ms});
            } else if (source == zsoc::NegativeSource::groundtruth) {
                if (!neg_prototypes) throw Error(Errc::config_invalid, "groundtruth source needs --prototypes");
                prototypes = zsoc::read_embedding_set(*neg_prototypes);
                if (neg_taxonomy) taxonomy = zsoc::Taxonomy::load(*neg_taxonomy);
            } else {
                throw Error(Errc::config_invalid, "source must be llm or groundtruth");
            }
            std::size_t added = 0;
            for (const auto& target : neg_targets) {
                const auto* existing = corpus.find(target);
                if (existing && existing->k >= neg_k && !neg_refresh) continue;
                zsoc::NegativeLabelSet set;
                if (client) {
                    set = client->query(target, neg_k);
                } else if (taxonomy) {
                    std::optional<std::size_t> node;
                    for (std::size_t n = 0; n < taxonomy->size() && !node; ++n)
                        if (taxonomy->node(n).name == target) node = n;
                    if (!node) throw Error(Errc::target_not_found, "'" + target + "' is not in the taxonomy");
                    const auto scope = taxonomy->node(*node).parent.value_or(*node);
                    set = zsoc::groundtruth_neighbors(target, neg_k, *prototypes, *taxonomy, taxonomy->path_of(scope));
                } else {
                    set = zsoc::groundtruth_neighbors(target, neg_k, *prototypes);
                }
                corpus.put(std::move(set));
                ++added;
                zsoc::save_corpus(corpus, neg_corpus); // checkpoint after every target
            }
            zsoc::save_corpus(corpus, neg_corpus);
            std::cout << "targets " << neg_targets.size() << " added " << added << " corpus " << corpus.size()
                      << '\n';
        } else if (*bench) {
            const auto cfg = bench_flags.resolve();
            auto transport = bench_flags.transport(cfg);
            const auto report = zsoc::run_benchmark(cfg, transport.get());
            print_report_summary(report);
        } else if (*sweep) {
            const auto cfg = sweep_flags.resolve();
            auto transport = sweep_flags.transport(cfg);
            auto data = zsoc::ExperimentData::load(cfg);
            const auto table =
                zsoc::run_sweep(cfg, data, zsoc::parse_sweep_axis(sweep_axis), parse_values(sweep_values), transport.get());
            const auto csv = zsoc::sweep_csv(table);
            if (sweep_out.empty()) std::cout << csv;
            else zsoc::write_file_atomic(sweep_out, csv);
        } else if (*entropy) {
            const auto taxonomy = zsoc::Taxonomy::load(ent_taxonomy);
            std::cout << "level,entropy_bits\n";
            for (std::size_t level = 0;; ++level) {
                if (ent_max_level && level > *ent_max_level) break;
                double h = 0.0;
                try {
                    h = zsoc::sampling_entropy(taxonomy, level);
                } catch (const Error& e) {
                    if (e.code() == Errc::level_too_deep && !ent_max_level) break;
                    throw;
                }
                std::cout << level << ',' << zsoc::format_number(h) << '\n';
            }
        } else if (*inspect) {
            const auto set = zsoc::read_embedding_set(insp_path);
            nlohmann::ordered_json j;
            j["kind"] = zsoc::kind_name(set.kind);
            j["dim"] = set.dim;
            j["count"] = set.count();
            j["distinct_labels"] = zsoc::distinct_labels(set).size();
            j["pre_normalized"] = set.pre_normalized;
            j["has_taxonomy"] = set.taxonomy_paths.has_value();
            j["model"] = set.model_tag;
            j["template"] = set.template_text;
            std::cout << j.dump(2) << '\n';
        }
    } catch (const Error& e) {
        std::cerr << nlohmann::json{{"error", zsoc::errc_name(e.code())}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
