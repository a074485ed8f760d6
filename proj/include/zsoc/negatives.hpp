#pragma once

// Negative ("visually confusing") labels: LLM queries, groundtruth neighbours, and the
// on-disk corpus that caches both.

#include "zsoc/embedding_store.hpp"
#include "zsoc/error.hpp"
#include "zsoc/similarity.hpp"
#include "zsoc/thresholding.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

namespace zsoc {

enum class NegativeSource { llm, groundtruth, file };

inline std::string_view source_name(NegativeSource s) {
    switch (s) {
    case NegativeSource::llm: return "llm";
    case NegativeSource::groundtruth: return "groundtruth";
    case NegativeSource::file: return "file";
    }
    return "?";
}

inline NegativeSource parse_source(std::string_view s) {
    for (auto v : {NegativeSource::llm, NegativeSource::groundtruth, NegativeSource::file})
        if (source_name(v) == s) return v;
    throw Error(Errc::parse_error, "unknown negative source '" + std::string(s) + "'");
}

struct NegativeLabelSet {
    std::string target;
    std::vector<std::string> negatives;
    std::size_t k = 0;
    NegativeSource source = NegativeSource::file;
    std::optional<std::string> raw_response;

    /// First `n` negatives (all of them when fewer are available).
    NegativeLabelSet truncated(std::size_t n) const {
        NegativeLabelSet out = *this;
        if (out.negatives.size() > n) out.negatives.resize(n);
        out.k = n;
        return out;
    }

    friend bool operator==(const NegativeLabelSet&, const NegativeLabelSet&) = default;
};

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline void validate(const NegativeLabelSet& set) {
    if (set.negatives.empty())
        throw Error(Errc::invariant_violation, "'" + set.target + "' has no negatives");
    if (set.negatives.size() > set.k)
        throw Error(Errc::invariant_violation, "'" + set.target + "' has more negatives than k");
    std::unordered_set<std::string> seen;
    for (const auto& n : set.negatives) {
        if (same_label_ci(n, set.target))
            throw Error(Errc::invariant_violation, "'" + set.target + "' lists itself as a negative");
        if (!seen.insert(lowercase(n)).second)
            throw Error(Errc::invariant_violation, "'" + set.target + "' lists '" + n + "' twice");
    }
}

// ---------------------------------------------------------------------------
// Prompt and response parsing

inline std::string negatives_prompt(std::string_view target, std::size_t k) {
    return "List exactly " + std::to_string(k) + " object classes that could be visually confused with a '" +
           std::string(target) + "'. Respond only with a comma-separated list of class names.";
}

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_quote(char c) { return c == '"' || c == '\'' || c == '`'; }

// Leading enumeration marker: "12." / "3)" / "4 -" or a bare bullet "-" / "*".
inline std::size_t marker_length(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0) {
        std::size_t j = i;
        while (j < s.size() && s[j] == ' ') ++j;
        if (j < s.size() && (s[j] == '.' || s[j] == ')' || s[j] == '-')) return j + 1;
        return 0;
    }
    if (!s.empty() && (s[0] == '-' || s[0] == '*')) return 1;
    return 0;
}

inline std::string clean_item(std::string_view s) {
    for (;;) {
        const auto before = s.size();
        while (!s.empty() && (is_space(s.front()) || is_quote(s.front()))) s.remove_prefix(1);
        while (!s.empty() && (is_space(s.back()) || is_quote(s.back()) || s.back() == '.')) s.remove_suffix(1);
        s.remove_prefix(marker_length(s));
        if (s.size() == before) return std::string(s);
    }
}

} // namespace detail

/// Cleans, dedupes (case-insensitive, first occurrence wins), drops the target and
/// keeps at most `k` items. Idempotent.
inline std::vector<std::string> sanitize_negatives(const std::vector<std::string>& items, std::string_view target,
                                                   std::size_t k) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& raw : items) {
        auto item = detail::clean_item(raw);
        if (item.empty() || same_label_ci(item, target)) continue;
        if (!seen.insert(lowercase(item)).second) continue;
        out.push_back(std::move(item));
        if (out.size() == k) break;
    }
    return out;
}

/// Splits a free-text LLM reply on commas and newlines, then sanitizes.
inline std::vector<std::string> parse_negatives_response(std::string_view response, std::string_view target,
                                                         std::size_t k) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : response) {
        if (c == ',' || c == '\n' || c == '\r') {
            items.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    items.push_back(std::move(cur));
    return sanitize_negatives(items, target, k);
}

// ---------------------------------------------------------------------------
// LLM client

/// One chat-completion round trip: prompt in, assistant text out.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

/// Replays recorded transcripts: {"transcripts": [{"prompt": ..., "responses": [...]}, ...]}.
/// Successive calls with the same prompt walk through its responses.
class ReplayTransport : public ChatTransport {
public:
    explicit ReplayTransport(const nlohmann::json& fixture) {
        for (const auto& t : fixture.at("transcripts")) {
            auto& q = responses_[t.at("prompt").get<std::string>()];
            for (const auto& r : t.at("responses")) q.push_back(r.get<std::string>());
        }
    }

    static ReplayTransport load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
        try {
            return ReplayTransport(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::parse_error, path.string() + ": " + e.what());
        }
    }

    std::string complete(const std::string& prompt) override {
        auto it = responses_.find(prompt);
        if (it == responses_.end()) throw Error(Errc::endpoint_unreachable, "no recorded response for prompt");
        auto& cursor = cursors_[prompt];
        if (cursor >= it->second.size()) throw Error(Errc::endpoint_unreachable, "recorded responses exhausted");
        return it->second[cursor++];
    }

private:
    std::map<std::string, std::vector<std::string>> responses_;
    std::map<std::string, std::size_t> cursors_;
};

/// Serializes requests through one transport with a minimum spacing between calls.
class LlmNegativeClient {
public:
    explicit LlmNegativeClient(ChatTransport& transport,
                               std::chrono::milliseconds min_interval = std::chrono::milliseconds{0})
        : transport_(transport), min_interval_(min_interval) {}

    NegativeLabelSet query(const std::string& target, std::size_t k) {
        if (k == 0) throw Error(Errc::invalid_spec, "k must be at least 1");
        std::lock_guard lock(mutex_);
        const auto prompt = negatives_prompt(target, k);
        std::string raw;
        std::vector<std::string> parsed;
        for (int attempt = 0; attempt < 2 && parsed.empty(); ++attempt) {
            pace();
            raw = transport_.complete(prompt);
            parsed = parse_negatives_response(raw, target, k);
        }
        if (parsed.empty())
            throw Error(Errc::unparseable_response, "no usable negatives for '" + target + "' after retry");
        if (parsed.size() < k)
            warn("'" + target + "': " + std::to_string(parsed.size()) + " of " + std::to_string(k) +
                 " negatives survived sanitization");
        return {target, std::move(parsed), k, NegativeSource::llm, std::move(raw)};
    }

private:
    void pace() {
        const auto now = std::chrono::steady_clock::now();
        if (last_ && now - *last_ < min_interval_) std::this_thread::sleep_for(min_interval_ - (now - *last_));
        last_ = std::chrono::steady_clock::now();
    }

    ChatTransport& transport_;
    std::chrono::milliseconds min_interval_;
    std::optional<std::chrono::steady_clock::time_point> last_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Groundtruth neighbours

/// The k prototype labels closest (cosine) to the target's prototype, descending,
/// ties broken by label. `allowed`, when given, restricts the candidate pool.
inline NegativeLabelSet groundtruth_neighbors(const std::string& target, std::size_t k, const EmbeddingSet& prototypes,
                                              const std::vector<std::string>* allowed = nullptr) {
    if (k == 0) throw Error(Errc::invalid_spec, "k must be at least 1");
    const auto it = std::find(prototypes.labels.begin(), prototypes.labels.end(), target);
    if (it == prototypes.labels.end()) throw Error(Errc::target_not_found, "no prototype for '" + target + "'");
    const auto target_row = prototypes.row(static_cast<std::size_t>(it - prototypes.labels.begin()));

    std::unordered_set<std::string> allowed_set;
    if (allowed) allowed_set.insert(allowed->begin(), allowed->end());

    std::vector<std::pair<double, std::string>> candidates;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < prototypes.count(); ++i) {
        const auto& label = prototypes.labels[i];
        if (same_label_ci(label, target)) continue;
        if (allowed && !allowed_set.contains(label)) continue;
        if (!seen.insert(lowercase(label)).second) continue;
        candidates.emplace_back(cosine(target_row, prototypes.row(i)), label);
    }
    if (candidates.empty()) throw Error(Errc::fewer_than_one_candidate, "no candidate neighbours for '" + target + "'");
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    NegativeLabelSet out{target, {}, k, NegativeSource::groundtruth, std::nullopt};
    for (std::size_t i = 0; i < std::min(k, candidates.size()); ++i) out.negatives.push_back(candidates[i].second);
    return out;
}

/// Taxonomy-restricted variant: candidates are node names inside `scope`'s subtree.
inline NegativeLabelSet groundtruth_neighbors(const std::string& target, std::size_t k, const EmbeddingSet& prototypes,
                                              const Taxonomy& taxonomy, const TaxonomyPath& scope) {
    const auto node = taxonomy.find(scope);
    if (!node) throw Error(Errc::target_not_found, "scope path not in taxonomy");
    const auto names = taxonomy.subtree_names(*node);
    return groundtruth_neighbors(target, k, prototypes, &names);
}

// ---------------------------------------------------------------------------
// Corpus file: {"target": ["neg", ...], ...}. Entries carrying provenance use
// {"target": {"negatives": [...], "k": n, "source": "llm", "raw": "..."}}.

class NegativeCorpus {
public:
    const std::map<std::string, NegativeLabelSet>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }

    void put(NegativeLabelSet set) {
        validate(set);
        auto key = set.target;
        entries_.insert_or_assign(std::move(key), std::move(set));
    }

    const NegativeLabelSet* find(const std::string& target) const {
        auto it = entries_.find(target);
        return it == entries_.end() ? nullptr : &it->second;
    }

    friend bool operator==(const NegativeCorpus&, const NegativeCorpus&) = default;

private:
    std::map<std::string, NegativeLabelSet> entries_;
};

inline NegativeCorpus corpus_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw Error(Errc::parse_error, "corpus must be a JSON object");
    NegativeCorpus corpus;
    try {
        for (const auto& [target, value] : doc.items()) {
            NegativeLabelSet set;
            set.target = target;
            if (value.is_array()) {
                set.negatives = value.get<std::vector<std::string>>();
                set.k = set.negatives.size();
            } else {
                set.negatives = value.at("negatives").get<std::vector<std::string>>();
                set.k = value.value("k", set.negatives.size());
                set.source = parse_source(value.value("source", "file"));
                if (value.contains("raw")) set.raw_response = value["raw"].get<std::string>();
            }
            corpus.put(std::move(set));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, e.what());
    }
    return corpus;
}

inline nlohmann::json corpus_to_json(const NegativeCorpus& corpus) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [target, set] : corpus.entries()) {
        const bool plain = set.source == NegativeSource::file && !set.raw_response && set.k == set.negatives.size();
        if (plain) {
            doc[target] = set.negatives;
            continue;
        }
        nlohmann::json e{{"negatives", set.negatives}, {"k", set.k}, {"source", source_name(set.source)}};
        if (set.raw_response) e["raw"] = *set.raw_response;
        doc[target] = std::move(e);
    }
    return doc;
}

inline NegativeCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
    return corpus_from_json(doc);
}

inline void save_corpus(const NegativeCorpus& corpus, const std::filesystem::path& path) {
    write_file_atomic(path, corpus_to_json(corpus).dump(2) + "\n");
}

} // namespace zsoc
