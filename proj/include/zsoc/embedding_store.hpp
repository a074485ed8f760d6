#pragma once

// EMB1 embedding container and taxonomy tree.
//
// EMB1 layout (little-endian):
//   0..3   "EMB1"
//   4..5   version (u16, = 1)
//   6..7   flags (u16, bit0: rows are pre-L2-normalized)
//   8..11  dim (u32)
//   12..19 count (u64)
//   20..23 metadata length M (u32)
//   M bytes of UTF-8 JSON {"kind","ids","labels","taxonomy"?,"model","template"}
//   count*dim float32, row-major

#include "zsoc/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

namespace zsoc {

enum class EmbeddingKind { image, text };

inline std::string_view kind_name(EmbeddingKind k) { return k == EmbeddingKind::image ? "image" : "text"; }

using TaxonomyPath = std::vector<std::string>;

struct EmbeddingSet {
    EmbeddingKind kind = EmbeddingKind::image;
    std::uint32_t dim = 0;
    std::vector<float> vectors; // count * dim, row-major
    std::vector<std::string> ids;
    std::vector<std::string> labels;
    std::optional<std::vector<TaxonomyPath>> taxonomy_paths;
    std::string model_tag;
    std::string template_text;
    bool pre_normalized = false;

    std::size_t count() const noexcept { return ids.size(); }

    std::span<const float> row(std::size_t i) const noexcept {
        return {vectors.data() + i * dim, dim};
    }

    friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

/// Throws invariant_violation / duplicate_id / invalid_data on the first broken invariant.
inline void validate(const EmbeddingSet& set) {
    const std::size_t n = set.ids.size();
    if (set.dim == 0) throw Error(Errc::invalid_data, "dim must be positive");
    if (set.labels.size() != n)
        throw Error(Errc::metadata_mismatch, "labels size " + std::to_string(set.labels.size()) +
                                                 " != ids size " + std::to_string(n));
    if (set.vectors.size() != n * set.dim)
        throw Error(Errc::metadata_mismatch, "vector payload does not match count*dim");
    std::unordered_set<std::string> seen;
    seen.reserve(n);
    for (const auto& id : set.ids)
        if (!seen.insert(id).second) throw Error(Errc::duplicate_id, "duplicate id '" + id + "'");
    for (std::size_t i = 0; i < set.vectors.size(); ++i)
        if (!std::isfinite(set.vectors[i]))
            throw Error(Errc::invalid_data, "non-finite component in row " + std::to_string(i / set.dim));
    if (set.taxonomy_paths) {
        if (set.taxonomy_paths->size() != n)
            throw Error(Errc::metadata_mismatch, "taxonomy size does not match count");
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = (*set.taxonomy_paths)[i];
            if (p.empty()) throw Error(Errc::invalid_data, "empty taxonomy path for '" + set.ids[i] + "'");
            if (p.back() != set.labels[i])
                throw Error(Errc::invalid_data, "taxonomy leaf '" + p.back() + "' != label '" + set.labels[i] + "'");
        }
    }
}

namespace detail {

inline constexpr std::array<char, 4> emb_magic{'E', 'M', 'B', '1'};
inline constexpr std::uint16_t emb_version = 1;
inline constexpr std::size_t emb_header_size = 24;

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

inline nlohmann::json metadata_json(const EmbeddingSet& set) {
    nlohmann::json meta;
    meta["kind"] = kind_name(set.kind);
    meta["ids"] = set.ids;
    meta["labels"] = set.labels;
    if (set.taxonomy_paths) meta["taxonomy"] = *set.taxonomy_paths;
    meta["model"] = set.model_tag;
    meta["template"] = set.template_text;
    return meta;
}

} // namespace detail

inline std::string encode_embedding_set(const EmbeddingSet& set) {
    validate(set);
    const std::string meta = detail::metadata_json(set).dump();
    std::string out;
    out.reserve(detail::emb_header_size + meta.size() + set.vectors.size() * 4);
    out.append(detail::emb_magic.data(), detail::emb_magic.size());
    detail::put_le<std::uint16_t>(out, detail::emb_version);
    detail::put_le<std::uint16_t>(out, set.pre_normalized ? 1u : 0u);
    detail::put_le<std::uint32_t>(out, set.dim);
    detail::put_le<std::uint64_t>(out, set.count());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    for (float f : set.vectors) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

inline EmbeddingSet decode_embedding_set(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || !std::equal(detail::emb_magic.begin(), detail::emb_magic.end(), bytes.begin()))
        throw Error(Errc::bad_magic, "missing EMB1 magic");
    if (bytes.size() < detail::emb_header_size) throw Error(Errc::truncated_payload, "header shorter than 24 bytes");
    const unsigned char* p = bytes.data();
    const auto version = detail::get_le<std::uint16_t>(p + 4);
    if (version != detail::emb_version)
        throw Error(Errc::version_unsupported, "EMB1 version " + std::to_string(version));
    const auto flags = detail::get_le<std::uint16_t>(p + 6);
    const auto dim = detail::get_le<std::uint32_t>(p + 8);
    const auto count = detail::get_le<std::uint64_t>(p + 12);
    const auto meta_len = detail::get_le<std::uint32_t>(p + 20);

    if (bytes.size() - detail::emb_header_size < meta_len) throw Error(Errc::truncated_payload, "metadata truncated");
    const std::string_view meta_text(reinterpret_cast<const char*>(p + detail::emb_header_size), meta_len);

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::metadata_mismatch, std::string("metadata is not valid JSON: ") + e.what());
    }

    EmbeddingSet set;
    try {
        const auto kind = meta.at("kind").get<std::string>();
        if (kind == "image") set.kind = EmbeddingKind::image;
        else if (kind == "text") set.kind = EmbeddingKind::text;
        else throw Error(Errc::metadata_mismatch, "unknown kind '" + kind + "'");
        set.ids = meta.at("ids").get<std::vector<std::string>>();
        set.labels = meta.at("labels").get<std::vector<std::string>>();
        if (meta.contains("taxonomy") && !meta["taxonomy"].is_null())
            set.taxonomy_paths = meta["taxonomy"].get<std::vector<TaxonomyPath>>();
        set.model_tag = meta.value("model", "");
        set.template_text = meta.value("template", "");
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::metadata_mismatch, std::string("bad metadata field: ") + e.what());
    }
    if (set.ids.size() != count || set.labels.size() != count)
        throw Error(Errc::metadata_mismatch, "header count " + std::to_string(count) + " disagrees with metadata (" +
                                                 std::to_string(set.ids.size()) + " ids)");
    if (dim == 0) throw Error(Errc::metadata_mismatch, "dim is zero");

    const std::size_t payload_offset = detail::emb_header_size + meta_len;
    const std::size_t available = bytes.size() - payload_offset;
    const std::uint64_t needed = count * std::uint64_t{dim} * 4;
    if (available < needed)
        throw Error(Errc::truncated_payload, "payload holds " + std::to_string(available / 4) + " floats, expected " +
                                                 std::to_string(needed / 4));
    if (available > needed) throw Error(Errc::metadata_mismatch, "trailing bytes after payload");

    set.dim = dim;
    set.pre_normalized = (flags & 1u) != 0;
    set.vectors.resize(count * dim);
    const unsigned char* payload = p + payload_offset;
    for (std::size_t i = 0; i < set.vectors.size(); ++i)
        set.vectors[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload + 4 * i));
    validate(set);
    return set;
}

inline EmbeddingSet read_embedding_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_embedding_set(bytes);
}

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io_failure, "cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(Errc::io_failure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::io_failure, "rename to " + path.string() + " failed: " + ec.message());
}

inline void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path) {
    write_file_atomic(path, encode_embedding_set(set));
}

// ---------------------------------------------------------------------------
// Row selection

struct LabelEquals {
    std::string label;
};

struct PathPrefix {
    TaxonomyPath prefix;
};

using RowPredicate = std::variant<LabelEquals, PathPrefix>;

inline bool row_matches(const EmbeddingSet& set, std::size_t i, const RowPredicate& pred) {
    if (const auto* l = std::get_if<LabelEquals>(&pred)) return set.labels[i] == l->label;
    const auto& prefix = std::get<PathPrefix>(pred).prefix;
    if (!set.taxonomy_paths) return false;
    const auto& path = (*set.taxonomy_paths)[i];
    return prefix.size() <= path.size() && std::equal(prefix.begin(), prefix.end(), path.begin());
}

inline std::vector<std::size_t> select(const EmbeddingSet& set, const RowPredicate& pred) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < set.count(); ++i)
        if (row_matches(set, i, pred)) out.push_back(i);
    return out;
}

/// Distinct labels in first-appearance order.
inline std::vector<std::string> distinct_labels(const EmbeddingSet& set) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& l : set.labels)
        if (seen.insert(l).second) out.push_back(l);
    return out;
}

/// Label -> text embedding lookup over one or more text sets. Earlier sets win when a
/// label appears in several; the referenced sets must outlive the table.
class PrototypeTable {
public:
    PrototypeTable() = default;

    explicit PrototypeTable(const EmbeddingSet& set) { add(set); }

    void add(const EmbeddingSet& set) {
        if (dim_ != 0 && set.dim != dim_) throw Error(Errc::dimension_mismatch, "prototype sets differ in dim");
        dim_ = set.dim;
        for (std::size_t i = 0; i < set.count(); ++i) rows_.try_emplace(set.labels[i], set.row(i));
    }

    std::optional<std::span<const float>> find(const std::string& label) const {
        auto it = rows_.find(label);
        if (it == rows_.end()) return std::nullopt;
        return it->second;
    }

    std::span<const float> at(const std::string& label) const {
        auto row = find(label);
        if (!row) throw Error(Errc::missing_prototype, "no text embedding for '" + label + "'");
        return *row;
    }

    std::uint32_t dim() const noexcept { return dim_; }

private:
    std::uint32_t dim_ = 0;
    std::map<std::string, std::span<const float>> rows_;
};

// ---------------------------------------------------------------------------
// Taxonomy

/// Tree stored as a flat node array; node 0 is the root.
class Taxonomy {
public:
    struct Node {
        std::string name;
        std::optional<std::size_t> parent;
        std::vector<std::size_t> children;
        std::size_t depth = 0; // root has depth 0
    };

    static Taxonomy from_json(const nlohmann::json& doc) {
        Taxonomy t;
        t.add_node(doc, std::nullopt);
        return t;
    }

    static Taxonomy load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::parse_error, path.string() + ": " + e.what());
        }
        return from_json(doc);
    }

    nlohmann::json to_json(std::size_t node = 0) const {
        nlohmann::json children = nlohmann::json::array();
        for (auto c : nodes_[node].children) children.push_back(to_json(c));
        return {{"name", nodes_[node].name}, {"children", children}};
    }

    const Node& node(std::size_t i) const { return nodes_[i]; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t root() const noexcept { return 0; }
    bool is_leaf(std::size_t i) const { return nodes_[i].children.empty(); }

    /// Leaves in depth-first (document) order.
    const std::vector<std::size_t>& leaves() const noexcept { return leaves_; }

    TaxonomyPath path_of(std::size_t i) const {
        TaxonomyPath p;
        for (std::optional<std::size_t> n = i; n; n = nodes_[*n].parent) p.push_back(nodes_[*n].name);
        std::reverse(p.begin(), p.end());
        return p;
    }

    std::optional<std::size_t> find(const TaxonomyPath& path) const {
        if (path.empty() || nodes_.empty() || nodes_[0].name != path[0]) return std::nullopt;
        std::size_t cur = 0;
        for (std::size_t i = 1; i < path.size(); ++i) {
            auto it = std::find_if(nodes_[cur].children.begin(), nodes_[cur].children.end(),
                                   [&](std::size_t c) { return nodes_[c].name == path[i]; });
            if (it == nodes_[cur].children.end()) return std::nullopt;
            cur = *it;
        }
        return cur;
    }

    /// The `level`-th ancestor (0 = the node itself), or nullopt when above the root.
    std::optional<std::size_t> ancestor(std::size_t node, std::size_t level) const {
        if (level > nodes_[node].depth) return std::nullopt;
        std::size_t cur = node;
        for (std::size_t i = 0; i < level; ++i) cur = *nodes_[cur].parent;
        return cur;
    }

    bool in_subtree(std::size_t node, std::size_t subtree_root) const {
        for (std::optional<std::size_t> n = node; n; n = nodes_[*n].parent)
            if (*n == subtree_root) return true;
        return false;
    }

    /// Names of every node in the subtree (including its root), document order.
    std::vector<std::string> subtree_names(std::size_t subtree_root) const {
        std::vector<std::string> out;
        std::vector<std::size_t> stack{subtree_root};
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            out.push_back(nodes_[n].name);
            for (auto it = nodes_[n].children.rbegin(); it != nodes_[n].children.rend(); ++it) stack.push_back(*it);
        }
        return out;
    }

    /// Every taxonomy path in `set` must name an existing leaf.
    void check_paths(const EmbeddingSet& set) const {
        if (!set.taxonomy_paths) return;
        for (std::size_t i = 0; i < set.count(); ++i) {
            auto n = find((*set.taxonomy_paths)[i]);
            if (!n || !is_leaf(*n))
                throw Error(Errc::invariant_violation, "row '" + set.ids[i] + "' references a leaf missing from the taxonomy");
        }
    }

private:
    std::size_t add_node(const nlohmann::json& j, std::optional<std::size_t> parent) {
        if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
            throw Error(Errc::parse_error, "taxonomy node needs a string \"name\"");
        const std::size_t id = nodes_.size();
        nodes_.push_back({j["name"].get<std::string>(), parent, {}, parent ? nodes_[*parent].depth + 1 : 0});
        const auto children = j.value("children", nlohmann::json::array());
        if (!children.is_array()) throw Error(Errc::parse_error, "\"children\" must be an array");
        std::unordered_set<std::string> names;
        for (const auto& c : children) {
            const auto child = add_node(c, id);
            if (!names.insert(nodes_[child].name).second)
                throw Error(Errc::invariant_violation, "duplicate child '" + nodes_[child].name + "' under '" +
                                                           nodes_[id].name + "'");
            nodes_[id].children.push_back(child);
        }
        if (nodes_[id].children.empty()) leaves_.push_back(id);
        return id;
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> leaves_;
};

} // namespace zsoc
