#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coursepilot/embed.hpp"
#include "coursepilot/ingest.hpp"

namespace coursepilot::kb {

using ingest::Section;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kBodyPrefixChars = 512;

enum class EmbedTarget { HeaderOnly, HeaderPlusBodyPrefix };

std::string_view to_string(EmbedTarget target) noexcept;
/// Accepts "header_only"/"header" and "header_plus_body_prefix"/"header+body".
EmbedTarget parse_embed_target(std::string_view name);

struct RetrievalConfig {
    double p = 0.95;
    double softmax_temperature = 0.1;
    std::size_t max_sections = 8;
    EmbedTarget embed_target = EmbedTarget::HeaderOnly;

    void validate() const;
};

void to_json(nlohmann::json& j, const RetrievalConfig& cfg);
void from_json(const nlohmann::json& j, RetrievalConfig& cfg);

struct KnowledgeBase {
    std::string kb_id;
    embed::EmbedderSpec embedder;
    EmbedTarget embed_target = EmbedTarget::HeaderOnly;
    std::vector<Section> sections;
    std::vector<embed::EmbeddingVector> header_vectors;  // parallel to sections, float32-exact
    std::int64_t created_at = 0;                         // unix seconds
    std::uint32_t format_version = kFormatVersion;

    const Section* find_section(std::string_view id) const;
};

/// The text embedded for a section: its header label, optionally followed by
/// the first kBodyPrefixChars code points of the body.
std::string embed_target_text(const Section& section, EmbedTarget target);

struct BuildOptions {
    std::optional<std::string> kb_id;      // default: content hash
    std::optional<std::int64_t> created_at;  // default: SOURCE_DATE_EPOCH, else now
};

/// Throws EmptyKB for an empty section list; provider errors propagate.
KnowledgeBase build_kb(std::vector<Section> sections, const embed::Embedder& embedder, const RetrievalConfig& cfg,
                       const BuildOptions& options = {});

/// softmax(sims / temperature) with max subtraction.
std::vector<double> similarities_to_probabilities(std::span<const double> sims, double temperature);

/// Smallest prefix of a descending distribution whose cumulative mass is >= p,
/// as a list of indices. Never empty; p >= 1 selects everything. Throws
/// ContractViolation for unsorted input or mass that does not sum to 1.
std::vector<std::size_t> select_top_p(std::span<const double> probs_desc, double p);

struct RetrievalResult {
    std::string section_id;
    double similarity = 0.0;
    double probability = 0.0;
    std::size_t rank = 0;  // 1-based
};

struct Retrieval {
    std::vector<RetrievalResult> results;  // selected, rank order
    std::vector<Section> sections;         // full sections for `results`, same order
    std::vector<RetrievalResult> candidates;  // every section, rank order
};

/// Ranks every section against an already embedded query: similarity
/// descending, ties broken by section order.
Retrieval rank(const KnowledgeBase& kb, const embed::EmbeddingVector& query, const RetrievalConfig& cfg);

Retrieval retrieve(const KnowledgeBase& kb, const std::string& query, const RetrievalConfig& cfg,
                   const embed::Embedder& embedder);

/// Binary layout: "CPKB", u32 header length, header JSON, float32 vector
/// block, CRC32 of everything before it. All integers little-endian.
std::string serialize(const KnowledgeBase& kb);
KnowledgeBase deserialize(std::string_view bytes);

/// Writes via a temporary file and rename.
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
KnowledgeBase load_kb(const std::filesystem::path& path);

}  // namespace coursepilot::kb
