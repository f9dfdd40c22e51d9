#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace coursepilot::ingest {

struct Document {
    std::string id;  // path relative to the input directory, '/'-separated
    std::string source_path;
    std::string title;
    std::string raw_text;
    std::map<std::string, std::string> metadata;  // "kind": textbook|slides|syllabus|supplement
};

/// A header-delimited chunk of a document; the unit of retrieval.
struct Section {
    std::string id;
    std::string doc_id;
    std::vector<std::string> header_path;  // root -> leaf, never empty
    std::string body;
    std::size_t approx_token_count = 0;

    friend bool operator==(const Section&, const Section&) = default;
};

/// "A > B > C", the text that is embedded and cited for a section.
std::string header_label(const Section& section);

struct KindRule {
    std::string glob;  // fnmatch pattern, matched against the lower-cased relative path
    std::string kind;
};

struct ChunkRules {
    /// ECMAScript regexes tried in order against each line. Capture group 1 is
    /// the level marker (its length is the depth), group 2 is the header text.
    std::vector<std::string> header_patterns{R"(^(#{1,6})[ \t]+(.*?)[ \t]*#*[ \t]*$)"};
    /// Used as the synthetic root header when a document has no title.
    std::string title_fallback = "Untitled";
    std::vector<std::string> include_globs{"*.md", "*.txt"};
    std::vector<KindRule> kind_rules{
        {"*syllabus*", "syllabus"}, {"*schedule*", "syllabus"}, {"*slide*", "slides"},
        {"*textbook*", "textbook"}, {"*chapter*", "textbook"},
    };
    std::string default_kind = "supplement";
};

struct LoadError {
    std::string path;
    std::string message;
};

struct LoadResult {
    std::vector<Document> documents;
    std::vector<LoadError> errors;
};

/// Loads every file under `input_dir` whose relative path or file name matches
/// one of `include_globs`, in lexicographic path order. Per-file failures are
/// collected in `errors`; throws EmptyCorpus when nothing could be loaded.
LoadResult load_documents(const std::filesystem::path& input_dir,
                          const std::vector<std::string>& include_globs,
                          const ChunkRules& rules = {});

/// Strips control and zero-width characters, applies NFC, collapses horizontal
/// whitespace, keeps line breaks, reduces blank-line runs to one blank line and
/// drops consecutive duplicate paragraphs. Idempotent.
std::string clean_text(std::string_view raw);

/// Splits a cleaned document into one section per header-delimited region.
/// Text before the first header is filed under [doc.title]; empty regions are dropped.
std::vector<Section> chunk_document(const Document& doc, const ChunkRules& rules = {});

struct IngestResult {
    std::vector<Section> sections;
    std::vector<LoadError> errors;
    std::size_t document_count = 0;
};

/// load_documents -> clean_text -> chunk_document for a whole directory.
IngestResult ingest_directory(const std::filesystem::path& input_dir, const ChunkRules& rules = {});

}  // namespace coursepilot::ingest
