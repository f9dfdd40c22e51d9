#include "coursepilot/ingest.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "coursepilot/error.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::ingest {

namespace fs = std::filesystem;

std::string header_label(const Section& section) {
    return text::join(section.header_path, " > ");
}

namespace {

bool glob_match(const std::string& pattern, const std::string& value) {
    return ::fnmatch(pattern.c_str(), value.c_str(), 0) == 0;
}

std::string infer_kind(const std::string& rel_path, const ChunkRules& rules) {
    const auto lowered = text::ascii_lower(rel_path);
    for (const auto& rule : rules.kind_rules) {
        if (glob_match(rule.glob, lowered)) return rule.kind;
    }
    return rules.default_kind;
}

std::optional<std::string> read_file(const fs::path& path, std::string& error) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        error = "cannot open file";
        return std::nullopt;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        error = "read failed";
        return std::nullopt;
    }
    return buf.str();
}

bool is_stripped(UChar32 c) {
    if (c == '\n' || c == '\t') return false;
    if (c < 0x20 || (c >= 0x7F && c <= 0x9F)) return true;  // C0 / DEL / C1
    switch (c) {
        case 0x00AD:  // soft hyphen
        case 0x200B: case 0x200C: case 0x200D: case 0x200E: case 0x200F:
        case 0x2060: case 0xFEFF:
            return true;
        default:
            return false;
    }
}

bool is_horizontal_space(UChar32 c) {
    return c == '\t' || c == 0x0B || c == 0x0C || c == 0x00A0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x202F || c == 0x205F || c == 0x3000;
}

// Line-break normalization, control/zero-width stripping, exotic spaces -> ' ', then NFC.
std::string normalize_code_points(std::string_view raw) {
    const auto src = icu::UnicodeString::fromUTF8(
        icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
    icu::UnicodeString filtered;
    for (int32_t i = 0; i < src.length();) {
        const UChar32 c = src.char32At(i);
        i += U16_LENGTH(c);
        if (c == '\r') {
            filtered.append(static_cast<UChar32>('\n'));
            if (i < src.length() && src.charAt(i) == '\n') ++i;
        } else if (c == 0x2028 || c == 0x2029) {
            filtered.append(static_cast<UChar32>('\n'));
        } else if (is_horizontal_space(c)) {
            filtered.append(static_cast<UChar32>(' '));
        } else if (!is_stripped(c)) {
            filtered.append(c);
        }
    }
    UErrorCode status = U_ZERO_ERROR;
    const auto* nfc = icu::Normalizer2::getNFCInstance(status);
    icu::UnicodeString normalized;
    if (U_SUCCESS(status)) normalized = nfc->normalize(filtered, status);
    if (U_FAILURE(status)) normalized = filtered;
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

struct HeaderMatch {
    std::size_t level;
    std::string title;
};

class HeaderMatcher {
public:
    explicit HeaderMatcher(const std::vector<std::string>& patterns) {
        for (const auto& p : patterns) regexes_.emplace_back(p, std::regex::ECMAScript);
    }

    std::optional<HeaderMatch> match(const std::string& line) const {
        std::smatch m;
        for (const auto& re : regexes_) {
            if (std::regex_match(line, m, re) && m.size() >= 3) {
                auto title = std::string(text::trim(m[2].str()));
                if (title.empty()) title = m[1].str();
                return HeaderMatch{std::max<std::size_t>(1, m[1].length()), std::move(title)};
            }
        }
        return std::nullopt;
    }

private:
    std::vector<std::regex> regexes_;
};

std::string trim_blank_lines(const std::vector<std::string>& lines) {
    std::size_t b = 0;
    std::size_t e = lines.size();
    while (b < e && lines[b].empty()) ++b;
    while (e > b && lines[e - 1].empty()) --e;
    return text::join(std::vector<std::string>(lines.begin() + b, lines.begin() + e), "\n");
}

}  // namespace

LoadResult load_documents(const fs::path& input_dir, const std::vector<std::string>& include_globs,
                          const ChunkRules& rules) {
    std::error_code ec;
    if (!fs::is_directory(input_dir, ec)) {
        throw Error(ErrorCode::Io, "input directory not readable: " + input_dir.string());
    }

    std::vector<std::pair<std::string, fs::path>> matched;
    for (fs::recursive_directory_iterator it(input_dir, ec), end; !ec && it != end; it.increment(ec)) {
        if (it->is_directory(ec)) continue;
        const auto rel = fs::relative(it->path(), input_dir, ec).generic_string();
        const auto name = it->path().filename().string();
        const bool included = std::any_of(include_globs.begin(), include_globs.end(), [&](const auto& g) {
            return glob_match(g, rel) || glob_match(g, name);
        });
        if (included) matched.emplace_back(rel, it->path());
    }
    if (ec) throw Error(ErrorCode::Io, "cannot list " + input_dir.string() + ": " + ec.message());
    std::sort(matched.begin(), matched.end());

    LoadResult result;
    for (const auto& [rel, path] : matched) {
        std::string why;
        auto content = read_file(path, why);
        if (!content) {
            result.errors.push_back({rel, why});
            continue;
        }
        if (!text::is_valid_utf8(*content)) {
            result.errors.push_back({rel, "not valid UTF-8"});
            continue;
        }
        if (text::trim(*content).empty()) {
            result.errors.push_back({rel, "empty file"});
            continue;
        }
        Document doc;
        doc.id = rel;
        doc.source_path = path.string();
        doc.title = path.stem().string();
        doc.raw_text = std::move(*content);
        doc.metadata["kind"] = infer_kind(rel, rules);
        result.documents.push_back(std::move(doc));
    }
    if (result.documents.empty()) {
        throw Error(ErrorCode::EmptyCorpus, std::to_string(matched.size()) + " matching file(s) under " +
                                                input_dir.string() + ", none loadable");
    }
    return result;
}

std::string clean_text(std::string_view raw) {
    const auto normalized = normalize_code_points(raw);

    std::vector<std::string> paragraphs;
    std::vector<std::string> current;
    auto flush = [&] {
        if (current.empty()) return;
        auto para = text::join(current, "\n");
        current.clear();
        if (!paragraphs.empty() && paragraphs.back() == para) return;
        paragraphs.push_back(std::move(para));
    };
    for (const auto& line : text::split_lines(normalized)) {
        auto collapsed = text::collapse_whitespace(line);
        if (collapsed.empty()) {
            flush();
        } else {
            current.push_back(std::move(collapsed));
        }
    }
    flush();
    return text::join(paragraphs, "\n\n");
}

std::vector<Section> chunk_document(const Document& doc, const ChunkRules& rules) {
    const HeaderMatcher matcher(rules.header_patterns);
    const std::string root = doc.title.empty() ? rules.title_fallback : doc.title;

    std::vector<Section> sections;
    std::vector<std::pair<std::size_t, std::string>> stack;  // (level, header)
    std::vector<std::string> header_path{root};
    std::vector<std::string> body_lines;
    std::size_t region = 0;

    auto close_region = [&] {
        auto body = trim_blank_lines(body_lines);
        body_lines.clear();
        if (!body.empty()) {
            Section s;
            s.id = doc.id + ":" + std::to_string(region);
            s.doc_id = doc.id;
            s.header_path = header_path;
            s.approx_token_count = text::approx_tokens(body);
            s.body = std::move(body);
            sections.push_back(std::move(s));
        }
        ++region;
    };

    for (const auto& line : text::split_lines(doc.raw_text)) {
        if (auto h = matcher.match(line)) {
            close_region();
            while (!stack.empty() && stack.back().first >= h->level) stack.pop_back();
            stack.emplace_back(h->level, h->title);
            header_path.clear();
            for (const auto& entry : stack) header_path.push_back(entry.second);
        } else {
            body_lines.push_back(line);
        }
    }
    close_region();
    return sections;
}

IngestResult ingest_directory(const fs::path& input_dir, const ChunkRules& rules) {
    auto loaded = load_documents(input_dir, rules.include_globs, rules);
    IngestResult result;
    result.errors = std::move(loaded.errors);
    result.document_count = loaded.documents.size();
    for (auto& doc : loaded.documents) {
        doc.raw_text = clean_text(doc.raw_text);
        auto sections = chunk_document(doc, rules);
        std::move(sections.begin(), sections.end(), std::back_inserter(result.sections));
    }
    return result;
}

}  // namespace coursepilot::ingest
