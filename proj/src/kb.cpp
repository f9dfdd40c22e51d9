#include "coursepilot/kb.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "coursepilot/error.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::kb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(EmbedTarget target) noexcept {
    return target == EmbedTarget::HeaderOnly ? "header_only" : "header_plus_body_prefix";
}

EmbedTarget parse_embed_target(std::string_view name) {
    if (name == "header_only" || name == "header") return EmbedTarget::HeaderOnly;
    if (name == "header_plus_body_prefix" || name == "header+body") return EmbedTarget::HeaderPlusBodyPrefix;
    throw Error(ErrorCode::InvalidConfig, "unknown embed target: " + std::string(name));
}

void RetrievalConfig::validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidConfig, "retrieval p must be in (0, 1]");
    if (!(softmax_temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "softmax_temperature must be > 0");
    if (max_sections == 0) throw Error(ErrorCode::InvalidConfig, "max_sections must be positive");
}

void to_json(json& j, const RetrievalConfig& cfg) {
    j = json{{"p", cfg.p},
             {"softmax_temperature", cfg.softmax_temperature},
             {"max_sections", cfg.max_sections},
             {"embed_target", to_string(cfg.embed_target)}};
}

void from_json(const json& j, RetrievalConfig& cfg) {
    cfg.p = j.value("p", cfg.p);
    cfg.softmax_temperature = j.value("softmax_temperature", cfg.softmax_temperature);
    cfg.max_sections = j.value("max_sections", cfg.max_sections);
    if (j.contains("embed_target")) cfg.embed_target = parse_embed_target(j["embed_target"].get<std::string>());
}

const Section* KnowledgeBase::find_section(std::string_view id) const {
    const auto it = std::find_if(sections.begin(), sections.end(), [&](const Section& s) { return s.id == id; });
    return it == sections.end() ? nullptr : &*it;
}

std::string embed_target_text(const Section& section, EmbedTarget target) {
    auto label = ingest::header_label(section);
    if (target == EmbedTarget::HeaderPlusBodyPrefix) {
        label += "\n";
        label += text::truncate_code_points(section.body, kBodyPrefixChars);
    }
    return label;
}

namespace {

std::string content_hash_id(const std::vector<Section>& sections, const embed::EmbedderSpec& spec,
                            EmbedTarget target) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xFF;
        h *= 0x100000001b3ULL;
    };
    feed(spec.model_id);
    feed(std::to_string(spec.dims));
    feed(to_string(target));
    for (const auto& s : sections) {
        feed(s.id);
        feed(ingest::header_label(s));
        feed(s.body);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string("kb-") + buf;
}

std::int64_t default_created_at() {
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
        char* end = nullptr;
        const auto v = std::strtoll(epoch, &end, 10);
        if (end && *end == '\0') return v;
    }
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    constexpr std::size_t kChunk = 1U << 30;
    for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
        const auto len = std::min(kChunk, bytes.size() - off);
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(len));
    }
    return static_cast<std::uint32_t>(crc);
}

constexpr std::string_view kMagic = "CPKB";

}  // namespace

KnowledgeBase build_kb(std::vector<Section> sections, const embed::Embedder& embedder, const RetrievalConfig& cfg,
                       const BuildOptions& options) {
    cfg.validate();
    if (sections.empty()) throw Error(ErrorCode::EmptyKB, "no sections to index");
    {
        std::vector<std::string_view> ids;
        for (const auto& s : sections) ids.push_back(s.id);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw Error(ErrorCode::PreconditionViolation, "duplicate section ids");
        }
    }

    std::vector<std::string> targets;
    targets.reserve(sections.size());
    for (const auto& s : sections) targets.push_back(embed_target_text(s, cfg.embed_target));
    auto vectors = embedder.embed(targets);
    for (auto& v : vectors) {
        for (double& x : v.values) x = static_cast<double>(static_cast<float>(x));
    }

    KnowledgeBase kb;
    kb.kb_id = options.kb_id ? *options.kb_id : content_hash_id(sections, embedder.spec(), cfg.embed_target);
    kb.embedder = embedder.spec();
    kb.embed_target = cfg.embed_target;
    kb.created_at = options.created_at ? *options.created_at : default_created_at();
    kb.sections = std::move(sections);
    kb.header_vectors = std::move(vectors);
    return kb;
}

std::vector<double> similarities_to_probabilities(std::span<const double> sims, double temperature) {
    if (sims.empty()) throw Error(ErrorCode::PreconditionViolation, "no similarities");
    if (!(temperature > 0.0)) throw Error(ErrorCode::PreconditionViolation, "temperature must be > 0");
    for (double s : sims) {
        if (!std::isfinite(s)) throw Error(ErrorCode::PreconditionViolation, "non-finite similarity");
    }
    const double max = *std::max_element(sims.begin(), sims.end());
    std::vector<double> out(sims.size());
    double z = 0.0;
    for (std::size_t i = 0; i < sims.size(); ++i) {
        out[i] = std::exp((sims[i] - max) / temperature);
        z += out[i];
    }
    for (double& x : out) x /= z;
    return out;
}

std::vector<std::size_t> select_top_p(std::span<const double> probs_desc, double p) {
    if (probs_desc.empty()) throw Error(ErrorCode::ContractViolation, "empty distribution");
    if (!(p > 0.0)) throw Error(ErrorCode::ContractViolation, "p must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < probs_desc.size(); ++i) {
        if (!(probs_desc[i] >= 0.0)) throw Error(ErrorCode::ContractViolation, "negative or NaN probability");
        if (i > 0 && probs_desc[i] > probs_desc[i - 1]) {
            throw Error(ErrorCode::ContractViolation, "probabilities not sorted descending at " + std::to_string(i));
        }
        total += probs_desc[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::ContractViolation, "probabilities do not sum to 1");

    std::vector<std::size_t> selected;
    if (p >= 1.0) {
        selected.resize(probs_desc.size());
        std::iota(selected.begin(), selected.end(), std::size_t{0});
        return selected;
    }
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs_desc.size(); ++i) {
        selected.push_back(i);
        cumulative += probs_desc[i];
        if (cumulative >= p) break;
    }
    return selected;
}

Retrieval rank(const KnowledgeBase& kb, const embed::EmbeddingVector& query, const RetrievalConfig& cfg) {
    cfg.validate();
    if (kb.sections.empty()) throw Error(ErrorCode::EmptyKB, "knowledge base has no sections");

    const auto n = kb.sections.size();
    std::vector<double> sims(n);
    for (std::size_t i = 0; i < n; ++i) sims[i] = embed::cosine_similarity(query, kb.header_vectors[i]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });

    std::vector<double> sorted_sims(n);
    for (std::size_t r = 0; r < n; ++r) sorted_sims[r] = sims[order[r]];
    const auto probs = similarities_to_probabilities(sorted_sims, cfg.softmax_temperature);

    Retrieval out;
    out.candidates.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        out.candidates.push_back({kb.sections[order[r]].id, sorted_sims[r], probs[r], r + 1});
    }
    auto selected = select_top_p(probs, cfg.p);
    if (selected.size() > cfg.max_sections) selected.resize(cfg.max_sections);
    for (auto r : selected) {
        out.results.push_back(out.candidates[r]);
        out.sections.push_back(kb.sections[order[r]]);
    }
    return out;
}

Retrieval retrieve(const KnowledgeBase& kb, const std::string& query, const RetrievalConfig& cfg,
                   const embed::Embedder& embedder) {
    if (text::trim(query).empty()) throw Error(ErrorCode::PreconditionViolation, "empty query");
    if (embedder.spec().dims != kb.embedder.dims) {
        throw Error(ErrorCode::DimsMismatch, "query embedder dims differ from the knowledge base");
    }
    return rank(kb, embedder.embed_one(query), cfg);
}

std::string serialize(const KnowledgeBase& kb) {
    const auto dims = kb.embedder.dims;
    if (kb.header_vectors.size() != kb.sections.size()) {
        throw Error(ErrorCode::ContractViolation, "sections and vectors differ in length");
    }
    json table = json::array();
    for (std::size_t i = 0; i < kb.sections.size(); ++i) {
        const auto& s = kb.sections[i];
        if (kb.header_vectors[i].dims() != dims) throw Error(ErrorCode::DimsMismatch, "vector dims differ from spec");
        table.push_back({{"id", s.id},
                         {"doc_id", s.doc_id},
                         {"header_path", s.header_path},
                         {"body", s.body},
                         {"approx_token_count", s.approx_token_count},
                         {"vector_offset", i * dims * sizeof(float)}});
    }
    const json header{{"format_version", kb.format_version},
                      {"kb_id", kb.kb_id},
                      {"created_at", kb.created_at},
                      {"embedder", kb.embedder},
                      {"embed_target", to_string(kb.embed_target)},
                      {"dims", dims},
                      {"section_count", kb.sections.size()},
                      {"sections", table}};
    const auto header_text = header.dump();

    std::string out(kMagic);
    put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    out.reserve(out.size() + kb.sections.size() * dims * 4 + 4);
    for (const auto& v : kb.header_vectors) {
        for (double x : v.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
    put_u32(out, crc32_of(out));
    return out;
}

KnowledgeBase deserialize(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + 8) throw Error(ErrorCode::ChecksumError, "file too short");
    const auto body = bytes.substr(0, bytes.size() - 4);
    if (get_u32(bytes, bytes.size() - 4) != crc32_of(body)) throw Error(ErrorCode::ChecksumError, "CRC32 mismatch");
    if (bytes.substr(0, kMagic.size()) != kMagic) throw Error(ErrorCode::IncompatibleKB, "not a knowledge base file");

    const auto header_len = get_u32(bytes, kMagic.size());
    const auto header_start = kMagic.size() + 4;
    if (header_start + header_len > body.size()) throw Error(ErrorCode::ChecksumError, "header overruns file");
    const auto header = json::parse(body.substr(header_start, header_len), nullptr, false);
    if (header.is_discarded() || !header.is_object()) throw Error(ErrorCode::ChecksumError, "unreadable header");

    const auto version = header.value("format_version", 0U);
    if (version != kFormatVersion) {
        throw Error(ErrorCode::IncompatibleKB, "format_version " + std::to_string(version) + ", expected " +
                                                   std::to_string(kFormatVersion));
    }

    try {
        KnowledgeBase kb;
        kb.format_version = version;
        kb.kb_id = header.at("kb_id").get<std::string>();
        kb.created_at = header.at("created_at").get<std::int64_t>();
        kb.embedder = header.at("embedder").get<embed::EmbedderSpec>();
        kb.embed_target = parse_embed_target(header.at("embed_target").get<std::string>());
        const auto dims = header.at("dims").get<std::size_t>();
        if (dims != kb.embedder.dims) throw Error(ErrorCode::ChecksumError, "dims disagree with embedder spec");

        const auto block = body.substr(header_start + header_len);
        const auto& table = header.at("sections");
        if (block.size() != table.size() * dims * sizeof(float)) {
            throw Error(ErrorCode::ChecksumError, "vector block size mismatch");
        }
        for (const auto& row : table) {
            ingest::Section s;
            s.id = row.at("id").get<std::string>();
            s.doc_id = row.at("doc_id").get<std::string>();
            s.header_path = row.at("header_path").get<std::vector<std::string>>();
            s.body = row.at("body").get<std::string>();
            s.approx_token_count = row.at("approx_token_count").get<std::size_t>();
            const auto offset = row.at("vector_offset").get<std::size_t>();
            if (offset + dims * sizeof(float) > block.size()) {
                throw Error(ErrorCode::ChecksumError, "vector offset out of range");
            }
            embed::EmbeddingVector v;
            v.model_id = kb.embedder.model_id;
            v.values.resize(dims);
            for (std::size_t k = 0; k < dims; ++k) {
                v.values[k] = static_cast<double>(std::bit_cast<float>(get_u32(block, offset + k * 4)));
            }
            kb.sections.push_back(std::move(s));
            kb.header_vectors.push_back(std::move(v));
        }
        return kb;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ChecksumError, std::string("malformed header: ") + e.what());
    }
}

void save_kb(const KnowledgeBase& kb, const fs::path& path) {
    const auto bytes = serialize(kb);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot move KB into place at " + path.string() + ": " + ec.message());
}

KnowledgeBase load_kb(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open knowledge base " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

}  // namespace coursepilot::kb
