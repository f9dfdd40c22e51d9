#include "coursepilot/embed.hpp"

#include <algorithm>
#include <cmath>

#include "coursepilot/error.hpp"
#include "coursepilot/log.hpp"
#include "coursepilot/text.hpp"

namespace coursepilot::embed {

void EmbedderSpec::validate() const {
    if (provider_kind == EmbedderKind::RemoteHttp && (!endpoint || endpoint->empty())) {
        throw Error(ErrorCode::InvalidConfig, "remote_http embedder requires an endpoint");
    }
    if (dims == 0) throw Error(ErrorCode::InvalidConfig, "embedder dims must be positive");
    if (max_context_tokens == 0) throw Error(ErrorCode::InvalidConfig, "max_context_tokens must be positive");
    if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
}

void to_json(nlohmann::json& j, const EmbedderSpec& spec) {
    j = nlohmann::json{
        {"provider_kind", spec.provider_kind == EmbedderKind::RemoteHttp ? "remote_http" : "reference_hash"},
        {"model_id", spec.model_id},
        {"dims", spec.dims},
        {"max_context_tokens", spec.max_context_tokens},
    };
    if (spec.endpoint) j["endpoint"] = *spec.endpoint;
}

void from_json(const nlohmann::json& j, EmbedderSpec& spec) {
    const auto kind = j.value("provider_kind", std::string("reference_hash"));
    if (kind == "remote_http") {
        spec.provider_kind = EmbedderKind::RemoteHttp;
    } else if (kind == "reference_hash") {
        spec.provider_kind = EmbedderKind::ReferenceHash;
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown embedder provider_kind: " + kind);
    }
    if (j.contains("endpoint") && !j["endpoint"].is_null()) spec.endpoint = j["endpoint"].get<std::string>();
    spec.model_id = j.value("model_id", spec.model_id);
    spec.dims = j.value("dims", spec.dims);
    spec.max_context_tokens = j.value("max_context_tokens", spec.max_context_tokens);
    spec.batch_size = j.value("batch_size", spec.batch_size);
    if (j.contains("retries")) spec.retry.max_retries = j["retries"].get<int>();
    if (j.contains("timeout_ms")) spec.retry.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long>());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimsMismatch,
                    "cosine over " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " dims");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
            throw Error(ErrorCode::PreconditionViolation, "non-finite vector component");
        }
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::DegenerateVector, "cosine of a zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    return cosine_similarity(std::span<const double>(a.values), std::span<const double>(b.values));
}

namespace {

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool is_token_byte(unsigned char c) noexcept {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

void add_token(std::vector<double>& v, std::string_view token, std::uint64_t seed) {
    const auto h = splitmix64(fnv1a(token) ^ seed);
    v[h % v.size()] += (h >> 63) ? -1.0 : 1.0;
}

std::vector<double> reference_raw(std::string_view raw_text, std::size_t dims, std::uint64_t seed) {
    const auto text = text::trim(raw_text);
    if (text.empty()) throw Error(ErrorCode::PreconditionViolation, "cannot embed blank text");
    if (dims == 0) throw Error(ErrorCode::PreconditionViolation, "dims must be positive");

    const auto lowered = text::ascii_lower(text);
    std::vector<double> v(dims, 0.0);
    std::size_t start = 0;
    bool any = false;
    for (std::size_t i = 0; i <= lowered.size(); ++i) {
        if (i < lowered.size() && is_token_byte(static_cast<unsigned char>(lowered[i]))) continue;
        if (i > start) {
            add_token(v, std::string_view(lowered).substr(start, i - start), seed);
            any = true;
        }
        start = i + 1;
    }
    const bool all_zero = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    if (!any || all_zero) {
        // Punctuation-only text, or signed contributions that cancelled out.
        std::fill(v.begin(), v.end(), 0.0);
        add_token(v, lowered, seed);
    }
    return v;
}

void normalize_in_place(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    for (double& x : v) x /= norm;
}

}  // namespace

EmbeddingVector reference_embed(std::string_view text, std::size_t dims, std::uint64_t seed) {
    auto v = reference_raw(text, dims, seed);
    normalize_in_place(v);
    return EmbeddingVector{std::move(v), "reference-hash-v1"};
}

std::vector<std::vector<double>> ReferenceHashProvider::embed_batch(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(reference_raw(t, dims_, kReferenceSeed));
    return out;
}

std::vector<std::vector<double>> HttpEmbeddingProvider::embed_batch(const std::vector<std::string>& texts) {
    const nlohmann::json request{{"model", spec_.model_id}, {"input", texts}};
    const auto response = http::post_json(*spec_.endpoint, "/v1/embeddings", request, spec_.retry);
    if (!response.contains("data") || !response["data"].is_array()) {
        throw Error(ErrorCode::ProviderContractError, "embeddings response lacks a data array");
    }
    std::vector<std::vector<double>> out;
    for (const auto& item : response["data"]) {
        if (!item.contains("embedding") || !item["embedding"].is_array()) {
            throw Error(ErrorCode::ProviderContractError, "embeddings response item lacks an embedding");
        }
        out.push_back(item["embedding"].get<std::vector<double>>());
    }
    return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedderSpec& spec) {
    spec.validate();
    if (spec.provider_kind == EmbedderKind::RemoteHttp) return std::make_unique<HttpEmbeddingProvider>(spec);
    return std::make_unique<ReferenceHashProvider>(spec.dims);
}

Embedder::Embedder(EmbedderSpec spec) : Embedder(spec, make_provider(spec)) {}

Embedder::Embedder(EmbedderSpec spec, std::shared_ptr<EmbeddingProvider> provider)
    : spec_(std::move(spec)), provider_(std::move(provider)) {
    spec_.validate();
}

std::vector<EmbeddingVector> Embedder::embed(const std::vector<std::string>& texts) const {
    std::vector<std::string> prepared;
    prepared.reserve(texts.size());
    const auto max_chars = spec_.max_context_tokens * 4;
    for (const auto& t : texts) {
        if (text::trim(t).empty()) throw Error(ErrorCode::PreconditionViolation, "cannot embed empty text");
        if (text::approx_tokens(t) > spec_.max_context_tokens) {
            log().warn("embedding input of ~{} tokens truncated to {}", text::approx_tokens(t),
                       spec_.max_context_tokens);
            prepared.emplace_back(text::truncate_code_points(t, max_chars));
        } else {
            prepared.push_back(t);
        }
    }

    std::vector<EmbeddingVector> out;
    out.reserve(prepared.size());
    for (std::size_t begin = 0; begin < prepared.size(); begin += spec_.batch_size) {
        const auto end = std::min(prepared.size(), begin + spec_.batch_size);
        const std::vector<std::string> batch(prepared.begin() + begin, prepared.begin() + end);
        auto raw = provider_->embed_batch(batch);
        if (raw.size() != batch.size()) {
            throw Error(ErrorCode::ProviderContractError, "provider returned " + std::to_string(raw.size()) +
                                                              " vectors for " + std::to_string(batch.size()) +
                                                              " inputs");
        }
        for (auto& v : raw) {
            if (v.size() != spec_.dims) {
                throw Error(ErrorCode::ProviderContractError, "provider returned " + std::to_string(v.size()) +
                                                                  " dims, expected " + std::to_string(spec_.dims));
            }
            double sq = 0.0;
            for (double x : v) {
                if (!std::isfinite(x)) throw Error(ErrorCode::ProviderContractError, "non-finite embedding value");
                sq += x * x;
            }
            if (sq == 0.0) throw Error(ErrorCode::ProviderContractError, "provider returned a zero vector");
            normalize_in_place(v);
            out.push_back(EmbeddingVector{std::move(v), spec_.model_id});
        }
    }
    return out;
}

EmbeddingVector Embedder::embed_one(const std::string& text) const {
    return std::move(embed({text}).front());
}

std::vector<EmbeddingVector> embed_texts(const EmbedderSpec& spec, const std::vector<std::string>& texts) {
    return Embedder(spec).embed(texts);
}

}  // namespace coursepilot::embed
